#include "saffu/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>

#include "saffu/util.hpp"

namespace saffu {

namespace {

bool is_space_byte(unsigned char c) { return std::isspace(c) != 0; }
bool is_punct_byte(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

std::string pair_key(const std::string& left, const std::string& right) {
    std::string key;
    key.reserve(left.size() + right.size() + 1);
    key += static_cast<char>(left.size() & 0xff);
    key += static_cast<char>((left.size() >> 8) & 0xff);
    key += left;
    key += right;
    return key;
}

// Word frequencies in (count desc, word asc) order.
std::vector<std::pair<std::string, std::uint64_t>> word_table(std::span<const std::string> docs) {
    std::unordered_map<std::string, std::uint64_t> freq;
    for (const auto& doc : docs)
        for (auto& w : split_words(doc)) ++freq[std::move(w)];
    std::vector<std::pair<std::string, std::uint64_t>> table(freq.begin(), freq.end());
    std::sort(table.begin(), table.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return table;
}

std::vector<std::string> word_to_bytes(const std::string& word) {
    std::vector<std::string> symbols;
    symbols.reserve(word.size());
    for (char c : word) symbols.emplace_back(1, c);
    return symbols;
}

// One greedy left-to-right pass merging every adjacent (left, right).
void apply_rule(std::vector<std::string>& symbols, const MergeRule& rule) {
    std::size_t out = 0;
    for (std::size_t i = 0; i < symbols.size();) {
        if (i + 1 < symbols.size() && symbols[i] == rule.left && symbols[i + 1] == rule.right) {
            symbols[out] = rule.left + rule.right;
            i += 2;
        } else {
            if (out != i) symbols[out] = std::move(symbols[i]);
            i += 1;
        }
        ++out;
    }
    symbols.resize(out);
}

// Applies merge rules in rank order; picking the lowest-rank pair present is
// equivalent because a rule's parts can only be produced by earlier rules.
std::vector<std::string> replay_word(const std::string& word,
                                     const std::vector<MergeRule>& rules,
                                     const std::unordered_map<std::string, std::size_t>& rank) {
    std::vector<std::string> symbols = word_to_bytes(word);
    while (symbols.size() > 1) {
        std::size_t best_rank = rules.size();
        for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
            auto it = rank.find(pair_key(symbols[i], symbols[i + 1]));
            if (it != rank.end() && it->second < best_rank) best_rank = it->second;
        }
        if (best_rank == rules.size()) break;
        apply_rule(symbols, rules[best_rank]);
    }
    return symbols;
}

std::unordered_map<std::string, std::size_t> rule_ranks(const std::vector<MergeRule>& rules) {
    std::unordered_map<std::string, std::size_t> rank;
    rank.reserve(rules.size());
    for (std::size_t i = 0; i < rules.size(); ++i)
        rank.emplace(pair_key(rules[i].left, rules[i].right), i);
    return rank;
}

// Shared per-corpus memo so each distinct word replays its merges once.
class WordTokenizer {
  public:
    explicit WordTokenizer(const Vocabulary& vocab)
        : vocab_(vocab), ranks_(rule_ranks(vocab.merges)) {}

    const std::vector<std::int32_t>& ids_for(const std::string& word) {
        auto it = memo_.find(word);
        if (it != memo_.end()) return it->second;
        std::vector<std::int32_t> ids;
        for (const auto& sym : replay_word(word, vocab_.merges, ranks_)) {
            auto vit = vocab_.id_of.find(sym);
            if (vit != vocab_.id_of.end()) {
                ids.push_back(vit->second);
            } else {
                // Sub-word dropped by vocabulary reduction: fall back to bytes.
                for (unsigned char b : sym) ids.push_back(vocab_.byte_id(b));
            }
        }
        return memo_.emplace(word, std::move(ids)).first->second;
    }

  private:
    const Vocabulary& vocab_;
    std::unordered_map<std::string, std::size_t> ranks_;
    std::unordered_map<std::string, std::vector<std::int32_t>> memo_;
};

void tokenize_into(std::string_view text, WordTokenizer& wt, std::vector<std::int32_t>& out) {
    std::size_t i = 0;
    const std::size_t n = text.size();
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            const auto& ids = wt.ids_for(word);
            out.insert(out.end(), ids.begin(), ids.end());
            word.clear();
        }
    };
    while (i < n) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (is_space_byte(c)) {
            flush();
        } else if (is_punct_byte(c)) {
            flush();
            word.assign(1, static_cast<char>(c));
            flush();
        } else {
            word.push_back(static_cast<char>(c));
        }
        ++i;
    }
    flush();
}

}  // namespace

std::vector<std::string> split_words(std::string_view text) {
    std::vector<std::string> words;
    std::string word;
    for (char ch : text) {
        const unsigned char c = static_cast<unsigned char>(ch);
        if (is_space_byte(c)) {
            if (!word.empty()) words.push_back(std::exchange(word, {}));
        } else if (is_punct_byte(c)) {
            if (!word.empty()) words.push_back(std::exchange(word, {}));
            words.emplace_back(1, ch);
        } else {
            word.push_back(ch);
        }
    }
    if (!word.empty()) words.push_back(std::move(word));
    return words;
}

MergeRules train_bpe(std::span<const std::string> docs, std::size_t max_words) {
    if (max_words < 1) throw std::runtime_error("invalid-max-words");
    MergeRules out;
    out.word_freq = word_table(docs);
    if (out.word_freq.empty()) throw std::runtime_error("empty-corpus");
    if (out.word_freq.size() > max_words) out.word_freq.resize(max_words);

    // Symbols are interned by string so rule replay by string is exact.
    std::vector<std::string> symtab;
    std::unordered_map<std::string, std::int32_t> symid;
    auto intern = [&](const std::string& s) {
        auto it = symid.find(s);
        if (it != symid.end()) return it->second;
        const std::int32_t id = static_cast<std::int32_t>(symtab.size());
        symtab.push_back(s);
        symid.emplace(s, id);
        return id;
    };

    const std::size_t n_words = out.word_freq.size();
    std::vector<std::vector<std::int32_t>> words(n_words);
    std::vector<std::uint64_t> freq(n_words);
    for (std::size_t w = 0; w < n_words; ++w) {
        freq[w] = out.word_freq[w].second;
        for (char c : out.word_freq[w].first) words[w].push_back(intern(std::string(1, c)));
    }

    auto key_of = [](std::int32_t a, std::int32_t b) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
               static_cast<std::uint32_t>(b);
    };
    std::unordered_map<std::uint64_t, std::uint64_t> pair_count;
    std::unordered_map<std::uint64_t, std::set<std::size_t>> pair_words;

    // Pair occurrences count non-overlapping, greedy left-to-right, so the
    // best pair's count equals the count the merged token would have.
    auto scan_word = [&](std::size_t w, std::int64_t sign) {
        const auto& s = words[w];
        std::unordered_map<std::uint64_t, std::size_t> next_free;
        for (std::size_t i = 0; i + 1 < s.size(); ++i) {
            const std::uint64_t k = key_of(s[i], s[i + 1]);
            auto [it, fresh] = next_free.try_emplace(k, 0);
            if (!fresh && it->second > i) continue;  // overlaps the previous occurrence
            it->second = i + 2;
            if (sign > 0) {
                pair_count[k] += freq[w];
                pair_words[k].insert(w);
            } else {
                pair_count[k] -= freq[w];
                pair_words[k].erase(w);
            }
        }
    };
    for (std::size_t w = 0; w < n_words; ++w) scan_word(w, +1);

    struct HeapEntry {
        std::uint64_t count;
        std::string left, right;
        std::uint64_t key;
        bool operator<(const HeapEntry& o) const {
            if (count != o.count) return count < o.count;
            if (left != o.left) return left > o.left;
            return right > o.right;
        }
    };
    std::priority_queue<HeapEntry> heap;
    auto push_pair = [&](std::uint64_t k, std::uint64_t c) {
        if (c > 0)
            heap.push({c, symtab[static_cast<std::int32_t>(k >> 32)],
                       symtab[static_cast<std::int32_t>(k & 0xffffffff)], k});
    };
    for (const auto& [k, c] : pair_count) push_pair(k, c);

    while (!heap.empty()) {
        HeapEntry top = heap.top();
        heap.pop();
        auto it = pair_count.find(top.key);
        if (it == pair_count.end() || it->second != top.count) continue;  // stale
        if (top.count <= 1) break;  // the merged token would have count 1

        const std::int32_t left_id = static_cast<std::int32_t>(top.key >> 32);
        const std::int32_t right_id = static_cast<std::int32_t>(top.key & 0xffffffff);
        MergeRule rule{symtab[left_id], symtab[right_id]};
        out.rules.push_back(rule);
        const std::int32_t merged_id = intern(rule.merged());

        const std::set<std::size_t> affected = pair_words[top.key];
        std::set<std::uint64_t> touched;
        for (std::size_t w : affected) {
            auto& s = words[w];
            for (std::size_t i = 0; i + 1 < s.size(); ++i) touched.insert(key_of(s[i], s[i + 1]));
            scan_word(w, -1);
            std::size_t o = 0;
            for (std::size_t i = 0; i < s.size();) {
                if (i + 1 < s.size() && s[i] == left_id && s[i + 1] == right_id) {
                    s[o++] = merged_id;
                    i += 2;
                } else {
                    s[o++] = s[i++];
                }
            }
            s.resize(o);
            scan_word(w, +1);
            for (std::size_t i = 0; i + 1 < s.size(); ++i) touched.insert(key_of(s[i], s[i + 1]));
        }
        for (std::uint64_t k : touched) {
            auto pit = pair_count.find(k);
            if (pit != pair_count.end() && pit->second > 0)
                push_pair(k, pit->second);
            else if (pit != pair_count.end()) {
                pair_count.erase(pit);
                pair_words.erase(k);
            }
        }
    }
    return out;
}

Vocabulary reduce_vocab(const MergeRules& rules, std::span<const std::string> docs,
                        std::size_t cover_top) {
    auto table = word_table(docs);
    if (table.empty()) throw std::runtime_error("empty-corpus");
    cover_top = std::min(cover_top, table.size());

    const auto ranks = rule_ranks(rules.rules);
    std::set<std::string> kept;
    for (std::size_t w = 0; w < cover_top; ++w)
        for (auto& sym : replay_word(table[w].first, rules.rules, ranks))
            if (sym.size() > 1) kept.insert(std::move(sym));

    auto assemble = [&](const std::vector<std::string>& subwords) {
        Vocabulary v;
        v.merges = rules.rules;
        v.covered_words = cover_top;
        v.tokens = {"<sod>", "<frg>", "<pad>", "<eod>"};
        for (int b = 0; b < 256; ++b) v.tokens.emplace_back(1, static_cast<char>(b));
        v.tokens.insert(v.tokens.end(), subwords.begin(), subwords.end());
        for (std::size_t id = 0; id < v.tokens.size(); ++id)
            v.id_of.emplace(v.tokens[id], static_cast<std::int32_t>(id));
        return v;
    };

    std::vector<std::string> kept_list(kept.begin(), kept.end());
    Vocabulary provisional = assemble(kept_list);
    std::vector<std::uint64_t> occur(provisional.size(), 0);
    {
        WordTokenizer wt(provisional);
        for (const auto& [word, count] : table)
            for (std::int32_t id : wt.ids_for(word)) occur[static_cast<std::size_t>(id)] += count;
    }

    // Final id order: specials, bytes, then sub-words by (count desc, string asc).
    std::sort(kept_list.begin(), kept_list.end(), [&](const std::string& a, const std::string& b) {
        const std::uint64_t ca = occur[static_cast<std::size_t>(provisional.id_of.at(a))];
        const std::uint64_t cb = occur[static_cast<std::size_t>(provisional.id_of.at(b))];
        if (ca != cb) return ca > cb;
        return a < b;
    });
    Vocabulary vocab = assemble(kept_list);
    vocab.counts.resize(vocab.size());
    for (std::size_t id = 0; id < vocab.size(); ++id)
        vocab.counts[id] = occur[static_cast<std::size_t>(provisional.id_of.at(vocab.tokens[id]))];
    return vocab;
}

std::vector<std::int32_t> tokenize(std::string_view text, const Vocabulary& vocab) {
    WordTokenizer wt(vocab);
    std::vector<std::int32_t> out;
    tokenize_into(text, wt, out);
    return out;
}

std::string detokenize(std::span<const std::int32_t> ids, const Vocabulary& vocab) {
    std::string out;
    for (std::int32_t id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab.size())
            throw std::runtime_error("unknown-token-id: " + std::to_string(id));
        out += vocab.tokens[static_cast<std::size_t>(id)];
    }
    return out;
}

DocumentStream tokenize_documents(std::span<const std::string> doc_texts, const Vocabulary& vocab) {
    DocumentStream stream;
    stream.docs.reserve(doc_texts.size());
    WordTokenizer wt(vocab);
    for (const auto& text : doc_texts) {
        std::vector<std::int32_t> ids;
        tokenize_into(text, wt, ids);
        stream.docs.push_back(std::move(ids));
    }
    return stream;
}

std::vector<Fold> fold_stream(const DocumentStream& docs, std::size_t fold_size) {
    if (fold_size < 1) throw std::runtime_error("invalid-fold-size");
    std::vector<Fold> folds;
    Fold cur;
    for (std::size_t d = 0; d < docs.docs.size(); ++d) {
        cur.doc_indices.push_back(d);
        cur.tokens += docs.docs[d].size();
        if (cur.tokens >= fold_size) {
            folds.push_back(std::move(cur));
            cur = Fold{};
        }
    }
    if (!cur.doc_indices.empty()) folds.push_back(std::move(cur));
    return folds;
}

std::vector<std::string> load_corpus_dir(const std::string& dir, bool blank_line_docs) {
    namespace fs = std::filesystem;
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file()) paths.push_back(entry.path());
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw std::runtime_error("empty-corpus: no files in " + dir);

    std::vector<std::string> docs;
    for (const auto& p : paths) {
        std::string text = read_file(p.string());
        if (!blank_line_docs) {
            docs.push_back(std::move(text));
            continue;
        }
        std::string cur;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                if (!cur.empty()) docs.push_back(std::exchange(cur, {}));
            } else {
                cur += line;
                cur += '\n';
            }
        }
        if (!cur.empty()) docs.push_back(std::move(cur));
    }
    return docs;
}

std::string escape_token(std::string_view raw) {
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned char c : raw) {
        if (c == '\\') {
            out += "\\\\";
        } else if (c >= 0x21 && c <= 0x7e) {
            out += static_cast<char>(c);
        } else {
            out += "\\x";
            out += hex[c >> 4];
            out += hex[c & 0xf];
        }
    }
    return out;
}

std::string unescape_token(std::string_view escaped) {
    auto hexval = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        return -1;
    };
    std::string out;
    for (std::size_t i = 0; i < escaped.size();) {
        if (escaped[i] == '\\' && i + 1 < escaped.size()) {
            if (escaped[i + 1] == '\\') {
                out += '\\';
                i += 2;
                continue;
            }
            if (escaped[i + 1] == 'x' && i + 3 < escaped.size()) {
                const int hi = hexval(escaped[i + 2]);
                const int lo = hexval(escaped[i + 3]);
                if (hi >= 0 && lo >= 0) {
                    out += static_cast<char>((hi << 4) | lo);
                    i += 4;
                    continue;
                }
            }
        }
        out += escaped[i++];
    }
    return out;
}

void save_vocabulary(const Vocabulary& vocab, const std::string& vocab_path,
                     const std::string& merges_path) {
    std::string vtext;
    for (std::size_t id = 0; id < vocab.size(); ++id) {
        vtext += escape_token(vocab.tokens[id]);
        vtext += '\t';
        vtext += std::to_string(id < vocab.counts.size() ? vocab.counts[id] : 0);
        vtext += '\n';
    }
    atomic_write(vocab_path, vtext);

    std::string mtext;
    for (const auto& rule : vocab.merges) {
        mtext += escape_token(rule.left);
        mtext += '\t';
        mtext += escape_token(rule.right);
        mtext += '\n';
    }
    atomic_write(merges_path, mtext);
}

Vocabulary load_vocabulary(const std::string& vocab_path, const std::string& merges_path) {
    Vocabulary vocab;
    {
        std::ifstream in(vocab_path);
        if (!in) throw std::runtime_error("cannot open " + vocab_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw std::runtime_error("bad vocab line: " + line);
            vocab.tokens.push_back(unescape_token(std::string_view(line).substr(0, tab)));
            vocab.counts.push_back(std::stoull(line.substr(tab + 1)));
        }
    }
    for (std::size_t id = 0; id < vocab.tokens.size(); ++id)
        vocab.id_of.emplace(vocab.tokens[id], static_cast<std::int32_t>(id));
    {
        std::ifstream in(merges_path);
        if (!in) throw std::runtime_error("cannot open " + merges_path);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            const auto tab = line.find('\t');
            if (tab == std::string::npos) throw std::runtime_error("bad merges line: " + line);
            vocab.merges.push_back(MergeRule{unescape_token(std::string_view(line).substr(0, tab)),
                                             unescape_token(std::string_view(line).substr(tab + 1))});
        }
    }
    return vocab;
}

}  // namespace saffu
