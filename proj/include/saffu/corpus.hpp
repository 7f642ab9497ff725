#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace saffu {

struct MergeRule {
    std::string left;
    std::string right;
    std::string merged() const { return left + right; }
    bool operator==(const MergeRule&) const = default;
};

// Ordered BPE merge rules plus the word-frequency table they were trained on.
struct MergeRules {
    std::vector<MergeRule> rules;
    // (word, count) in descending count order, ties by word; truncated to the
    // max_words most frequent words seen during training.
    std::vector<std::pair<std::string, std::uint64_t>> word_freq;
};

// Token-string <-> id map. Ids are dense in [0, N): the four special tokens
// first, then the 256 single-byte tokens (the unknown-character fallback
// floor), then merged sub-words by descending corpus count.
struct Vocabulary {
    static constexpr std::int32_t kSod = 0;
    static constexpr std::int32_t kFrg = 1;
    static constexpr std::int32_t kPad = 2;
    static constexpr std::int32_t kEod = 3;
    static constexpr std::int32_t kNumSpecials = 4;
    static constexpr std::int32_t kFirstByte = kNumSpecials;  // byte b -> id kFirstByte + b

    std::vector<std::string> tokens;
    std::vector<std::uint64_t> counts;
    std::unordered_map<std::string, std::int32_t> id_of;
    std::vector<MergeRule> merges;  // replayed at tokenization time
    std::size_t covered_words = 0;

    std::size_t size() const { return tokens.size(); }
    bool is_special(std::int32_t id) const { return id >= 0 && id < kNumSpecials; }
    std::int32_t byte_id(unsigned char b) const { return kFirstByte + static_cast<std::int32_t>(b); }
};

// Whitespace-delimited words with ASCII punctuation split off as
// single-character words. Bytes >= 0x80 stay glued to their word.
std::vector<std::string> split_words(std::string_view text);

// Count-based BPE over the max_words most frequent words. Merges apply
// greedily by descending pair count (ties by lexicographic (left, right));
// training halts the first time the best available merge would create a
// token whose count is 1.
MergeRules train_bpe(std::span<const std::string> docs, std::size_t max_words);

// Keeps exactly the sub-word tokens appearing in the tokenizations of the
// cover_top most frequent words (plus specials and the byte floor), assigns
// ids, and counts token occurrences over the whole corpus.
Vocabulary reduce_vocab(const MergeRules& rules, std::span<const std::string> docs,
                        std::size_t cover_top);

std::vector<std::int32_t> tokenize(std::string_view text, const Vocabulary& vocab);
std::string detokenize(std::span<const std::int32_t> ids, const Vocabulary& vocab);

// Ordered documents of token ids.
struct DocumentStream {
    std::vector<std::vector<std::int32_t>> docs;

    std::size_t total_tokens() const {
        std::size_t n = 0;
        for (const auto& d : docs) n += d.size();
        return n;
    }
};

DocumentStream tokenize_documents(std::span<const std::string> doc_texts, const Vocabulary& vocab);

// Contiguous document-aligned slices of ~fold_size tokens; a document is
// never split across folds even when longer than fold_size.
struct Fold {
    std::vector<std::size_t> doc_indices;
    std::size_t tokens = 0;
};

std::vector<Fold> fold_stream(const DocumentStream& docs, std::size_t fold_size);

// One document per file (sorted by filename); blank_line_docs additionally
// splits each file at blank lines.
std::vector<std::string> load_corpus_dir(const std::string& dir, bool blank_line_docs = false);

// Token strings escape to "\xHH" outside printable ASCII so every vocabulary
// serializes as one token per line.
std::string escape_token(std::string_view raw);
std::string unescape_token(std::string_view escaped);

void save_vocabulary(const Vocabulary& vocab, const std::string& vocab_path,
                     const std::string& merges_path);
Vocabulary load_vocabulary(const std::string& vocab_path, const std::string& merges_path);

}  // namespace saffu
