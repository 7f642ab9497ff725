#include "saffu/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

#include "CLI11.hpp"
#include "saffu/ablation.hpp"
#include "saffu/checkpoint.hpp"
#include "saffu/config.hpp"
#include "saffu/corpus.hpp"
#include "saffu/eval.hpp"
#include "saffu/training.hpp"
#include "saffu/util.hpp"

namespace saffu::cli {

namespace {

namespace fs = std::filesystem;

Aggregation parse_mode(const std::string& s) {
    if (s == "sum") return Aggregation::Sum;
    if (s == "cat") return Aggregation::Cat;
    throw std::runtime_error("unknown aggregation mode: " + s);
}

std::vector<std::size_t> parse_size_list(const std::string& csv) {
    std::vector<std::size_t> out;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(std::stoul(item));
    return out;
}

// Document-aligned train/dev split: dev is the trailing ~fraction of tokens.
void split_train_dev(const DocumentStream& all, double dev_fraction, DocumentStream& train,
                     DocumentStream& dev) {
    const std::size_t total = all.total_tokens();
    const auto budget = static_cast<std::size_t>(static_cast<double>(total) * dev_fraction);
    std::size_t dev_tokens = 0;
    std::size_t cut = all.docs.size();
    while (cut > 1 && dev_tokens < budget) {
        --cut;
        dev_tokens += all.docs[cut].size();
    }
    train.docs.assign(all.docs.begin(), all.docs.begin() + static_cast<std::ptrdiff_t>(cut));
    dev.docs.assign(all.docs.begin() + static_cast<std::ptrdiff_t>(cut), all.docs.end());
}

Vocabulary sibling_vocabulary(const std::string& model_path, std::string vocab_path,
                              std::string merges_path) {
    const fs::path dir = fs::path(model_path).parent_path();
    if (vocab_path.empty()) vocab_path = (dir / "vocab.txt").string();
    if (merges_path.empty()) merges_path = (dir / "merges.txt").string();
    return load_vocabulary(vocab_path, merges_path);
}

std::vector<std::size_t> all_indices(const DocumentStream& docs) {
    std::vector<std::size_t> idx(docs.docs.size());
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

int cmd_tokenize(const std::string& corpus_dir, bool blank_lines, std::size_t max_words,
                 std::size_t cover_top, const std::string& out_dir) {
    const auto docs = load_corpus_dir(corpus_dir, blank_lines);
    const MergeRules rules = train_bpe(docs, max_words);
    const Vocabulary vocab = reduce_vocab(rules, docs, cover_top);
    fs::create_directories(out_dir);
    save_vocabulary(vocab, out_dir + "/vocab.txt", out_dir + "/merges.txt");
    write_manifest(out_dir, {"vocab.txt", "merges.txt"});
    std::cout << "vocabulary: " << vocab.size() << " tokens (" << vocab.merges.size()
              << " merges, covering " << vocab.covered_words << " words)\n";
    return 0;
}

int cmd_cipher(std::size_t n, std::size_t d, const std::string& out_path) {
    const CipherPair pair = bit_cipher(n, d);
    std::string csv = "row,kind";
    for (std::size_t c = 0; c < d; ++c) csv += ",v" + std::to_string(c);
    csv += '\n';
    char buf[32];
    for (std::size_t r = 0; r < n; ++r) {
        csv += std::to_string(r) + ",z";
        for (std::size_t c = 0; c < d; ++c) csv += "," + std::to_string(int(pair.z(r, c)));
        csv += '\n';
        csv += std::to_string(r) + ",e";
        for (std::size_t c = 0; c < d; ++c) {
            std::snprintf(buf, sizeof(buf), ",%.12g", pair.e(r, c));
            csv += buf;
        }
        csv += '\n';
    }
    atomic_write(out_path, csv);
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& mode_flag,
              const std::string& out_flag, long seed_flag) {
    const Config cfg = Config::load(config_path);
    const std::string corpus_dir = cfg.get("corpus", "");
    if (corpus_dir.empty()) throw std::runtime_error("config: missing corpus");
    const std::string out_dir = out_flag.empty() ? cfg.get("out", "out") : out_flag;

    const auto texts = load_corpus_dir(corpus_dir, cfg.get_bool("blank_lines", false));
    const MergeRules rules = train_bpe(texts, cfg.get_size("max_words", 131072));
    const Vocabulary vocab = reduce_vocab(rules, texts, cfg.get_size("cover_top", 4096));
    const DocumentStream all = tokenize_documents(texts, vocab);
    DocumentStream train_docs, dev_docs;
    split_train_dev(all, cfg.get_double("dev_fraction", 0.1), train_docs, dev_docs);

    ModelConfig mc;
    mc.n_tokens = vocab.size();
    mc.block_size = cfg.get_size("block_size", 128);
    mc.radius = cfg.get_size("radius", 8);
    mc.d_block = cfg.get_size("d_block", 128);
    mc.d_radius = cfg.get_size("d_radius", 32);
    mc.d_hidden = cfg.get_size("d_hidden", 0);
    mc.block_mode = parse_mode(cfg.get("block_mode", "sum"));
    mc.radius_mode = parse_mode(cfg.get("radius_mode", "cat"));
    mc.doc_model = cfg.get_bool("doc_model", false);
    mc.n_docs = mc.doc_model ? train_docs.docs.size() : 0;
    TransformerModel model = build_model(mc, vocab.counts);

    TrainConfig tc;
    tc.learning_rate = cfg.get_double("learning_rate", 5e-6);
    tc.fold_size = cfg.get_size("fold_size", 1000000);
    tc.tune_folds = cfg.get_size("tune_folds", 10);
    tc.early_stop_budget = cfg.get_size("early_stop_budget", 8);
    tc.dev_eval_tokens = cfg.get_size("dev_eval_tokens", 100000);
    tc.batch_positions = cfg.get_size("batch_positions", 256);
    tc.max_epochs = cfg.get_size("max_epochs", 0);
    tc.sample_tokens = cfg.get_size("sample_tokens", 16);
    const std::string mode = mode_flag.empty() ? cfg.get("mode", "warm") : mode_flag;
    if (mode == "warm") {
        tc.start = TrainConfig::Start::Warm;
        tc.freeze_embeddings = cfg.get_bool("freeze_embeddings", true);
    } else if (mode == "cold") {
        tc.start = TrainConfig::Start::Cold;
        tc.freeze_embeddings = cfg.get_bool("freeze_embeddings", false);
    } else {
        throw std::runtime_error("unknown mode: " + mode);
    }
    tc.seed = seed_flag >= 0 ? static_cast<std::uint64_t>(seed_flag) : cfg.get_size("seed", 0);

    const TrainLog log = train(model, train_docs, dev_docs, vocab, tc);

    fs::create_directories(out_dir);
    save_checkpoint(model, out_dir + "/model.ckpt");
    save_vocabulary(vocab, out_dir + "/vocab.txt", out_dir + "/merges.txt");
    atomic_write(out_dir + "/trainlog.txt", log.to_text());
    write_manifest(out_dir, {"model.ckpt", "vocab.txt", "merges.txt", "trainlog.txt"});
    std::cout << log.to_text();
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path, bool json,
             const std::string& vocab_path, const std::string& merges_path, bool blank_lines) {
    const TransformerModel model = load_checkpoint(model_path);
    const Vocabulary vocab = sibling_vocabulary(model_path, vocab_path, merges_path);
    std::vector<std::string> texts;
    if (fs::is_directory(data_path)) {
        texts = load_corpus_dir(data_path, blank_lines);
    } else {
        texts.push_back(read_file(data_path));
    }
    const DocumentStream docs = tokenize_documents(texts, vocab);
    const EvalReport report = perplexity(model, docs, all_indices(docs));
    if (json) {
        std::cout << report.to_json() << "\n";
    } else {
        std::printf("tokens %zu  mean_nll %.6f  perplexity %.4f\n", report.tokens,
                    report.mean_nll, report.perplexity);
    }
    return 0;
}

int cmd_sample(const std::string& model_path, const std::string& prompt, std::size_t max_len,
               double temperature, std::uint64_t seed, const std::string& vocab_path,
               const std::string& merges_path) {
    const TransformerModel model = load_checkpoint(model_path);
    const Vocabulary vocab = sibling_vocabulary(model_path, vocab_path, merges_path);
    const auto prompt_ids = tokenize(prompt, vocab);
    const auto ids = sample(model, prompt_ids, max_len, temperature, seed);
    std::cout << prompt << detokenize(ids, vocab) << "\n";
    return 0;
}

int cmd_grad_check(const std::string& model_path, const std::string& data_path,
                   std::size_t positions, bool unfreeze, const std::string& vocab_path,
                   const std::string& merges_path) {
    const TransformerModel model = load_checkpoint(model_path);
    const Vocabulary vocab = sibling_vocabulary(model_path, vocab_path, merges_path);
    std::vector<std::string> texts;
    if (fs::is_directory(data_path)) {
        texts = load_corpus_dir(data_path, false);
    } else {
        texts.push_back(read_file(data_path));
    }
    const DocumentStream docs = tokenize_documents(texts, vocab);
    std::vector<BatchItem> items;
    for (std::size_t d = 0; d < docs.docs.size() && items.size() < positions; ++d)
        for (std::size_t m = 0; m <= docs.docs[d].size() && items.size() < positions; ++m)
            items.emplace_back(d, m);
    const GradCheckReport report = grad_check(model, docs, items, 1e-5, !unfreeze);
    std::cout << report.to_text();
    std::printf("max relative error: %.3e\n", report.max_rel_err());
    return 0;
}

int cmd_ablate(const std::string& corpus_dir, const std::string& out_dir, bool blank_lines,
               std::size_t max_words, std::size_t cover_top, const std::string& r_list,
               const std::string& b_list, const std::string& block_mode,
               const std::string& radius_mode, bool doc_model, std::size_t d_block,
               std::size_t d_radius, std::size_t fold_size, std::size_t parallel, int precision) {
    const auto texts = load_corpus_dir(corpus_dir, blank_lines);
    const MergeRules rules = train_bpe(texts, max_words);
    const Vocabulary vocab = reduce_vocab(rules, texts, cover_top);
    const DocumentStream all = tokenize_documents(texts, vocab);
    DocumentStream train_docs, dev_docs;
    split_train_dev(all, 0.1, train_docs, dev_docs);

    AblationConfig ac;
    if (!r_list.empty()) ac.r_values = parse_size_list(r_list);
    if (!b_list.empty()) ac.b_values = parse_size_list(b_list);
    ac.block_mode = parse_mode(block_mode);
    ac.radius_mode = parse_mode(radius_mode);
    ac.doc_model = doc_model;
    ac.d_block = d_block;
    ac.d_radius = d_radius;
    ac.fold_size = fold_size;
    ac.parallel = parallel;
    ac.precision = precision;

    const AblationGrid grid = ablate(train_docs, dev_docs, vocab.counts, ac);
    fs::create_directories(out_dir);
    atomic_write(out_dir + "/ablation.csv", grid.to_csv(precision));
    save_vocabulary(vocab, out_dir + "/vocab.txt", out_dir + "/merges.txt");
    write_manifest(out_dir, {"ablation.csv", "vocab.txt", "merges.txt"});
    std::cout << grid.to_csv(precision);
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"SAFFU transformer language models via explicit solutions"};
    app.require_subcommand(1);

    // tokenize
    auto* tok = app.add_subcommand("tokenize", "Train BPE and emit vocabulary/merges files");
    std::string tok_corpus, tok_out = "out";
    bool tok_blank = false;
    std::size_t tok_max_words = 131072, tok_cover = 4096;
    tok->add_option("--corpus", tok_corpus, "Corpus directory (one document per file)")->required();
    tok->add_flag("--blank-lines", tok_blank, "Split documents at blank lines");
    tok->add_option("--max-words", tok_max_words, "Word-table truncation for BPE training");
    tok->add_option("--cover-top", tok_cover, "Words whose tokenizations define the vocabulary");
    tok->add_option("--out", tok_out, "Output directory")->required();

    // cipher
    auto* ciph = app.add_subcommand("cipher", "Emit bit-cipher Z and E rows as CSV");
    std::size_t ci_n = 0, ci_d = 0;
    std::string ci_out;
    ciph->add_option("--n", ci_n, "Number of rows")->required();
    ciph->add_option("--d", ci_d, "Bit width")->required();
    ciph->add_option("--out", ci_out, "Output CSV path")->required();

    // train
    auto* tr = app.add_subcommand("train", "Train a model (warm or cold start)");
    std::string tr_config, tr_mode, tr_out;
    long tr_seed = -1;
    tr->add_option("--config", tr_config, "key = value config file")->required();
    tr->add_option("--mode", tr_mode, "warm|cold (overrides config)");
    tr->add_option("--out", tr_out, "Output directory (overrides config)");
    tr->add_option("--seed", tr_seed, "Seed (overrides config)");

    // eval
    auto* ev = app.add_subcommand("eval", "Perplexity of a checkpoint on data");
    std::string ev_model, ev_data, ev_vocab, ev_merges;
    bool ev_json = false, ev_blank = false;
    ev->add_option("--model", ev_model, "Checkpoint path")->required();
    ev->add_option("--data", ev_data, "Text file or directory")->required();
    ev->add_flag("--json", ev_json, "Emit JSON report");
    ev->add_flag("--blank-lines", ev_blank, "Split documents at blank lines");
    ev->add_option("--vocab", ev_vocab, "Vocabulary file (default: next to model)");
    ev->add_option("--merges", ev_merges, "Merges file (default: next to model)");

    // sample
    auto* sa = app.add_subcommand("sample", "Sample text from a checkpoint");
    std::string sa_model, sa_prompt, sa_vocab, sa_merges;
    std::size_t sa_max = 64;
    double sa_temp = 1.0;
    std::uint64_t sa_seed = 0;
    sa->add_option("--model", sa_model, "Checkpoint path")->required();
    sa->add_option("--prompt", sa_prompt, "Prompt text");
    sa->add_option("--max-len", sa_max, "Maximum generated tokens");
    sa->add_option("--temp", sa_temp, "Sampling temperature (0 = greedy)");
    sa->add_option("--seed", sa_seed, "RNG seed");
    sa->add_option("--vocab", sa_vocab, "Vocabulary file (default: next to model)");
    sa->add_option("--merges", sa_merges, "Merges file (default: next to model)");

    // grad-check
    auto* gc = app.add_subcommand("grad-check", "Analytic vs finite-difference gradients");
    std::string gc_model, gc_data, gc_vocab, gc_merges;
    std::size_t gc_positions = 8;
    bool gc_unfreeze = false;
    gc->add_option("--model", gc_model, "Checkpoint path")->required();
    gc->add_option("--data", gc_data, "Text file or directory")->required();
    gc->add_option("--positions", gc_positions, "Batch positions to check");
    gc->add_flag("--unfreeze-embeddings", gc_unfreeze, "Also check embedding gradients");
    gc->add_option("--vocab", gc_vocab, "Vocabulary file (default: next to model)");
    gc->add_option("--merges", gc_merges, "Merges file (default: next to model)");

    // ablate
    auto* ab = app.add_subcommand("ablate", "Explicit-solution grid over (r, b)");
    std::string ab_corpus, ab_out = "out", ab_r, ab_b, ab_bmode = "sum", ab_rmode = "sum";
    bool ab_blank = false, ab_doc = false;
    std::size_t ab_max_words = 131072, ab_cover = 4096, ab_db = 128, ab_dr = 32;
    std::size_t ab_fold = 1000000, ab_parallel = 1;
    int ab_precision = 1;
    ab->add_option("--corpus", ab_corpus, "Corpus directory")->required();
    ab->add_option("--out", ab_out, "Output directory")->required();
    ab->add_flag("--blank-lines", ab_blank, "Split documents at blank lines");
    ab->add_option("--max-words", ab_max_words, "Word-table truncation for BPE training");
    ab->add_option("--cover-top", ab_cover, "Words whose tokenizations define the vocabulary");
    ab->add_option("--r-values", ab_r, "Comma-separated radii (default 2,4,...,128)");
    ab->add_option("--b-values", ab_b, "Comma-separated block sizes (default 2,4,...,128)");
    ab->add_option("--block-mode", ab_bmode, "sum|cat");
    ab->add_option("--radius-mode", ab_rmode, "sum|cat");
    ab->add_flag("--doc-model", ab_doc, "Attach the document model");
    ab->add_option("--d-block", ab_db, "Block embedding dimension");
    ab->add_option("--d-radius", ab_dr, "Radius embedding dimension");
    ab->add_option("--fold-size", ab_fold, "Initialization fold size in tokens");
    ab->add_option("--parallel", ab_parallel, "Concurrent grid cells");
    ab->add_option("--precision", ab_precision, "CSV decimal places");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (tok->parsed())
            return cmd_tokenize(tok_corpus, tok_blank, tok_max_words, tok_cover, tok_out);
        if (ciph->parsed()) return cmd_cipher(ci_n, ci_d, ci_out);
        if (tr->parsed()) return cmd_train(tr_config, tr_mode, tr_out, tr_seed);
        if (ev->parsed())
            return cmd_eval(ev_model, ev_data, ev_json, ev_vocab, ev_merges, ev_blank);
        if (sa->parsed())
            return cmd_sample(sa_model, sa_prompt, sa_max, sa_temp, sa_seed, sa_vocab, sa_merges);
        if (gc->parsed())
            return cmd_grad_check(gc_model, gc_data, gc_positions, gc_unfreeze, gc_vocab,
                                  gc_merges);
        if (ab->parsed())
            return cmd_ablate(ab_corpus, ab_out, ab_blank, ab_max_words, ab_cover, ab_r, ab_b,
                              ab_bmode, ab_rmode, ab_doc, ab_db, ab_dr, ab_fold, ab_parallel,
                              ab_precision);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}

}  // namespace saffu::cli
