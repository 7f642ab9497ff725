#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saffu/corpus.hpp"
#include "saffu/transformer.hpp"

namespace saffu {

struct TrainConfig {
    // The paper's printed rate reads as 1e-5 / 2.
    double learning_rate = 5e-6;
    std::size_t fold_size = 1000000;
    std::size_t tune_folds = 10;
    std::size_t early_stop_budget = 8;  // cumulative dev-perplexity increases
    std::size_t dev_eval_tokens = 100000;
    std::size_t batch_positions = 256;
    std::size_t max_epochs = 0;  // backprop epoch cap; 0 = run until early stop
    bool freeze_embeddings = true;
    enum class Start { Warm, Cold } start = Start::Warm;
    std::uint64_t seed = 0;  // cold-start init and log sampling
    std::size_t sample_tokens = 16;
};

struct TrainStep {
    std::string label;  // Init-k / Tune-k / Train-k
    double perplexity = 0.0;
    std::string sample;
};

struct TrainLog {
    std::vector<TrainStep> steps;
    std::string to_text() const;  // "<label>\t<ppl, 2 decimals>\t<sample>" lines
};

struct LossReport {
    double total_nll = 0.0;
    std::size_t tokens = 0;
    double mean() const { return tokens ? total_nll / static_cast<double>(tokens) : 0.0; }
};

// Teacher-forced negative log-likelihood over every position of the selected
// documents (sum, with the per-token mean available).
LossReport loss(const TransformerModel& model, const DocumentStream& docs,
                std::span<const std::size_t> doc_indices);

double batch_loss(const TransformerModel& model, const DocumentStream& docs,
                  std::span<const BatchItem> items);

// Gradients of the summed batch loss for every unfrozen matrix.
struct Gradients {
    Matrix w_block, u_block, w_radius, u_radius;
    Matrix final_decoder;
    Matrix doc_matrix;          // sized only when the doc model is on
    Matrix e_block, e_radius;   // sized only when embeddings are unfrozen
    bool with_embeddings = false;
};

Gradients backward(const TransformerModel& model, const DocumentStream& docs,
                   std::span<const BatchItem> items, bool freeze_embeddings = true);

struct AdamState {
    Matrix m, v;
    std::uint64_t t = 0;
};

// Standard Adam update with bias correction.
void adam_step(Matrix& param, const Matrix& grad, AdamState& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// Scaled-Gaussian (std 1/sqrt(fan-in)) init of W/U/M/D_doc for cold starts;
// embeddings stay as built. Deterministic in the seed.
void cold_init(TransformerModel& model, std::uint64_t seed);

// Warm: explicit init on fold 1, explicit tuning over tune_folds folds, then
// Adam on every matrix except frozen embeddings. Cold: random parameter init
// and Adam on all layers. Early stopping after early_stop_budget cumulative
// dev-perplexity increases; the best-dev checkpoint is retained in `model`.
TrainLog train(TransformerModel& model, const DocumentStream& train_docs,
               const DocumentStream& dev_docs, const Vocabulary& vocab, const TrainConfig& cfg);

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t entries_checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    // Optimality-criterion residuals at the current parameters (reported,
    // not asserted: explicit solutions are approximate).
    double decoder_residual_block = 0.0;
    double decoder_residual_radius = 0.0;
    double decoder_residual_final = 0.0;
    double attention_residual_block = 0.0;
    double attention_residual_radius = 0.0;

    double max_rel_err() const;
    std::string to_text() const;
};

// Analytic vs central-finite-difference gradients over the batch, per matrix.
// Matrices larger than max_entries get a deterministic strided sample.
GradCheckReport grad_check(const TransformerModel& model, const DocumentStream& docs,
                           std::span<const BatchItem> items, double fd_step = 1e-5,
                           bool freeze_embeddings = false, std::size_t max_entries = 4096);

}  // namespace saffu
