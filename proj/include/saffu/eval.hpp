#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saffu/corpus.hpp"
#include "saffu/transformer.hpp"

namespace saffu {

struct EvalReport {
    std::size_t tokens = 0;
    double mean_nll = 0.0;
    double perplexity = 0.0;
    std::vector<std::pair<std::size_t, double>> per_document;  // (doc index, perplexity)

    std::string to_json() const;
};

// Teacher-forced perplexity: exp of the mean per-token negative log
// likelihood. Evaluation is parallel over documents with deterministic
// aggregation and never mutates the model.
EvalReport perplexity(const TransformerModel& model, const DocumentStream& docs,
                      std::span<const std::size_t> doc_indices);

// Autoregressive multinomial sampling: logits are divided by temperature
// before the softmax; temperature -> 0 degenerates to greedy. Stops after
// max_new_tokens or at "<eod>" (which is included in the output).
std::vector<std::int32_t> sample(const TransformerModel& model,
                                 std::span<const std::int32_t> prompt,
                                 std::size_t max_new_tokens, double temperature,
                                 std::uint64_t seed);

// Draws one index from a probability vector (inverse CDF over a seeded
// uniform); exposed so frequency properties can be checked directly.
std::size_t sample_index(std::span<const double> probs, double uniform);

// Training-log style sample: fresh documents ("<sod>" ... "<eod>") generated
// until the token budget runs out, rendered with special markers inline.
std::string sample_text(const TransformerModel& model, const Vocabulary& vocab,
                        std::size_t token_budget, double temperature, std::uint64_t seed);

}  // namespace saffu
