#include "saffu/eval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "saffu/numerics.hpp"
#include "saffu/util.hpp"

namespace saffu {

EvalReport perplexity(const TransformerModel& model, const DocumentStream& docs,
                      std::span<const std::size_t> doc_indices) {
    if (doc_indices.empty()) throw std::runtime_error("empty-input: perplexity");
    struct DocResult {
        double nll = 0.0;
        std::size_t tokens = 0;
    };
    std::vector<DocResult> results(doc_indices.size());
    for_each_shard(doc_indices.size(), default_shards(),
                   [&](std::size_t, std::size_t lo, std::size_t hi) {
                       for (std::size_t i = lo; i < hi; ++i) {
                           const std::size_t d = doc_indices[i];
                           results[i].nll =
                               document_nll(model, docs.docs[d], d, &results[i].tokens);
                       }
                   });

    EvalReport report;
    double total = 0.0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        total += results[i].nll;
        report.tokens += results[i].tokens;
        const double doc_mean = results[i].tokens
                                    ? results[i].nll / static_cast<double>(results[i].tokens)
                                    : 0.0;
        report.per_document.emplace_back(doc_indices[i], std::exp(doc_mean));
    }
    if (report.tokens == 0) throw std::runtime_error("empty-input: perplexity has no positions");
    report.mean_nll = total / static_cast<double>(report.tokens);
    report.perplexity = std::exp(report.mean_nll);
    return report;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["tokens"] = tokens;
    j["mean_nll"] = mean_nll;
    j["perplexity"] = perplexity;
    auto& per_doc = j["per_document"] = nlohmann::json::array();
    for (const auto& [doc, ppl] : per_document)
        per_doc.push_back({{"doc", doc}, {"perplexity", ppl}});
    return j.dump(2);
}

std::size_t sample_index(std::span<const double> probs, double uniform) {
    double cum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        cum += probs[i];
        if (uniform < cum) return i;
    }
    return probs.size() - 1;
}

std::vector<std::int32_t> sample(const TransformerModel& model,
                                 std::span<const std::int32_t> prompt,
                                 std::size_t max_new_tokens, double temperature,
                                 std::uint64_t seed) {
    if (temperature < 0.0) throw std::runtime_error("invalid-temperature");
    DetRng rng(seed);
    std::vector<std::int32_t> seq(prompt.begin(), prompt.end());
    std::vector<std::int32_t> out;
    for (std::size_t step = 0; step < max_new_tokens; ++step) {
        Vector logits = next_token_logits(model, seq);
        std::int32_t next;
        if (temperature < 1e-9) {
            next = static_cast<std::int32_t>(
                std::max_element(logits.begin(), logits.end()) - logits.begin());
        } else {
            for (double& v : logits) v /= temperature;
            softmax_inplace(logits);
            next = static_cast<std::int32_t>(sample_index(logits, rng.uniform()));
        }
        seq.push_back(next);
        out.push_back(next);
        if (next == Vocabulary::kEod) break;
    }
    return out;
}

std::string sample_text(const TransformerModel& model, const Vocabulary& vocab,
                        std::size_t token_budget, double temperature, std::uint64_t seed) {
    std::string text;
    std::size_t generated = 0;
    std::uint64_t segment = 0;
    while (generated < token_budget) {
        text += "<sod>";
        const auto ids = sample(model, {}, token_budget - generated,
                                temperature, seed + 0x9e3779b9ull * ++segment);
        if (ids.empty()) break;
        generated += ids.size();
        text += detokenize(ids, vocab);
    }
    return text;
}

}  // namespace saffu
