#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "saffu/cipher.hpp"
#include "saffu/corpus.hpp"
#include "saffu/saffu.hpp"

namespace saffu {

struct ModelConfig {
    std::size_t n_tokens = 0;   // N
    std::size_t block_size = 128;  // b
    std::size_t radius = 8;        // r
    std::size_t d_block = 128;
    std::size_t d_radius = 32;
    std::size_t d_hidden = 0;  // 0 -> smallest D with 2^D - 1 >= N
    Aggregation block_mode = Aggregation::Sum;
    Aggregation radius_mode = Aggregation::Cat;
    bool doc_model = false;
    std::size_t n_docs = 0;  // document count the doc model predicts over
};

// Block SAFFU + radius SAFFU + optional document model + final decoder, with
// bit-cipher embedding tables and hidden-target codes.
struct TransformerModel {
    ModelConfig cfg;
    Matrix e_block;   // N x D_b, densified
    Matrix e_radius;  // N x D_r, densified
    Matrix z_hidden;  // N x D_H raw bit codes
    Matrix y_hidden;  // N x D_H codes renormalized to unit 1-norm
    SaffuParams block;
    SaffuParams radius;
    Matrix doc_matrix;     // D_b x n_docs when doc_model
    Matrix final_decoder;  // concat_dim() x N
    double c_block = 0.0;
    double c_radius = 0.0;

    std::size_t concat_dim() const {
        return 2 * cfg.d_hidden + (cfg.doc_model ? cfg.n_docs : 0);
    }
    std::size_t block_decoder_rows() const {
        return cfg.d_block * (cfg.block_mode == Aggregation::Cat ? cfg.block_size : 1);
    }
    std::size_t radius_decoder_rows() const {
        return cfg.d_radius * (cfg.radius_mode == Aggregation::Cat ? cfg.radius : 1);
    }
};

std::size_t min_hidden_dim(std::size_t n);

// Bit-cipher hidden targets: raw codes Z and their unit-1-norm rows.
struct HiddenTargets {
    Matrix z;
    Matrix y;
};
HiddenTargets hidden_targets(std::size_t n, std::size_t d_hidden,
                             std::span<const std::uint64_t> counts);

// Builds embedding tables (cipher order: count desc, ties by id; densified),
// hidden targets, and zero parameter matrices.
TransformerModel build_model(const ModelConfig& cfg, std::span<const std::uint64_t> counts);

// Block layout for one document: targets are the document's tokens plus a
// final <eod>; block i holds targets i(b-1)..(i+1)(b-1)-1 in slots 1..b-1
// (slot 0 is <sod> for block 0, <frg> after), trailing slots are <pad> and
// the final slot of the last block is <eod>.
struct DocLayout {
    std::size_t block_size = 0;
    std::vector<std::int32_t> targets;    // tokens + <eod>
    std::vector<std::int32_t> block_ids;  // n_blocks * block_size, row-major

    std::size_t n_positions() const { return targets.size(); }
    std::size_t n_blocks() const { return block_ids.size() / block_size; }
    std::size_t block_of(std::size_t m) const { return m / (block_size - 1); }
    std::size_t slot_of(std::size_t m) const { return 1 + m % (block_size - 1); }
};

DocLayout build_blocks(std::span<const std::int32_t> doc, std::size_t block_size);

// Causally masked block context for target m: slots at or beyond the target's
// slot are replaced by <pad>.
void block_slice_ids(const DocLayout& layout, std::size_t m, std::vector<std::int32_t>& out);

// The r tokens preceding target m, left-padded with <pad>.
void radius_slice_ids(std::span<const std::int32_t> doc, std::size_t radius, std::size_t m,
                      std::vector<std::int32_t>& out);

// Document-model input: pad row plus all preceding embeddings, averaged.
Vector doc_model_input(const Matrix& e, std::span<const std::int32_t> prefix_ids,
                       std::int32_t pad_id);

// One prediction position with its contexts assembled.
struct Position {
    ContextSlice block;
    ContextSlice radius;
    const Vector* doc_input = nullptr;  // null when the doc model is off
    std::int32_t target = 0;
    std::size_t doc_index = 0;
    std::size_t pos = 0;                     // 0-based position within the document
    std::span<const std::int32_t> doc = {};  // the raw document tokens
};

// Visits every prediction position of the selected documents in order.
void visit_positions(const TransformerModel& model, const DocumentStream& docs,
                     std::span<const std::size_t> doc_indices,
                     const std::function<void(const Position&)>& fn);

// A batch of prediction instances as (document index, position) pairs.
using BatchItem = std::pair<std::size_t, std::size_t>;

// Visits exactly the listed instances; items must be sorted by (doc, pos).
void visit_batch(const TransformerModel& model, const DocumentStream& docs,
                 std::span<const BatchItem> items,
                 const std::function<void(const Position&)>& fn);

Vector forward_concat(const TransformerModel& model, const Position& pos);  // encoder output
Vector forward_logits(const TransformerModel& model, const Position& pos);
Vector forward(const TransformerModel& model, const Position& pos);  // probs over N

// Convenience single-position forward; m may equal doc.size() (the <eod>
// prediction slot).
Vector forward_at(const TransformerModel& model, std::span<const std::int32_t> doc,
                  std::size_t m, std::size_t doc_index = 0);

// Logits for the token following the given prefix (position m = prefix size).
Vector next_token_logits(const TransformerModel& model, std::span<const std::int32_t> prefix);

// Sum of -ln p(target) over every position of one document.
double document_nll(const TransformerModel& model, std::span<const std::int32_t> doc,
                    std::size_t doc_index, std::size_t* positions = nullptr);

// Bottom-up explicit-solution pass over the given documents: attention
// matrices from V^ (init) or V (tune) targets, then SAFFU decoders against
// the hidden codes, then the document model and final decoder.
enum class FitMode { Init, Tune };
void explicit_fit(TransformerModel& model, const DocumentStream& docs,
                  std::span<const std::size_t> doc_indices, FitMode mode);

}  // namespace saffu
