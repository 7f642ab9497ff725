#include "saffu/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace saffu {

namespace {

// Token order for cipher-row assignment: count desc, ties by token id.
std::vector<std::size_t> cipher_order(std::span<const std::uint64_t> counts) {
    std::vector<std::size_t> order(counts.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (counts[a] != counts[b]) return counts[a] > counts[b];
        return a < b;
    });
    return order;
}

std::vector<std::uint64_t> clamped_counts(std::span<const std::uint64_t> counts) {
    std::vector<std::uint64_t> f(counts.begin(), counts.end());
    for (auto& v : f) v = std::max<std::uint64_t>(v, 1);
    return f;
}

Matrix embedding_table(std::size_t n, std::size_t dim, std::span<const std::size_t> order,
                       std::span<const std::uint64_t> counts) {
    const CipherPair cipher = bit_cipher(n, dim);
    Matrix raw(n, dim);
    for (std::size_t rank = 0; rank < n; ++rank) {
        const auto src = cipher.e.row(rank);
        std::copy(src.begin(), src.end(), raw.row(order[rank]).begin());
    }
    return densify(raw, clamped_counts(counts));
}

double priming_of(const CoocAccumulator& acc) {
    double total = 0.0;
    for (double v : acc.f.a) total += v;
    if (acc.count == 0) throw std::runtime_error("empty-input: priming");
    return total / static_cast<double>(acc.count);
}

template <typename Fn>
void for_each_position_of_doc(const TransformerModel& model, std::span<const std::int32_t> doc,
                              std::size_t doc_index, Fn&& fn) {
    const DocLayout layout = build_blocks(doc, model.cfg.block_size);
    std::vector<std::int32_t> block_buf;
    std::vector<std::int32_t> radius_buf;
    Vector prefix_sum;
    Vector doc_x;
    if (model.cfg.doc_model) {
        const auto pad = model.e_block.row(Vocabulary::kPad);
        prefix_sum.assign(pad.begin(), pad.end());
        doc_x.resize(prefix_sum.size());
    }
    for (std::size_t m = 0; m < layout.n_positions(); ++m) {
        block_slice_ids(layout, m, block_buf);
        radius_slice_ids(doc, model.cfg.radius, m, radius_buf);
        Position pos;
        pos.block = ContextSlice{&model.e_block, block_buf, model.block.head};
        pos.radius = ContextSlice{&model.e_radius, radius_buf, model.radius.head};
        if (model.cfg.doc_model) {
            for (std::size_t d = 0; d < doc_x.size(); ++d)
                doc_x[d] = prefix_sum[d] / static_cast<double>(m + 1);
            pos.doc_input = &doc_x;
        }
        pos.target = layout.targets[m];
        pos.doc_index = doc_index;
        pos.pos = m;
        pos.doc = doc;
        fn(pos);
        if (model.cfg.doc_model && m < doc.size())
            axpy(1.0, model.e_block.row(static_cast<std::size_t>(doc[m])), prefix_sum);
    }
}

}  // namespace

std::size_t min_hidden_dim(std::size_t n) {
    std::size_t d = 1;
    while (((std::uint64_t{1} << d) - 1) < n) ++d;
    return d;
}

HiddenTargets hidden_targets(std::size_t n, std::size_t d_hidden,
                             std::span<const std::uint64_t> counts) {
    if (((std::uint64_t{1} << d_hidden) - 1) < n)
        throw std::runtime_error("cipher-capacity-exceeded: hidden dimension too small");
    const CipherPair cipher = bit_cipher(n, d_hidden);
    const auto order = cipher_order(counts);
    HiddenTargets out{Matrix(n, d_hidden), Matrix(n, d_hidden)};
    for (std::size_t rank = 0; rank < n; ++rank) {
        const std::size_t token = order[rank];
        const auto z = cipher.z.row(rank);
        const auto y = cipher.e.row(rank);  // z normalized to unit 1-norm
        std::copy(z.begin(), z.end(), out.z.row(token).begin());
        std::copy(y.begin(), y.end(), out.y.row(token).begin());
    }
    return out;
}

TransformerModel build_model(const ModelConfig& cfg, std::span<const std::uint64_t> counts) {
    if (cfg.n_tokens < 2) throw std::runtime_error("model-config: vocabulary too small");
    if (cfg.block_size < 2 || cfg.radius < 2)
        throw std::runtime_error("model-config: block size and radius must exceed 1");
    if (counts.size() != cfg.n_tokens) throw std::runtime_error("model-config: counts size");
    if (cfg.doc_model && cfg.n_docs == 0)
        throw std::runtime_error("model-config: doc model requires n_docs");

    TransformerModel model;
    model.cfg = cfg;
    if (model.cfg.d_hidden == 0) model.cfg.d_hidden = min_hidden_dim(cfg.n_tokens);

    const auto order = cipher_order(counts);
    model.e_block = embedding_table(cfg.n_tokens, cfg.d_block, order, counts);
    model.e_radius = embedding_table(cfg.n_tokens, cfg.d_radius, order, counts);
    const HiddenTargets ht = hidden_targets(cfg.n_tokens, model.cfg.d_hidden, counts);
    model.z_hidden = ht.z;
    model.y_hidden = ht.y;

    model.block.mode = cfg.block_mode;
    model.block.head = cfg.block_size - 1;  // most recent context position
    model.block.k_w = default_k_w(cfg.block_size);
    model.block.k_u = default_k_u(cfg.block_size);
    model.block.w = Matrix(cfg.block_size, cfg.block_size);
    model.block.u = Matrix(model.block_decoder_rows(), model.cfg.d_hidden);

    model.radius.mode = cfg.radius_mode;
    model.radius.head = cfg.radius - 1;
    model.radius.k_w = default_k_w(cfg.radius);
    model.radius.k_u = default_k_u(cfg.radius);
    model.radius.w = Matrix(cfg.radius, cfg.radius);
    model.radius.u = Matrix(model.radius_decoder_rows(), model.cfg.d_hidden);

    if (cfg.doc_model) model.doc_matrix = Matrix(cfg.d_block, cfg.n_docs);
    model.final_decoder = Matrix(model.concat_dim(), cfg.n_tokens);

    model.c_block = translation_constant(cfg.block_size, cfg.n_tokens);
    model.c_radius = translation_constant(cfg.radius, cfg.n_tokens);
    return model;
}

DocLayout build_blocks(std::span<const std::int32_t> doc, std::size_t block_size) {
    if (block_size < 2) throw std::runtime_error("model-config: block size must exceed 1");
    DocLayout layout;
    layout.block_size = block_size;
    layout.targets.assign(doc.begin(), doc.end());
    layout.targets.push_back(Vocabulary::kEod);

    const std::size_t per_block = block_size - 1;
    const std::size_t n_blocks = (layout.targets.size() + per_block - 1) / per_block;
    layout.block_ids.assign(n_blocks * block_size, Vocabulary::kPad);
    for (std::size_t i = 0; i < n_blocks; ++i) {
        layout.block_ids[i * block_size] = i == 0 ? Vocabulary::kSod : Vocabulary::kFrg;
        for (std::size_t s = 1; s < block_size; ++s) {
            const std::size_t g = i * per_block + (s - 1);
            if (g < doc.size()) layout.block_ids[i * block_size + s] = doc[g];
        }
    }
    layout.block_ids[n_blocks * block_size - 1] = Vocabulary::kEod;
    return layout;
}

void block_slice_ids(const DocLayout& layout, std::size_t m, std::vector<std::int32_t>& out) {
    const std::size_t b = layout.block_size;
    const std::size_t block = layout.block_of(m);
    const std::size_t slot = layout.slot_of(m);
    out.resize(b);
    for (std::size_t s = 0; s < b; ++s)
        out[s] = s < slot ? layout.block_ids[block * b + s] : Vocabulary::kPad;
}

void radius_slice_ids(std::span<const std::int32_t> doc, std::size_t radius, std::size_t m,
                      std::vector<std::int32_t>& out) {
    out.resize(radius);
    for (std::size_t k = 0; k < radius; ++k) {
        const std::int64_t g = static_cast<std::int64_t>(m) - static_cast<std::int64_t>(radius) +
                               static_cast<std::int64_t>(k);
        out[k] = g >= 0 && g < static_cast<std::int64_t>(doc.size())
                     ? doc[static_cast<std::size_t>(g)]
                     : Vocabulary::kPad;
    }
}

Vector doc_model_input(const Matrix& e, std::span<const std::int32_t> prefix_ids,
                       std::int32_t pad_id) {
    Vector x(e.cols);
    const auto pad = e.row(static_cast<std::size_t>(pad_id));
    std::copy(pad.begin(), pad.end(), x.begin());
    for (std::int32_t id : prefix_ids) axpy(1.0, e.row(static_cast<std::size_t>(id)), x);
    const double denom = static_cast<double>(prefix_ids.size() + 1);
    for (double& v : x) v /= denom;
    return x;
}

void visit_positions(const TransformerModel& model, const DocumentStream& docs,
                     std::span<const std::size_t> doc_indices,
                     const std::function<void(const Position&)>& fn) {
    for (std::size_t idx : doc_indices)
        for_each_position_of_doc(model, docs.docs[idx], idx, fn);
}

void visit_batch(const TransformerModel& model, const DocumentStream& docs,
                 std::span<const BatchItem> items,
                 const std::function<void(const Position&)>& fn) {
    std::size_t i = 0;
    while (i < items.size()) {
        const std::size_t doc_idx = items[i].first;
        std::size_t j = i;
        for_each_position_of_doc(model, docs.docs[doc_idx], doc_idx, [&](const Position& pos) {
            while (j < items.size() && items[j].first == doc_idx && items[j].second == pos.pos) {
                fn(pos);
                ++j;
            }
        });
        if (j == i) throw std::runtime_error("batch item position out of range");
        i = j;
    }
}

Vector forward_concat(const TransformerModel& model, const Position& pos) {
    Vector g(model.concat_dim());
    const Vector ob = saffu_forward(pos.block, model.block);
    const Vector orad = saffu_forward(pos.radius, model.radius);
    std::copy(ob.begin(), ob.end(), g.begin());
    std::copy(orad.begin(), orad.end(), g.begin() + static_cast<std::ptrdiff_t>(model.cfg.d_hidden));
    if (model.cfg.doc_model) {
        Vector od(model.cfg.n_docs);
        vec_mat(*pos.doc_input, model.doc_matrix, od);
        softmax_inplace(od);
        std::copy(od.begin(), od.end(),
                  g.begin() + static_cast<std::ptrdiff_t>(2 * model.cfg.d_hidden));
    }
    return g;
}

Vector forward_logits(const TransformerModel& model, const Position& pos) {
    const Vector g = forward_concat(model, pos);
    Vector z(model.cfg.n_tokens);
    vec_mat(g, model.final_decoder, z);
    return z;
}

Vector forward(const TransformerModel& model, const Position& pos) {
    Vector z = forward_logits(model, pos);
    softmax_inplace(z);
    return z;
}

Vector forward_at(const TransformerModel& model, std::span<const std::int32_t> doc, std::size_t m,
                  std::size_t doc_index) {
    Vector out;
    bool found = false;
    for_each_position_of_doc(model, doc, doc_index, [&](const Position& pos) {
        if (pos.pos == m) {
            out = forward(model, pos);
            found = true;
        }
    });
    if (!found) throw std::runtime_error("position out of range");
    return out;
}

Vector next_token_logits(const TransformerModel& model, std::span<const std::int32_t> prefix) {
    Vector out;
    for_each_position_of_doc(model, prefix, 0, [&](const Position& pos) {
        if (pos.pos == prefix.size()) out = forward_logits(model, pos);
    });
    if (out.empty()) throw std::runtime_error("position out of range");
    return out;
}

double document_nll(const TransformerModel& model, std::span<const std::int32_t> doc,
                    std::size_t doc_index, std::size_t* positions) {
    double nll = 0.0;
    std::size_t count = 0;
    for_each_position_of_doc(model, doc, doc_index, [&](const Position& pos) {
        const Vector probs = forward(model, pos);
        nll -= std::log(probs[static_cast<std::size_t>(pos.target)]);
        ++count;
    });
    if (positions) *positions = count;
    return nll;
}

void explicit_fit(TransformerModel& model, const DocumentStream& docs,
                  std::span<const std::size_t> doc_indices, FitMode mode) {
    const std::size_t n_docs = doc_indices.size();
    if (n_docs == 0) throw std::runtime_error("empty-input: explicit_fit");
    const std::size_t shards = default_shards();

    // Fold unigram over prediction targets (tokens plus one <eod> per doc).
    Vector ybar(model.cfg.n_tokens, 0.0);
    std::size_t n_positions = 0;
    for (std::size_t idx : doc_indices) {
        for (std::int32_t t : docs.docs[idx]) ybar[static_cast<std::size_t>(t)] += 1.0;
        ybar[Vocabulary::kEod] += 1.0;
        n_positions += docs.docs[idx].size() + 1;
    }
    for (double& v : ybar) v /= static_cast<double>(n_positions);

    // Pass A: attention matrices from V^ (init) or V (tune) targets.
    Matrix log_e_block, log_e_radius;
    Vector avg_log_block, avg_log_radius;
    if (mode == FitMode::Init) {
        log_e_block = log_embeddings(model.e_block);
        log_e_radius = log_embeddings(model.e_radius);
        avg_log_block.assign(model.cfg.d_block, 0.0);
        avg_log_radius.assign(model.cfg.d_radius, 0.0);
        for (std::size_t n = 0; n < model.cfg.n_tokens; ++n) {
            axpy(ybar[n], log_e_block.row(n), avg_log_block);
            axpy(ybar[n], log_e_radius.row(n), avg_log_radius);
        }
    }

    struct AttnShard {
        CoocAccumulator block, radius;
    };
    std::vector<AttnShard> attn(shards);
    for (auto& s : attn) {
        s.block = CoocAccumulator(model.cfg.block_size, model.cfg.block_size);
        s.radius = CoocAccumulator(model.cfg.radius, model.cfg.radius);
    }
    for_each_shard(n_docs, shards, [&](std::size_t s, std::size_t lo, std::size_t hi) {
        visit_positions(model, docs, doc_indices.subspan(lo, hi - lo), [&](const Position& pos) {
            const Vector qb = quadratic_features(pos.block);
            const Vector qr = quadratic_features(pos.radius);
            Vector vb, vr;
            if (mode == FitMode::Init) {
                vb = init_targets_row(log_e_block, avg_log_block, pos.target, pos.block,
                                      model.c_block);
                vr = init_targets_row(log_e_radius, avg_log_radius, pos.target, pos.radius,
                                      model.c_radius);
            } else {
                const auto y_row = model.y_hidden.row(static_cast<std::size_t>(pos.target));
                vb = variational_targets_row(model.block, pos.block, y_row, model.c_block);
                vr = variational_targets_row(model.radius, pos.radius, y_row, model.c_radius);
            }
            attn[s].block.add(qb, vb);
            attn[s].radius.add(qr, vr);
        });
    });
    for (std::size_t s = 1; s < shards; ++s) {
        attn[0].block.merge(attn[s].block);
        attn[0].radius.merge(attn[s].radius);
    }
    try {
        model.block.w = solve_attention_cooc(attn[0].block.f, model.block.k_w);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("block-attention: ") + e.what());
    }
    try {
        model.radius.w = solve_attention_cooc(attn[0].radius.f, model.radius.k_w);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("radius-attention: ") + e.what());
    }

    // Pass B: SAFFU decoders against hidden codes, plus the document model.
    struct DecShard {
        CoocAccumulator block, radius, doc;
    };
    std::vector<DecShard> dec(shards);
    for (auto& s : dec) {
        s.block = CoocAccumulator(model.block_decoder_rows(), model.cfg.d_hidden);
        s.radius = CoocAccumulator(model.radius_decoder_rows(), model.cfg.d_hidden);
        if (model.cfg.doc_model) s.doc = CoocAccumulator(model.cfg.d_block, model.cfg.n_docs);
    }
    for_each_shard(n_docs, shards, [&](std::size_t s, std::size_t lo, std::size_t hi) {
        visit_positions(model, docs, doc_indices.subspan(lo, hi - lo), [&](const Position& pos) {
            const auto y_row = model.y_hidden.row(static_cast<std::size_t>(pos.target));
            const Vector hb = hidden_state(
                attention_weights(quadratic_features(pos.block), model.block.w), pos.block,
                model.block.mode);
            const Vector hr = hidden_state(
                attention_weights(quadratic_features(pos.radius), model.radius.w), pos.radius,
                model.radius.mode);
            dec[s].block.add(hb, y_row);
            dec[s].radius.add(hr, y_row);
            if (model.cfg.doc_model) dec[s].doc.add_col(*pos.doc_input, pos.doc_index);
        });
    });
    for (std::size_t s = 1; s < shards; ++s) {
        dec[0].block.merge(dec[s].block);
        dec[0].radius.merge(dec[s].radius);
        if (model.cfg.doc_model) dec[0].doc.merge(dec[s].doc);
    }
    try {
        model.block.u = explicit_solve(dec[0].block.f, model.block.k_u, EmptyColumnPolicy::Floor);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("block-decoder: ") + e.what());
    }
    try {
        model.radius.u = explicit_solve(dec[0].radius.f, model.radius.k_u, EmptyColumnPolicy::Floor);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("radius-decoder: ") + e.what());
    }
    if (model.cfg.doc_model) {
        try {
            model.doc_matrix =
                explicit_solve(dec[0].doc.f, priming_of(dec[0].doc), EmptyColumnPolicy::Floor);
        } catch (const std::exception& e) {
            throw std::runtime_error(std::string("document-model: ") + e.what());
        }
    }

    // Pass C: final decoder over concatenated SAFFU (and doc-model) outputs.
    std::vector<CoocAccumulator> fm(shards, CoocAccumulator(model.concat_dim(), model.cfg.n_tokens));
    for_each_shard(n_docs, shards, [&](std::size_t s, std::size_t lo, std::size_t hi) {
        visit_positions(model, docs, doc_indices.subspan(lo, hi - lo), [&](const Position& pos) {
            const Vector g = forward_concat(model, pos);
            fm[s].add_col(g, static_cast<std::size_t>(pos.target));
        });
    });
    for (std::size_t s = 1; s < shards; ++s) fm[0].merge(fm[s]);
    try {
        model.final_decoder =
            explicit_solve(fm[0].f, priming_of(fm[0]), EmptyColumnPolicy::Floor);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("final-decoder: ") + e.what());
    }
}

}  // namespace saffu
