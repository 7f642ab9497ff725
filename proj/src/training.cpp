#include "saffu/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "saffu/eval.hpp"
#include "saffu/util.hpp"

namespace saffu {

namespace {

// Forward caches for one SAFFU evaluated at one position.
struct SaffuCache {
    Vector q;    // quadratic features
    Vector phi;  // softmax(q W)
    Vector a;    // -ln phi
    Vector h;    // aggregated hidden state
    Vector out;  // softmax(h U)
};

SaffuCache saffu_run(const ContextSlice& slice, const SaffuParams& p) {
    SaffuCache c;
    c.q = quadratic_features(slice);
    c.phi.assign(p.w.cols, 0.0);
    for (std::size_t j = 0; j < p.w.rows; ++j) axpy(c.q[j], p.w.row(j), c.phi);
    softmax_inplace(c.phi);
    c.a.resize(c.phi.size());
    for (std::size_t k = 0; k < c.a.size(); ++k) c.a[k] = -std::log(c.phi[k]);
    c.h = hidden_state(c.a, slice, p.mode);
    c.out.resize(p.u.cols);
    vec_mat(c.h, p.u, c.out);
    softmax_inplace(c.out);
    return c;
}

// d(loss)/d(z) for out = softmax(z) given d(loss)/d(out).
Vector softmax_vjp(std::span<const double> out, std::span<const double> dout) {
    const double t = dot(out, dout);
    Vector dz(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) dz[i] = out[i] * (dout[i] - t);
    return dz;
}

// Chains d(loss)/d(saffu output) down to W, U and (optionally) the embedding
// table, mirroring the hidden-state partials of the attention layer.
void saffu_backward(const ContextSlice& slice, const SaffuParams& p, const SaffuCache& c,
                    std::span<const double> dout, Matrix& gw, Matrix& gu, Matrix* ge) {
    const std::size_t k_ctx = slice.size();
    const std::size_t d = slice.dim();

    const Vector dz = softmax_vjp(c.out, dout);
    add_outer(gu, 1.0, c.h, dz);
    Vector dh(p.u.rows);
    mat_vec(p.u, dz, dh);

    Vector da(k_ctx);
    for (std::size_t k = 0; k < k_ctx; ++k) {
        const auto seg = p.mode == Aggregation::Cat
                             ? std::span<const double>(dh).subspan(k * d, d)
                             : std::span<const double>(dh);
        da[k] = dot(seg, slice.row(k));
    }
    double sum_da = 0.0;
    for (double v : da) sum_da += v;

    // A = -ln softmax(s): dL/ds_l = phi_l * sum_k dA_k - dA_l
    Vector ds(k_ctx);
    for (std::size_t l = 0; l < k_ctx; ++l) ds[l] = c.phi[l] * sum_da - da[l];
    add_outer(gw, 1.0, c.q, ds);

    if (!ge) return;
    Vector dq(k_ctx);
    mat_vec(p.w, ds, dq);
    const auto xh = slice.row(slice.head);
    Vector dx(d);
    Vector dxh_extra(d, 0.0);
    for (std::size_t k = 0; k < k_ctx; ++k) {
        const auto seg = p.mode == Aggregation::Cat
                             ? std::span<const double>(dh).subspan(k * d, d)
                             : std::span<const double>(dh);
        for (std::size_t i = 0; i < d; ++i) dx[i] = c.a[k] * seg[i] + dq[k] * xh[i];
        axpy(1.0, dx, ge->row(static_cast<std::size_t>(slice.ids[k])));
        axpy(dq[k], slice.row(k), dxh_extra);
    }
    axpy(1.0, dxh_extra, ge->row(static_cast<std::size_t>(slice.ids[slice.head])));
}

Gradients make_gradients(const TransformerModel& model, bool with_embeddings) {
    Gradients g;
    g.w_block = Matrix(model.block.w.rows, model.block.w.cols);
    g.u_block = Matrix(model.block.u.rows, model.block.u.cols);
    g.w_radius = Matrix(model.radius.w.rows, model.radius.w.cols);
    g.u_radius = Matrix(model.radius.u.rows, model.radius.u.cols);
    g.final_decoder = Matrix(model.final_decoder.rows, model.final_decoder.cols);
    if (model.cfg.doc_model) g.doc_matrix = Matrix(model.doc_matrix.rows, model.doc_matrix.cols);
    if (with_embeddings) {
        g.e_block = Matrix(model.e_block.rows, model.e_block.cols);
        g.e_radius = Matrix(model.e_radius.rows, model.e_radius.cols);
    }
    g.with_embeddings = with_embeddings;
    return g;
}

void merge_gradients(Gradients& into, const Gradients& from) {
    auto add = [](Matrix& a, const Matrix& b) {
        for (std::size_t i = 0; i < a.a.size(); ++i) a.a[i] += b.a[i];
    };
    add(into.w_block, from.w_block);
    add(into.u_block, from.u_block);
    add(into.w_radius, from.w_radius);
    add(into.u_radius, from.u_radius);
    add(into.final_decoder, from.final_decoder);
    if (!into.doc_matrix.empty()) add(into.doc_matrix, from.doc_matrix);
    if (into.with_embeddings) {
        add(into.e_block, from.e_block);
        add(into.e_radius, from.e_radius);
    }
}

void backward_position(const TransformerModel& model, const Position& pos, Gradients& g) {
    const std::size_t d_h = model.cfg.d_hidden;
    const SaffuCache cb = saffu_run(pos.block, model.block);
    const SaffuCache cr = saffu_run(pos.radius, model.radius);

    Vector concat(model.concat_dim());
    std::copy(cb.out.begin(), cb.out.end(), concat.begin());
    std::copy(cr.out.begin(), cr.out.end(), concat.begin() + static_cast<std::ptrdiff_t>(d_h));
    Vector od;
    if (model.cfg.doc_model) {
        od.resize(model.cfg.n_docs);
        vec_mat(*pos.doc_input, model.doc_matrix, od);
        softmax_inplace(od);
        std::copy(od.begin(), od.end(), concat.begin() + static_cast<std::ptrdiff_t>(2 * d_h));
    }

    Vector probs(model.cfg.n_tokens);
    vec_mat(concat, model.final_decoder, probs);
    softmax_inplace(probs);
    probs[static_cast<std::size_t>(pos.target)] -= 1.0;  // dL/dz = p - y

    add_outer(g.final_decoder, 1.0, concat, probs);
    Vector dconcat(concat.size());
    mat_vec(model.final_decoder, probs, dconcat);

    const std::span<const double> dcat(dconcat);
    saffu_backward(pos.block, model.block, cb, dcat.subspan(0, d_h), g.w_block, g.u_block,
                   g.with_embeddings ? &g.e_block : nullptr);
    saffu_backward(pos.radius, model.radius, cr, dcat.subspan(d_h, d_h), g.w_radius, g.u_radius,
                   g.with_embeddings ? &g.e_radius : nullptr);

    if (model.cfg.doc_model) {
        const Vector dzd = softmax_vjp(od, dcat.subspan(2 * d_h, model.cfg.n_docs));
        add_outer(g.doc_matrix, 1.0, *pos.doc_input, dzd);
        if (g.with_embeddings) {
            Vector dx(model.cfg.d_block);
            mat_vec(model.doc_matrix, dzd, dx);
            const double scale = 1.0 / static_cast<double>(pos.pos + 1);
            axpy(scale, dx, g.e_block.row(Vocabulary::kPad));
            for (std::size_t j = 0; j < pos.pos && j < pos.doc.size(); ++j)
                axpy(scale, dx, g.e_block.row(static_cast<std::size_t>(pos.doc[j])));
        }
    }
}

double gaussian(DetRng& rng) {
    // Box-Muller on deterministic uniforms
    double u1 = rng.uniform();
    const double u2 = rng.uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

void fill_gaussian(Matrix& m, DetRng& rng) {
    const double stddev = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(m.rows, 1)));
    for (double& v : m.a) v = stddev * gaussian(rng);
}

std::string format_ppl(double ppl) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", ppl);
    return buf;
}

}  // namespace

LossReport loss(const TransformerModel& model, const DocumentStream& docs,
                std::span<const std::size_t> doc_indices) {
    std::vector<LossReport> parts(doc_indices.size());
    for_each_shard(doc_indices.size(), default_shards(),
                   [&](std::size_t, std::size_t lo, std::size_t hi) {
                       for (std::size_t i = lo; i < hi; ++i)
                           parts[i].total_nll = document_nll(model, docs.docs[doc_indices[i]],
                                                             doc_indices[i], &parts[i].tokens);
                   });
    LossReport total;
    for (const auto& p : parts) {
        total.total_nll += p.total_nll;
        total.tokens += p.tokens;
    }
    return total;
}

double batch_loss(const TransformerModel& model, const DocumentStream& docs,
                  std::span<const BatchItem> items) {
    double total = 0.0;
    visit_batch(model, docs, items, [&](const Position& pos) {
        const Vector probs = forward(model, pos);
        total -= std::log(probs[static_cast<std::size_t>(pos.target)]);
    });
    return total;
}

Gradients backward(const TransformerModel& model, const DocumentStream& docs,
                   std::span<const BatchItem> items, bool freeze_embeddings) {
    const std::size_t shards = default_shards();
    std::vector<Gradients> parts;
    parts.reserve(shards);
    for (std::size_t s = 0; s < shards; ++s) parts.push_back(make_gradients(model, !freeze_embeddings));
    for_each_shard(items.size(), shards, [&](std::size_t s, std::size_t lo, std::size_t hi) {
        visit_batch(model, docs, items.subspan(lo, hi - lo),
                    [&](const Position& pos) { backward_position(model, pos, parts[s]); });
    });
    for (std::size_t s = 1; s < shards; ++s) merge_gradients(parts[0], parts[s]);
    return std::move(parts[0]);
}

void adam_step(Matrix& param, const Matrix& grad, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
    if (!param.same_shape(grad)) throw std::runtime_error("dimension-mismatch: adam_step");
    if (state.m.empty()) {
        state.m = Matrix(param.rows, param.cols);
        state.v = Matrix(param.rows, param.cols);
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < param.a.size(); ++i) {
        const double g = grad.a[i];
        state.m.a[i] = beta1 * state.m.a[i] + (1.0 - beta1) * g;
        state.v.a[i] = beta2 * state.v.a[i] + (1.0 - beta2) * g * g;
        const double mhat = state.m.a[i] / bc1;
        const double vhat = state.v.a[i] / bc2;
        param.a[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

void cold_init(TransformerModel& model, std::uint64_t seed) {
    DetRng rng(seed ^ 0xc01dc01dc01dc01dull);
    fill_gaussian(model.block.w, rng);
    fill_gaussian(model.block.u, rng);
    fill_gaussian(model.radius.w, rng);
    fill_gaussian(model.radius.u, rng);
    if (model.cfg.doc_model) fill_gaussian(model.doc_matrix, rng);
    fill_gaussian(model.final_decoder, rng);
}

std::string TrainLog::to_text() const {
    std::string out;
    for (const auto& step : steps) {
        out += step.label;
        out += '\t';
        out += format_ppl(step.perplexity);
        out += '\t';
        out += step.sample;
        out += '\n';
    }
    return out;
}

TrainLog train(TransformerModel& model, const DocumentStream& train_docs,
               const DocumentStream& dev_docs, const Vocabulary& vocab, const TrainConfig& cfg) {
    if (train_docs.docs.empty()) throw std::runtime_error("empty-input: train corpus");
    if (dev_docs.docs.empty()) throw std::runtime_error("empty-input: dev corpus");

    const std::vector<Fold> folds = fold_stream(train_docs, cfg.fold_size);

    // Document-aligned dev slice from the start of the dev set.
    std::vector<std::size_t> dev_subset;
    std::size_t dev_tokens = 0;
    for (std::size_t d = 0; d < dev_docs.docs.size(); ++d) {
        dev_subset.push_back(d);
        dev_tokens += dev_docs.docs[d].size();
        if (dev_tokens >= cfg.dev_eval_tokens) break;
    }

    TrainLog log;
    TransformerModel best = model;
    double best_ppl = std::numeric_limits<double>::infinity();
    const auto evaluate = [&] {
        return std::exp(loss(model, dev_docs, dev_subset).mean());
    };
    const auto record = [&](const std::string& label, double ppl) {
        TrainStep step;
        step.label = label;
        step.perplexity = ppl;
        step.sample = sample_text(model, vocab, cfg.sample_tokens, 1.0,
                                  cfg.seed + 0x5afful * (log.steps.size() + 1));
        log.steps.push_back(std::move(step));
        if (ppl < best_ppl) {
            best_ppl = ppl;
            best = model;
        }
    };

    std::size_t train_label_base = 0;
    if (cfg.start == TrainConfig::Start::Warm) {
        explicit_fit(model, train_docs, folds[0].doc_indices, FitMode::Init);
        record("Init-0", evaluate());
        for (std::size_t k = 1; k <= cfg.tune_folds; ++k) {
            const Fold& fold = folds[(k - 1) % folds.size()];
            explicit_fit(model, train_docs, fold.doc_indices, FitMode::Tune);
            record("Tune-" + std::to_string(k), evaluate());
        }
        train_label_base = cfg.tune_folds;
    } else {
        cold_init(model, cfg.seed);
        record("Init-0", evaluate());
    }

    const bool freeze = cfg.freeze_embeddings;
    AdamState st_wb, st_ub, st_wr, st_ur, st_m, st_d, st_eb, st_er;
    std::size_t increases = 0;
    double prev_ppl = log.steps.back().perplexity;

    for (std::size_t epoch = 1;; ++epoch) {
        const Fold& fold = folds[(epoch - 1) % folds.size()];
        std::vector<BatchItem> items;
        for (std::size_t d : fold.doc_indices)
            for (std::size_t m = 0; m <= train_docs.docs[d].size(); ++m) items.emplace_back(d, m);

        for (std::size_t at = 0; at < items.size(); at += cfg.batch_positions) {
            const std::size_t len = std::min(cfg.batch_positions, items.size() - at);
            Gradients g = backward(model, train_docs, std::span(items).subspan(at, len), freeze);
            const double scale = 1.0 / static_cast<double>(len);
            auto scaled = [&](Matrix& m) {
                for (double& v : m.a) v *= scale;
            };
            scaled(g.w_block);
            scaled(g.u_block);
            scaled(g.w_radius);
            scaled(g.u_radius);
            scaled(g.final_decoder);
            adam_step(model.block.w, g.w_block, st_wb, cfg.learning_rate);
            adam_step(model.block.u, g.u_block, st_ub, cfg.learning_rate);
            adam_step(model.radius.w, g.w_radius, st_wr, cfg.learning_rate);
            adam_step(model.radius.u, g.u_radius, st_ur, cfg.learning_rate);
            adam_step(model.final_decoder, g.final_decoder, st_m, cfg.learning_rate);
            if (model.cfg.doc_model) {
                scaled(g.doc_matrix);
                adam_step(model.doc_matrix, g.doc_matrix, st_d, cfg.learning_rate);
            }
            if (!freeze) {
                scaled(g.e_block);
                scaled(g.e_radius);
                adam_step(model.e_block, g.e_block, st_eb, cfg.learning_rate);
                adam_step(model.e_radius, g.e_radius, st_er, cfg.learning_rate);
            }
        }

        const double ppl = evaluate();
        record("Train-" + std::to_string(train_label_base + epoch), ppl);
        if (ppl > prev_ppl) ++increases;
        prev_ppl = ppl;
        if (increases >= cfg.early_stop_budget) break;
        if (cfg.max_epochs != 0 && epoch >= cfg.max_epochs) break;
    }

    model = std::move(best);
    return log;
}

double GradCheckReport::max_rel_err() const {
    double mx = 0.0;
    for (const auto& e : entries) mx = std::max(mx, e.max_rel_err);
    return mx;
}

std::string GradCheckReport::to_text() const {
    std::string out;
    char buf[160];
    for (const auto& e : entries) {
        std::snprintf(buf, sizeof(buf), "%-16s max_rel_err=%.3e (checked %zu entries)\n",
                      e.name.c_str(), e.max_rel_err, e.entries_checked);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "decoder residuals: block=%.3e radius=%.3e final=%.3e\n"
                  "attention residuals: block=%.3e radius=%.3e\n",
                  decoder_residual_block, decoder_residual_radius, decoder_residual_final,
                  attention_residual_block, attention_residual_radius);
    out += buf;
    return out;
}

GradCheckReport grad_check(const TransformerModel& model, const DocumentStream& docs,
                           std::span<const BatchItem> items, double fd_step,
                           bool freeze_embeddings, std::size_t max_entries) {
    GradCheckReport report;
    const Gradients analytic = backward(model, docs, items, freeze_embeddings);

    TransformerModel work = model;
    const auto check = [&](const std::string& name, Matrix& param, const Matrix& grad) {
        GradCheckEntry entry;
        entry.name = name;
        const std::size_t n = param.a.size();
        const std::size_t stride = std::max<std::size_t>(1, n / max_entries);
        for (std::size_t i = 0; i < n; i += stride) {
            const double orig = param.a[i];
            param.a[i] = orig + fd_step;
            const double lp = batch_loss(work, docs, items);
            param.a[i] = orig - fd_step;
            const double lm = batch_loss(work, docs, items);
            param.a[i] = orig;
            const double fd = (lp - lm) / (2.0 * fd_step);
            const double a = grad.a[i];
            const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3});
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
            ++entry.entries_checked;
        }
        report.entries.push_back(entry);
    };

    check("w_block", work.block.w, analytic.w_block);
    check("u_block", work.block.u, analytic.u_block);
    check("w_radius", work.radius.w, analytic.w_radius);
    check("u_radius", work.radius.u, analytic.u_radius);
    check("final_decoder", work.final_decoder, analytic.final_decoder);
    if (model.cfg.doc_model) check("doc_matrix", work.doc_matrix, analytic.doc_matrix);
    if (!freeze_embeddings) {
        check("e_block", work.e_block, analytic.e_block);
        check("e_radius", work.e_radius, analytic.e_radius);
    }

    // Optimality-criterion residuals: co-occurrence vs prediction-weighted
    // features for the decoders, and the analogous identity for attention.
    const std::size_t d_h = model.cfg.d_hidden;
    Matrix f_b(model.block_decoder_rows(), d_h), p_b(model.block_decoder_rows(), d_h);
    Matrix f_r(model.radius_decoder_rows(), d_h), p_r(model.radius_decoder_rows(), d_h);
    Matrix f_m(model.concat_dim(), model.cfg.n_tokens), p_m(model.concat_dim(), model.cfg.n_tokens);
    Matrix f_qb(model.cfg.block_size, model.cfg.block_size), r_qb(model.cfg.block_size, model.cfg.block_size);
    Matrix f_qr(model.cfg.radius, model.cfg.radius), r_qr(model.cfg.radius, model.cfg.radius);

    visit_batch(model, docs, items, [&](const Position& pos) {
        const auto y_row = model.y_hidden.row(static_cast<std::size_t>(pos.target));
        const SaffuCache cb = saffu_run(pos.block, model.block);
        const SaffuCache cr = saffu_run(pos.radius, model.radius);
        add_outer(f_b, 1.0, cb.h, y_row);
        add_outer(p_b, 1.0, cb.h, cb.out);
        add_outer(f_r, 1.0, cr.h, y_row);
        add_outer(p_r, 1.0, cr.h, cr.out);

        const Vector vb = variational_targets_row(model.block, pos.block, y_row, model.c_block);
        const Vector vr = variational_targets_row(model.radius, pos.radius, y_row, model.c_radius);
        double sum_vb = 0.0, sum_vr = 0.0;
        for (double v : vb) sum_vb += v;
        for (double v : vr) sum_vr += v;
        add_outer(f_qb, 1.0, cb.q, vb);
        add_outer(r_qb, sum_vb, cb.q, cb.phi);
        add_outer(f_qr, 1.0, cr.q, vr);
        add_outer(r_qr, sum_vr, cr.q, cr.phi);

        const Vector g = forward_concat(model, pos);
        Vector out(model.cfg.n_tokens);
        vec_mat(g, model.final_decoder, out);
        softmax_inplace(out);
        for (std::size_t j = 0; j < g.size(); ++j) {
            f_m(j, static_cast<std::size_t>(pos.target)) += g[j];
        }
        add_outer(p_m, 1.0, g, out);
    });

    const auto max_rel = [](const Matrix& a, const Matrix& b) {
        double mx = 0.0;
        for (std::size_t i = 0; i < a.a.size(); ++i)
            mx = std::max(mx, std::abs(a.a[i] - b.a[i]) /
                                  std::max({std::abs(a.a[i]), std::abs(b.a[i]), 1e-9}));
        return mx;
    };
    report.decoder_residual_block = max_rel(f_b, p_b);
    report.decoder_residual_radius = max_rel(f_r, p_r);
    report.decoder_residual_final = max_rel(f_m, p_m);
    report.attention_residual_block = max_rel(f_qb, r_qb);
    report.attention_residual_radius = max_rel(f_qr, r_qr);
    return report;
}

}  // namespace saffu
