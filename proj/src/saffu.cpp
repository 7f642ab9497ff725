#include "saffu/saffu.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace saffu {

double default_k_u(std::size_t k) { return static_cast<double>(k) * std::log(static_cast<double>(k)); }
double default_k_w(std::size_t k) { return std::log(static_cast<double>(k)); }

double translation_constant(std::size_t k, std::size_t n) {
    return 2.0 * (1.0 + 1.0 / static_cast<double>(k)) * std::log(static_cast<double>(n));
}

Vector quadratic_features(const ContextSlice& slice) {
    const auto head = slice.row(slice.head);
    Vector q(slice.size());
    for (std::size_t k = 0; k < slice.size(); ++k) q[k] = dot(head, slice.row(k));
    return q;
}

Vector attention_weights(std::span<const double> q, const Matrix& w) {
    Vector s(w.cols, 0.0);
    for (std::size_t j = 0; j < w.rows; ++j) axpy(q[j], w.row(j), s);
    softmax_inplace(s);
    for (double& v : s) v = -std::log(v);
    return s;
}

Vector hidden_state(std::span<const double> a, const ContextSlice& slice, Aggregation mode) {
    const std::size_t d = slice.dim();
    if (mode == Aggregation::Sum) {
        Vector h(d, 0.0);
        for (std::size_t k = 0; k < slice.size(); ++k) axpy(a[k], slice.row(k), h);
        return h;
    }
    Vector h(slice.size() * d);
    for (std::size_t k = 0; k < slice.size(); ++k) {
        const auto x = slice.row(k);
        for (std::size_t c = 0; c < d; ++c) h[k * d + c] = a[k] * x[c];
    }
    return h;
}

Vector saffu_logits(const ContextSlice& slice, const SaffuParams& p) {
    const Vector q = quadratic_features(slice);
    const Vector a = attention_weights(q, p.w);
    const Vector h = hidden_state(a, slice, p.mode);
    Vector z(p.u.cols);
    vec_mat(h, p.u, z);
    return z;
}

Vector saffu_forward(const ContextSlice& slice, const SaffuParams& p) {
    Vector z = saffu_logits(slice, p);
    softmax_inplace(z);
    return z;
}

Matrix solve_decoder(const Matrix& h, const Matrix& y, double k_u, EmptyColumnPolicy policy) {
    return explicit_solve(cooccurrence(h, y), k_u, policy);
}

Vector variational_targets_row(const SaffuParams& p, const ContextSlice& slice,
                               std::span<const double> y_row, double c) {
    const Vector q = quadratic_features(slice);
    const Vector a = attention_weights(q, p.w);
    const Vector h = hidden_state(a, slice, p.mode);
    Vector probs(p.u.cols);
    vec_mat(h, p.u, probs);
    softmax_inplace(probs);

    // bracket = U (y - probs) + c, in the decoder's input space
    Vector delta(p.u.cols);
    for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = y_row[i] - probs[i];
    Vector bracket(p.u.rows, 0.0);
    mat_vec(p.u, delta, bracket);
    for (double& v : bracket) v += c;

    const std::size_t d = slice.dim();
    Vector v_row(slice.size());
    for (std::size_t k = 0; k < slice.size(); ++k) {
        const std::size_t offset = p.mode == Aggregation::Cat ? k * d : 0;
        v_row[k] = dot(std::span<const double>(bracket).subspan(offset, d), slice.row(k));
    }
    return v_row;
}

Matrix variational_targets(const SaffuParams& p, const std::vector<ContextSlice>& slices,
                           const Matrix& y, double c) {
    if (slices.empty()) throw std::runtime_error("empty-input: variational_targets");
    Matrix v(slices.size(), slices[0].size());
    for (std::size_t m = 0; m < slices.size(); ++m) {
        const Vector row = variational_targets_row(p, slices[m], y.row(m), c);
        std::copy(row.begin(), row.end(), v.row(m).begin());
    }
    return v;
}

Matrix log_embeddings(const Matrix& e) {
    Matrix out(e.rows, e.cols);
    for (std::size_t i = 0; i < e.a.size(); ++i) {
        if (e.a[i] <= 0.0) throw std::runtime_error("requires-densified-embeddings");
        out.a[i] = std::log(e.a[i]);
    }
    return out;
}

Vector init_targets_row(const Matrix& log_e, std::span<const double> avg_log_embedding,
                        std::int32_t target_id, const ContextSlice& slice, double c) {
    const auto target_log = log_e.row(static_cast<std::size_t>(target_id));
    Vector bracket(log_e.cols);
    for (std::size_t d = 0; d < bracket.size(); ++d)
        bracket[d] = target_log[d] - avg_log_embedding[d] + c;
    Vector v_row(slice.size());
    for (std::size_t k = 0; k < slice.size(); ++k) v_row[k] = dot(bracket, slice.row(k));
    return v_row;
}

Matrix init_targets(const Matrix& e, const Matrix& y, std::span<const std::int32_t> target_ids,
                    const std::vector<ContextSlice>& slices, double c) {
    if (slices.empty()) throw std::runtime_error("empty-input: init_targets");
    const Matrix log_e = log_embeddings(e);
    // (ln E)^T y-bar with y-bar the mean target row (unigram distribution)
    Vector ybar(y.cols, 0.0);
    for (std::size_t m = 0; m < y.rows; ++m) axpy(1.0 / static_cast<double>(y.rows), y.row(m), ybar);
    Vector avg_log(log_e.cols, 0.0);
    for (std::size_t n = 0; n < log_e.rows; ++n) axpy(ybar[n], log_e.row(n), avg_log);

    Matrix v(slices.size(), slices[0].size());
    for (std::size_t m = 0; m < slices.size(); ++m) {
        const Vector row = init_targets_row(log_e, avg_log, target_ids[m], slices[m], c);
        std::copy(row.begin(), row.end(), v.row(m).begin());
    }
    return v;
}

Matrix solve_attention_cooc(const Matrix& f_qv, double k_w) {
    for (std::size_t j = 0; j < f_qv.rows; ++j)
        for (std::size_t i = 0; i < f_qv.cols; ++i)
            if (f_qv(j, i) <= 0.0)
                throw std::runtime_error("negative-cooccurrence: F(Q,V)[" + std::to_string(j) +
                                         "][" + std::to_string(i) + "] = " +
                                         std::to_string(f_qv(j, i)));
    return explicit_solve(f_qv, k_w);
}

Matrix solve_attention(const Matrix& q, const Matrix& v, double k_w) {
    return solve_attention_cooc(cooccurrence(q, v), k_w);
}

Matrix one_hot_rows(std::span<const std::int32_t> targets, std::size_t n) {
    Matrix y(targets.size(), n);
    for (std::size_t m = 0; m < targets.size(); ++m) y(m, static_cast<std::size_t>(targets[m])) = 1.0;
    return y;
}

namespace {

Matrix hidden_matrix(const SaffuParams& p, const std::vector<ContextSlice>& slices) {
    const std::size_t d_u = slices[0].dim() * (p.mode == Aggregation::Cat ? slices[0].size() : 1);
    Matrix h(slices.size(), d_u);
    for (std::size_t m = 0; m < slices.size(); ++m) {
        const Vector q = quadratic_features(slices[m]);
        const Vector a = attention_weights(q, p.w);
        const Vector hm = hidden_state(a, slices[m], p.mode);
        std::copy(hm.begin(), hm.end(), h.row(m).begin());
    }
    return h;
}

void fit_decoder(SaffuParams& p, const std::vector<ContextSlice>& slices, const Matrix& y) {
    p.u = solve_decoder(hidden_matrix(p, slices), y, p.k_u, EmptyColumnPolicy::Floor);
}

}  // namespace

SaffuParams saffu_fit_init(const Matrix& e_table, const std::vector<ContextSlice>& slices,
                           std::span<const std::int32_t> targets, std::size_t n_out,
                           Aggregation mode, std::size_t head) {
    const std::size_t k = slices.at(0).size();
    if (k < 2) throw std::runtime_error("context-too-small: K must exceed 1");
    SaffuParams p;
    p.mode = mode;
    p.head = head;
    p.k_w = default_k_w(k);
    p.k_u = default_k_u(k);

    const Matrix y = one_hot_rows(targets, n_out);
    const double c = translation_constant(k, n_out);
    Matrix q(slices.size(), k);
    for (std::size_t m = 0; m < slices.size(); ++m) {
        const Vector qm = quadratic_features(slices[m]);
        std::copy(qm.begin(), qm.end(), q.row(m).begin());
    }
    const Matrix v_hat = init_targets(e_table, y, targets, slices, c);
    p.w = solve_attention(q, v_hat, p.k_w);
    fit_decoder(p, slices, y);
    return p;
}

SaffuParams saffu_fit_uniform(const std::vector<ContextSlice>& slices,
                              std::span<const std::int32_t> targets, std::size_t n_out,
                              Aggregation mode, std::size_t head) {
    const std::size_t k = slices.at(0).size();
    if (k < 2) throw std::runtime_error("context-too-small: K must exceed 1");
    SaffuParams p;
    p.mode = mode;
    p.head = head;
    p.k_w = default_k_w(k);
    p.k_u = default_k_u(k);
    p.w = Matrix(k, k, 1.0);  // the paper's "dumb" all-ones start
    fit_decoder(p, slices, one_hot_rows(targets, n_out));
    return p;
}

void saffu_fit_tune(SaffuParams& p, const std::vector<ContextSlice>& slices,
                    std::span<const std::int32_t> targets, std::size_t n_out) {
    const std::size_t k = slices.at(0).size();
    const Matrix y = one_hot_rows(targets, n_out);
    const double c = translation_constant(k, n_out);
    Matrix q(slices.size(), k);
    for (std::size_t m = 0; m < slices.size(); ++m) {
        const Vector qm = quadratic_features(slices[m]);
        std::copy(qm.begin(), qm.end(), q.row(m).begin());
    }
    const Matrix v = variational_targets(p, slices, y, c);
    p.w = solve_attention(q, v, p.k_w);
    fit_decoder(p, slices, y);
}

double saffu_loss(const SaffuParams& p, const std::vector<ContextSlice>& slices,
                  std::span<const std::int32_t> targets) {
    double total = 0.0;
    for (std::size_t m = 0; m < slices.size(); ++m) {
        const Vector probs = saffu_forward(slices[m], p);
        total -= std::log(probs[static_cast<std::size_t>(targets[m])]);
    }
    return total / static_cast<double>(slices.size());
}

}  // namespace saffu
