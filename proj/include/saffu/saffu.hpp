#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "saffu/matrix.hpp"
#include "saffu/numerics.hpp"

namespace saffu {

// One prediction instance's context: K embedding-table rows and the head slot.
struct ContextSlice {
    const Matrix* table = nullptr;
    std::span<const std::int32_t> ids;
    std::size_t head = 0;

    std::size_t size() const { return ids.size(); }
    std::size_t dim() const { return table->cols; }
    std::span<const double> row(std::size_t k) const {
        return table->row(static_cast<std::size_t>(ids[k]));
    }
};

enum class Aggregation { Sum, Cat };

// One SAFFU: attention matrix W (K x K), decoder U (D x N_out in sum mode,
// K*D x N_out in cat mode), aggregation mode, head, priming numbers.
struct SaffuParams {
    Matrix w;
    Matrix u;
    Aggregation mode = Aggregation::Sum;
    std::size_t head = 0;
    double k_w = 0.0;
    double k_u = 0.0;

    std::size_t context_size() const { return w.rows; }
};

// Default priming numbers and the variational translation constant.
double default_k_u(std::size_t k);                        // K ln K
double default_k_w(std::size_t k);                        // ln K
double translation_constant(std::size_t k, std::size_t n);  // c = 2(1 + 1/K) ln N

// Q_m = X_h X^T: K inner products of the head row with every context row.
Vector quadratic_features(const ContextSlice& slice);

// A_m = -ln softmax(Q_m W); entropy-like weights, elementwise >= 0.
Vector attention_weights(std::span<const double> q, const Matrix& w);

// Sum mode: H_m = A_m X in R^D. Cat mode: segments A_{m,k} * X_k in R^{K*D}.
Vector hidden_state(std::span<const double> a, const ContextSlice& slice, Aggregation mode);

Vector saffu_logits(const ContextSlice& slice, const SaffuParams& p);   // H U
Vector saffu_forward(const ContextSlice& slice, const SaffuParams& p);  // softmax(H U)

// Decoder explicit solution (delegates to explicit_solve over F(H, Y)).
Matrix solve_decoder(const Matrix& h, const Matrix& y, double k_u,
                     EmptyColumnPolicy policy = EmptyColumnPolicy::Error);

// Variational tuning targets: V_{m,k} = [U(Y_m - softmax(H_m U)) + c]_(k) . X_{m,k},
// where the bracket's k-th D-segment applies in cat mode and the whole bracket
// in sum mode. y_row may be one-hot or a soft target distribution.
Vector variational_targets_row(const SaffuParams& p, const ContextSlice& slice,
                               std::span<const double> y_row, double c);
Matrix variational_targets(const SaffuParams& p, const std::vector<ContextSlice>& slices,
                           const Matrix& y, double c);

// Elementwise ln of a densified embedding table; zero entries are an error.
Matrix log_embeddings(const Matrix& e);

// Initialization targets: V^_{m,k} = [ln E_{i_m} - (ln E)^T y-bar + c] . X_{m,k}.
// avg_log_embedding = (ln E)^T y-bar for the unigram target distribution y-bar.
Vector init_targets_row(const Matrix& log_e, std::span<const double> avg_log_embedding,
                        std::int32_t target_id, const ContextSlice& slice, double c);
Matrix init_targets(const Matrix& e, const Matrix& y, std::span<const std::int32_t> target_ids,
                    const std::vector<ContextSlice>& slices, double c);

// Attention explicit solution over F(Q, V); every co-occurrence cell must be
// strictly positive ("negative-cooccurrence" names the offending cell).
Matrix solve_attention_cooc(const Matrix& f_qv, double k_w);
Matrix solve_attention(const Matrix& q, const Matrix& v, double k_w);

// Standalone SAFFU fitting against one-hot targets (the transformer composes
// its own streaming fit; these back the single-unit pipelines and tests).
Matrix one_hot_rows(std::span<const std::int32_t> targets, std::size_t n);

SaffuParams saffu_fit_init(const Matrix& e_table, const std::vector<ContextSlice>& slices,
                           std::span<const std::int32_t> targets, std::size_t n_out,
                           Aggregation mode, std::size_t head);
SaffuParams saffu_fit_uniform(const std::vector<ContextSlice>& slices,
                              std::span<const std::int32_t> targets, std::size_t n_out,
                              Aggregation mode, std::size_t head);
void saffu_fit_tune(SaffuParams& p, const std::vector<ContextSlice>& slices,
                    std::span<const std::int32_t> targets, std::size_t n_out);

// Mean cross entropy of the unit's predictions at the target indices.
double saffu_loss(const SaffuParams& p, const std::vector<ContextSlice>& slices,
                  std::span<const std::int32_t> targets);

}  // namespace saffu
