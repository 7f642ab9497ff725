#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "saffu/matrix.hpp"

namespace saffu {

// Floor applied to co-occurrence cells before taking logs; unseen pairs map
// to very low, finite logits.
inline constexpr double kCoocFloor = 1e-12;

// Stable softmax (natural base, row-max subtraction). Throws "non-finite-input"
// on NaN/inf entries.
Vector softmax(std::span<const double> x);
void softmax_inplace(std::span<double> x);

// Generalized co-occurrence accumulator: F = sum_m H_m (outer) Y_m = H^T Y.
// Supports incremental accumulation over instance batches and a deterministic
// ordered merge of per-shard partial sums.
struct CoocAccumulator {
    Matrix f;
    std::size_t count = 0;  // accumulated instances M

    CoocAccumulator() = default;
    CoocAccumulator(std::size_t d_in, std::size_t n_out) : f(d_in, n_out) {}

    void add(std::span<const double> h, std::span<const double> y);
    // One-hot target fast path: only column `col` receives mass.
    void add_col(std::span<const double> h, std::size_t col);
    void merge(const CoocAccumulator& other);
};

// F(H, Y) = H^T Y for full matrices (rows are instances).
Matrix cooccurrence(const Matrix& h, const Matrix& y);

// Explicit single-layer solution:
//   U[j][i] = ln F[j][i] - ((K'-1)/K') * ln(sum_d F[d][i])
// Cells are floored at kCoocFloor before the logs. A column with no mass at
// all means that output was never observed; by default this is an error.
enum class EmptyColumnPolicy { Error, Floor };
Matrix explicit_solve(const Matrix& f, double k_prime,
                      EmptyColumnPolicy policy = EmptyColumnPolicy::Error);

// Empirical priming number: mean 1-norm of the (nonnegative) input rows.
double priming_empirical(const Matrix& h);

// Deterministic sharded iteration: splits [0, n) into n_shards contiguous
// ranges and runs fn(shard, begin, end) on each, one thread per shard.
// Callers merge per-shard results in shard order so a fixed shard count is
// bit-identical run-to-run. Shard count is capped by the SAFFU_THREADS
// environment variable (default 1).
void for_each_shard(std::size_t n, std::size_t n_shards,
                    const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);
std::size_t default_shards();

}  // namespace saffu
