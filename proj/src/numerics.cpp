#include "saffu/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>

namespace saffu {

void softmax_inplace(std::span<double> x) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : x) {
        if (!std::isfinite(v)) throw std::runtime_error("non-finite-input: softmax");
        mx = std::max(mx, v);
    }
    double z = 0.0;
    for (double& v : x) {
        v = std::exp(v - mx);
        z += v;
    }
    for (double& v : x) v /= z;
}

Vector softmax(std::span<const double> x) {
    Vector out(x.begin(), x.end());
    softmax_inplace(out);
    return out;
}

void CoocAccumulator::add(std::span<const double> h, std::span<const double> y) {
    if (h.size() != f.rows || y.size() != f.cols)
        throw std::runtime_error("dimension-mismatch: cooccurrence add");
    add_outer(f, 1.0, h, y);
    ++count;
}

void CoocAccumulator::add_col(std::span<const double> h, std::size_t col) {
    if (h.size() != f.rows || col >= f.cols)
        throw std::runtime_error("dimension-mismatch: cooccurrence add_col");
    for (std::size_t j = 0; j < f.rows; ++j) f(j, col) += h[j];
    ++count;
}

void CoocAccumulator::merge(const CoocAccumulator& other) {
    if (!f.same_shape(other.f)) throw std::runtime_error("dimension-mismatch: cooccurrence merge");
    for (std::size_t i = 0; i < f.a.size(); ++i) f.a[i] += other.f.a[i];
    count += other.count;
}

Matrix cooccurrence(const Matrix& h, const Matrix& y) {
    if (h.rows != y.rows) throw std::runtime_error("dimension-mismatch: cooccurrence");
    CoocAccumulator acc(h.cols, y.cols);
    for (std::size_t m = 0; m < h.rows; ++m) acc.add(h.row(m), y.row(m));
    return acc.f;
}

Matrix explicit_solve(const Matrix& f, double k_prime, EmptyColumnPolicy policy) {
    if (k_prime <= 0.0) throw std::runtime_error("invalid-priming-number");
    const double w = (k_prime - 1.0) / k_prime;
    Matrix u(f.rows, f.cols);
    for (std::size_t i = 0; i < f.cols; ++i) {
        double colsum = 0.0;
        for (std::size_t j = 0; j < f.rows; ++j) colsum += f(j, i);
        if (colsum <= 0.0 && policy == EmptyColumnPolicy::Error)
            throw std::runtime_error("empty-output-column: column " + std::to_string(i) +
                                     " has no co-occurrence mass");
        const double shift = w * std::log(std::max(colsum, kCoocFloor));
        for (std::size_t j = 0; j < f.rows; ++j)
            u(j, i) = std::log(std::max(f(j, i), kCoocFloor)) - shift;
    }
    return u;
}

double priming_empirical(const Matrix& h) {
    if (h.rows == 0) throw std::runtime_error("empty-input: priming_empirical");
    double total = 0.0;
    for (double v : h.a) total += v;
    return total / static_cast<double>(h.rows);
}

std::size_t default_shards() {
    if (const char* env = std::getenv("SAFFU_THREADS")) {
        long v = std::strtol(env, nullptr, 10);
        if (v >= 1) return static_cast<std::size_t>(v);
    }
    return 1;
}

void for_each_shard(std::size_t n, std::size_t n_shards,
                    const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    n_shards = std::max<std::size_t>(1, std::min(n_shards, std::max<std::size_t>(n, 1)));
    if (n_shards == 1) {
        fn(0, 0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(n_shards);
    const std::size_t chunk = (n + n_shards - 1) / n_shards;
    for (std::size_t s = 0; s < n_shards; ++s) {
        const std::size_t begin = std::min(n, s * chunk);
        const std::size_t end = std::min(n, begin + chunk);
        pool.emplace_back([&fn, s, begin, end] { fn(s, begin, end); });
    }
    for (auto& t : pool) t.join();
}

}  // namespace saffu
