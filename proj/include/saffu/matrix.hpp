#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace saffu {

using Vector = std::vector<double>;

// Dense row-major matrix of doubles. All model math runs in 64-bit.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return a[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return a[r * cols + c]; }

    std::span<double> row(std::size_t r) { return {a.data() + r * cols, cols}; }
    std::span<const double> row(std::size_t r) const { return {a.data() + r * cols, cols}; }

    bool empty() const { return a.empty(); }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    void fill(double v) { a.assign(a.size(), v); }

    bool operator==(const Matrix& o) const { return rows == o.rows && cols == o.cols && a == o.a; }
};

inline double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline double norm1(std::span<const double> x) {
    double s = 0.0;
    for (double v : x) s += v < 0 ? -v : v;
    return s;
}

// y = x^T A for a row vector x (length A.rows); result has length A.cols.
inline void vec_mat(std::span<const double> x, const Matrix& A, std::span<double> y) {
    for (std::size_t j = 0; j < A.cols; ++j) y[j] = 0.0;
    for (std::size_t i = 0; i < A.rows; ++i) axpy(x[i], A.row(i), y);
}

// y = A x for a column vector x (length A.cols); result has length A.rows.
inline void mat_vec(const Matrix& A, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < A.rows; ++i) y[i] = dot(A.row(i), x);
}

// A += alpha * (x otimes y)
inline void add_outer(Matrix& A, double alpha, std::span<const double> x, std::span<const double> y) {
    for (std::size_t i = 0; i < A.rows; ++i) axpy(alpha * x[i], y, A.row(i));
}

}  // namespace saffu
