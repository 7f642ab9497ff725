#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "saffu/numerics.hpp"
#include "saffu/util.hpp"

using namespace saffu;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, DetRng& rng, double lo = 0.0, double hi = 1.0) {
    Matrix m(r, c);
    for (double& v : m.a) v = lo + (hi - lo) * rng.uniform();
    return m;
}

}  // namespace

TEST_CASE("softmax basics") {
    const Vector a = softmax(std::vector<double>{0.0, 0.0});
    CHECK(a[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(a[1] == doctest::Approx(0.5).epsilon(1e-12));

    const Vector b = softmax(std::vector<double>{std::log(1.0), std::log(3.0)});
    CHECK(b[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(b[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("softmax translation invariance and row sums") {
    DetRng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x(8);
        for (double& v : x) v = -5.0 + 10.0 * rng.uniform();
        const double shift = -3.0 + 6.0 * rng.uniform();
        std::vector<double> y = x;
        for (double& v : y) v += shift;
        const Vector px = softmax(x);
        const Vector py = softmax(y);
        double sum = 0.0;
        for (std::size_t i = 0; i < px.size(); ++i) {
            CHECK(std::abs(px[i] - py[i]) < 1e-12);
            CHECK(px[i] > 0.0);
            sum += px[i];
        }
        CHECK(std::abs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("softmax rejects non-finite input") {
    CHECK_THROWS_WITH_AS(softmax(std::vector<double>{0.0, std::nan("")}),
                         doctest::Contains("non-finite-input"), std::runtime_error);
    CHECK_THROWS_AS(softmax(std::vector<double>{std::numeric_limits<double>::infinity(), 0.0}),
                    std::runtime_error);
}

TEST_CASE("cooccurrence identity and hand-traced cases") {
    Matrix h(2, 2), y(2, 2);
    h(0, 0) = 1;
    h(1, 1) = 1;
    y(0, 0) = 1;
    y(1, 1) = 1;
    const Matrix f = cooccurrence(h, y);
    CHECK(f(0, 0) == 1.0);
    CHECK(f(0, 1) == 0.0);
    CHECK(f(1, 0) == 0.0);
    CHECK(f(1, 1) == 1.0);

    // H = [[1,0],[1,0],[0,1]], Y = [[1,0],[0,1],[0,1]] -> F = [[1,1],[0,1]]
    Matrix h2(3, 2), y2(3, 2);
    h2(0, 0) = 1;
    h2(1, 0) = 1;
    h2(2, 1) = 1;
    y2(0, 0) = 1;
    y2(1, 1) = 1;
    y2(2, 1) = 1;
    const Matrix f2 = cooccurrence(h2, y2);
    CHECK(f2(0, 0) == 1.0);
    CHECK(f2(0, 1) == 1.0);
    CHECK(f2(1, 0) == 0.0);
    CHECK(f2(1, 1) == 1.0);
}

TEST_CASE("cooccurrence equals the naive triple loop") {
    DetRng rng(23);
    const Matrix h = random_matrix(37, 5, rng);
    const Matrix y = random_matrix(37, 9, rng);
    const Matrix f = cooccurrence(h, y);
    for (std::size_t j = 0; j < 5; ++j) {
        for (std::size_t i = 0; i < 9; ++i) {
            double s = 0.0;
            for (std::size_t m = 0; m < 37; ++m) s += h(m, j) * y(m, i);
            CHECK(f(j, i) == doctest::Approx(s).epsilon(1e-10));
        }
    }
}

TEST_CASE("cooccurrence dimension mismatch") {
    CHECK_THROWS_AS(cooccurrence(Matrix(3, 2), Matrix(4, 2)), std::runtime_error);
    CoocAccumulator acc(2, 2);
    CHECK_THROWS_AS(acc.add(std::vector<double>{1.0, 2.0, 3.0}, std::vector<double>{1.0, 0.0}),
                    std::runtime_error);
}

TEST_CASE("incremental accumulation matches batch and one-hot fast path") {
    DetRng rng(5);
    const Matrix h = random_matrix(20, 4, rng);
    const Matrix y = random_matrix(20, 6, rng);
    const Matrix batch = cooccurrence(h, y);
    CoocAccumulator acc(4, 6);
    for (std::size_t m = 0; m < 20; ++m) acc.add(h.row(m), y.row(m));
    CHECK(acc.count == 20);
    for (std::size_t i = 0; i < batch.a.size(); ++i)
        CHECK(acc.f.a[i] == doctest::Approx(batch.a[i]).epsilon(1e-12));

    CoocAccumulator onehot(4, 6);
    Matrix y_onehot(20, 6);
    for (std::size_t m = 0; m < 20; ++m) y_onehot(m, m % 6) = 1.0;
    for (std::size_t m = 0; m < 20; ++m) onehot.add_col(h.row(m), m % 6);
    const Matrix expect = cooccurrence(h, y_onehot);
    for (std::size_t i = 0; i < expect.a.size(); ++i)
        CHECK(onehot.f.a[i] == doctest::Approx(expect.a[i]).epsilon(1e-12));
}

TEST_CASE("sharded accumulation: deterministic rerun, close to serial") {
    DetRng rng(31);
    const Matrix h = random_matrix(101, 3, rng);
    const Matrix y = random_matrix(101, 4, rng);

    auto sharded = [&](std::size_t n_shards) {
        std::vector<CoocAccumulator> parts(n_shards, CoocAccumulator(3, 4));
        for_each_shard(h.rows, n_shards, [&](std::size_t s, std::size_t lo, std::size_t hi) {
            for (std::size_t m = lo; m < hi; ++m) parts[s].add(h.row(m), y.row(m));
        });
        for (std::size_t s = 1; s < n_shards; ++s) parts[0].merge(parts[s]);
        return parts[0];
    };

    const CoocAccumulator a = sharded(3);
    const CoocAccumulator b = sharded(3);
    CHECK(a.f == b.f);  // fixed shard count: bit-identical run-to-run
    CHECK(a.count == 101);

    const CoocAccumulator serial = sharded(1);
    for (std::size_t i = 0; i < serial.f.a.size(); ++i) {
        const double rel = std::abs(a.f.a[i] - serial.f.a[i]) /
                           std::max(std::abs(serial.f.a[i]), 1e-30);
        CHECK(rel <= 1e-9);
    }
}

TEST_CASE("explicit_solve with K' = 1 is the raw log co-occurrence") {
    Matrix f(2, 2);
    f(0, 0) = 2.0;
    f(0, 1) = 0.5;
    f(1, 0) = 1.0;
    f(1, 1) = 4.0;
    const Matrix u = explicit_solve(f, 1.0);
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t i = 0; i < 2; ++i)
            CHECK(u(j, i) == doctest::Approx(std::log(f(j, i))).epsilon(1e-12));

    Matrix degenerate(1, 1);
    degenerate(0, 0) = 7.0;
    CHECK(explicit_solve(degenerate, 1.0)(0, 0) == doctest::Approx(std::log(7.0)));
}

TEST_CASE("explicit_solve empty-column policy") {
    Matrix f(2, 2);
    f(0, 0) = 1.0;
    f(1, 0) = 2.0;  // column 1 has no mass
    CHECK_THROWS_WITH_AS(explicit_solve(f, 2.0), doctest::Contains("empty-output-column"),
                         std::runtime_error);
    const Matrix u = explicit_solve(f, 2.0, EmptyColumnPolicy::Floor);
    CHECK(std::isfinite(u(0, 1)));
    CHECK(u(0, 1) < u(0, 0) - 10.0);  // floored cells land far below observed logits
}

TEST_CASE("explicit_solve translation covariance under uniform column scaling") {
    DetRng rng(77);
    Matrix f = random_matrix(4, 5, rng, 0.5, 3.0);
    const double k_prime = 3.0;
    const double s = 2.75;
    Matrix fs = f;
    for (double& v : fs.a) v *= s;
    const Matrix u = explicit_solve(f, k_prime);
    const Matrix us = explicit_solve(fs, k_prime);
    const double shift = std::log(s) / k_prime;
    for (std::size_t i = 0; i < u.a.size(); ++i)
        CHECK(us.a[i] - u.a[i] == doctest::Approx(shift).epsilon(1e-10));

    // softmax(h U) is unchanged by the uniform shift
    const Matrix h = random_matrix(6, 4, rng);
    for (std::size_t m = 0; m < h.rows; ++m) {
        Vector za(u.cols), zb(u.cols);
        vec_mat(h.row(m), u, za);
        vec_mat(h.row(m), us, zb);
        // the shift scales with ||h||_1 per column identically, so probs match
        const Vector pa = softmax(za);
        const Vector pb = softmax(zb);
        for (std::size_t i = 0; i < pa.size(); ++i) CHECK(std::abs(pa[i] - pb[i]) < 1e-10);
    }
}

TEST_CASE("priming_empirical") {
    Matrix unit(3, 4);
    for (std::size_t m = 0; m < 3; ++m) unit(m, m) = 1.0;
    CHECK(priming_empirical(unit) == doctest::Approx(1.0));

    Matrix two(2, 2);
    two(0, 0) = 2.0;          // row norm 2
    two(1, 0) = 3.0;
    two(1, 1) = 1.0;          // row norm 4
    CHECK(priming_empirical(two) == doctest::Approx(3.0));

    CHECK_THROWS_AS(priming_empirical(Matrix()), std::runtime_error);
}

TEST_CASE("explicit solution is near gradient-descent optimum on one-hot inputs") {
    // One-hot contexts (K = 1): the explicit solution with K' = 1 renormalizes
    // to the conditional frequency table, which is the exact optimum of
    // softmax regression. The gradient-descent oracle lives in the acceptance
    // suite; here the frequency-table optimum is checked in closed form.
    DetRng rng(101);
    const std::size_t d = 5, n = 7, m_count = 400;
    Matrix h(m_count, d), y(m_count, n);
    std::vector<std::size_t> hx(m_count), yx(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        hx[m] = rng.next() % d;
        yx[m] = (hx[m] + (rng.next() % 3)) % n;  // correlated targets
        h(m, hx[m]) = 1.0;
        y(m, yx[m]) = 1.0;
    }
    const Matrix u = explicit_solve(cooccurrence(h, y), 1.0, EmptyColumnPolicy::Floor);

    // model probability for context j must equal the empirical conditional
    Matrix counts(d, n);
    Vector totals(d, 0.0);
    for (std::size_t m = 0; m < m_count; ++m) {
        counts(hx[m], yx[m]) += 1.0;
        totals[hx[m]] += 1.0;
    }
    for (std::size_t j = 0; j < d; ++j) {
        if (totals[j] == 0.0) continue;
        Vector z(n);
        Vector hj(d, 0.0);
        hj[j] = 1.0;
        vec_mat(hj, u, z);
        const Vector p = softmax(z);
        for (std::size_t i = 0; i < n; ++i)
            CHECK(std::abs(p[i] - counts(j, i) / totals[j]) < 1e-9);
    }
}
