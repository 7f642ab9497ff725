#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "saffu/cipher.hpp"
#include "saffu/saffu.hpp"
#include "saffu/util.hpp"

using namespace saffu;

namespace {

// Test harness owning id buffers behind ContextSlice spans.
struct SliceSet {
    Matrix table;
    std::vector<std::vector<std::int32_t>> ids;
    std::size_t head = 0;

    std::vector<ContextSlice> slices() const {
        std::vector<ContextSlice> out;
        out.reserve(ids.size());
        for (const auto& row : ids) out.push_back(ContextSlice{&table, row, head});
        return out;
    }
};

Matrix densified_table(std::size_t n, std::size_t d, std::uint64_t seed) {
    const CipherPair pair = bit_cipher(n, d);
    DetRng rng(seed);
    std::vector<std::uint64_t> counts(n);
    for (auto& c : counts) c = 1 + rng.next() % 500;
    return densify(pair.e, counts);
}

double ref_loss(const SaffuParams& p, const std::vector<ContextSlice>& slices,
                std::span<const std::int32_t> targets) {
    return saffu_loss(p, slices, targets);
}

}  // namespace

TEST_CASE("quadratic features") {
    Matrix table(3, 3);
    table(0, 0) = 1.0;
    table(1, 1) = 1.0;
    table(2, 2) = 1.0;

    // all rows the same one-hot: every inner product is 1
    std::vector<std::int32_t> same{0, 0, 0};
    const Vector q1 = quadratic_features(ContextSlice{&table, same, 2});
    for (double v : q1) CHECK(v == doctest::Approx(1.0));

    // distinct one-hots: 1 at the head, 0 elsewhere
    std::vector<std::int32_t> distinct{0, 1, 2};
    for (std::size_t h = 0; h < 3; ++h) {
        const Vector q = quadratic_features(ContextSlice{&table, distinct, h});
        for (std::size_t k = 0; k < 3; ++k) CHECK(q[k] == doctest::Approx(k == h ? 1.0 : 0.0));
    }

    // uniform rows: every entry D * (1/D)^2 = 1/D
    Matrix uniform(1, 4, 0.25);
    std::vector<std::int32_t> u{0, 0, 0};
    const Vector qu = quadratic_features(ContextSlice{&uniform, u, 0});
    for (double v : qu) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("quadratic features stay in [0,1] with norm in [0,K] for unit-norm inputs") {
    const Matrix table = densified_table(9, 4, 3);
    DetRng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::int32_t> ids(5);
        for (auto& id : ids) id = static_cast<std::int32_t>(rng.next() % 9);
        const Vector q = quadratic_features(ContextSlice{&table, ids, 4});
        double norm = 0.0;
        for (double v : q) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0 + 1e-12);
            norm += v;
        }
        CHECK(norm <= 5.0 + 1e-9);
    }
}

TEST_CASE("attention weights") {
    // uniform W: softmax output uniform, every weight ln K
    const std::size_t k = 5;
    Matrix w(k, k, 0.7);
    Vector q{0.2, 0.9, 0.1, 0.5, 0.3};
    const Vector a = attention_weights(q, w);
    for (double v : a) CHECK(v == doctest::Approx(std::log(double(k))).epsilon(1e-12));

    // K = 2 with equal outputs: both weights ln 2
    Matrix w2(2, 2, 0.0);
    const Vector a2 = attention_weights(Vector{0.4, 0.6}, w2);
    CHECK(a2[0] == doctest::Approx(std::log(2.0)));
    CHECK(a2[1] == doctest::Approx(std::log(2.0)));
}

TEST_CASE("attention weights are nonnegative for random inputs") {
    DetRng rng(17);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t k = 2 + rng.next() % 6;
        Matrix w(k, k);
        for (double& v : w.a) v = -2.0 + 4.0 * rng.uniform();
        Vector q(k);
        for (double& v : q) v = rng.uniform();
        const Vector a = attention_weights(q, w);
        for (double v : a) CHECK(v >= 0.0);
    }
}

TEST_CASE("hidden state aggregation") {
    const Matrix table = densified_table(7, 3, 5);
    std::vector<std::int32_t> ids{1, 3, 5, 6};
    const ContextSlice slice{&table, ids, 3};
    const std::size_t k = 4;

    // uniform attention over unit-norm rows: ||H||_1 = K ln K = K_U
    Vector a(k, std::log(double(k)));
    const Vector h = hidden_state(a, slice, Aggregation::Sum);
    CHECK(norm1(h) == doctest::Approx(default_k_u(k)).epsilon(1e-12));

    const Vector hc = hidden_state(a, slice, Aggregation::Cat);
    CHECK(hc.size() == k * 3);

    // segment norms of cat equal the sum-mode norm contribution
    DetRng rng(2);
    Vector arand(k);
    for (double& v : arand) v = rng.uniform() * 2.0;
    const Vector hs = hidden_state(arand, slice, Aggregation::Sum);
    const Vector hcat = hidden_state(arand, slice, Aggregation::Cat);
    double seg_total = 0.0;
    for (std::size_t i = 0; i < hcat.size(); ++i) seg_total += std::abs(hcat[i]);
    CHECK(seg_total == doctest::Approx(norm1(hs)).epsilon(1e-12));
}

TEST_CASE("saffu forward is a probability vector; zero decoder gives uniform") {
    const Matrix table = densified_table(9, 4, 11);
    std::vector<std::int32_t> ids{0, 4, 7};
    const ContextSlice slice{&table, ids, 2};

    SaffuParams p;
    p.mode = Aggregation::Sum;
    p.head = 2;
    p.w = Matrix(3, 3);
    DetRng rng(9);
    for (double& v : p.w.a) v = rng.uniform();
    p.u = Matrix(4, 6);
    const Vector uniform = saffu_forward(slice, p);
    double sum = 0.0;
    for (double v : uniform) {
        CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
        sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));

    for (double& v : p.u.a) v = -1.0 + 2.0 * rng.uniform();
    const Vector probs = saffu_forward(slice, p);
    sum = 0.0;
    for (double v : probs) {
        CHECK(v > 0.0);
        sum += v;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("saffu forward matches a scalar trace at K = D = N = 2") {
    Matrix table(2, 2);
    table(0, 0) = 1.0;                      // token 0 -> (1, 0)
    table(1, 0) = 0.3;
    table(1, 1) = 0.7;                      // token 1 -> (0.3, 0.7)
    std::vector<std::int32_t> ids{0, 1};    // X rows: (1,0), (0.3,0.7)
    const ContextSlice slice{&table, ids, 1};

    SaffuParams p;
    p.mode = Aggregation::Sum;
    p.head = 1;
    p.w = Matrix(2, 2);
    p.w(0, 0) = 0.2;
    p.w(0, 1) = -0.1;
    p.w(1, 0) = 0.3;
    p.w(1, 1) = 0.4;
    p.u = Matrix(2, 2);
    p.u(0, 0) = 0.7;
    p.u(0, 1) = -0.2;
    p.u(1, 0) = 0.1;
    p.u(1, 1) = 0.5;

    // scalar replay of Eq. 1
    const double q0 = 0.3 * 1.0 + 0.7 * 0.0;         // head . row0
    const double q1 = 0.3 * 0.3 + 0.7 * 0.7;         // head . row1
    const double s0 = q0 * 0.2 + q1 * 0.3;
    const double s1 = q0 * -0.1 + q1 * 0.4;
    const double z0 = std::exp(s0) / (std::exp(s0) + std::exp(s1));
    const double z1 = std::exp(s1) / (std::exp(s0) + std::exp(s1));
    const double a0 = -std::log(z0), a1 = -std::log(z1);
    const double h0 = a0 * 1.0 + a1 * 0.3;
    const double h1 = a0 * 0.0 + a1 * 0.7;
    const double o0 = h0 * 0.7 + h1 * 0.1;
    const double o1 = h0 * -0.2 + h1 * 0.5;
    const double p0 = std::exp(o0) / (std::exp(o0) + std::exp(o1));
    const double p1 = std::exp(o1) / (std::exp(o0) + std::exp(o1));

    const Vector out = saffu_forward(slice, p);
    CHECK(out[0] == doctest::Approx(p0).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(p1).epsilon(1e-12));
}

TEST_CASE("priming defaults and translation constant") {
    CHECK(default_k_u(2) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));  // 1.3863
    CHECK(default_k_w(2) == doctest::Approx(std::log(2.0)).epsilon(1e-12));        // 0.6931
    CHECK(translation_constant(4, 100) == doctest::Approx(11.5129).epsilon(1e-4));
}

TEST_CASE("solve_decoder with K_U = 1 is the log co-occurrence") {
    Matrix h(3, 2), y(3, 2);
    h(0, 0) = 1;
    h(1, 0) = 1;
    h(2, 1) = 1;
    y(0, 0) = 1;
    y(1, 1) = 1;
    y(2, 1) = 1;
    const Matrix u = solve_decoder(h, y, 1.0, EmptyColumnPolicy::Floor);
    const Matrix f = cooccurrence(h, y);
    for (std::size_t j = 0; j < 2; ++j)
        for (std::size_t i = 0; i < 2; ++i)
            CHECK(u(j, i) == doctest::Approx(std::log(std::max(f(j, i), 1e-12))));
}

TEST_CASE("decoder-only gradient step barely moves a near-optimal explicit fit") {
    // one-hot inputs make the explicit solution the exact optimum
    DetRng rng(41);
    const std::size_t d = 6, n = 5, m_count = 500;
    Matrix h(m_count, d), y(m_count, n);
    for (std::size_t m = 0; m < m_count; ++m) {
        const std::size_t j = rng.next() % d;
        h(m, j) = 1.0;
        y(m, (j + rng.next() % 2) % n) = 1.0;
    }
    Matrix u = solve_decoder(h, y, 1.0, EmptyColumnPolicy::Floor);

    auto mean_loss = [&](const Matrix& uu) {
        double total = 0.0;
        for (std::size_t m = 0; m < m_count; ++m) {
            Vector z(n);
            vec_mat(h.row(m), uu, z);
            softmax_inplace(z);
            for (std::size_t i = 0; i < n; ++i)
                if (y(m, i) == 1.0) total -= std::log(z[i]);
        }
        return total / double(m_count);
    };
    const double before = mean_loss(u);

    // one full-batch gradient step on the decoder alone
    Matrix grad(d, n);
    for (std::size_t m = 0; m < m_count; ++m) {
        Vector z(n);
        vec_mat(h.row(m), u, z);
        softmax_inplace(z);
        for (std::size_t i = 0; i < n; ++i) z[i] -= y(m, i);
        add_outer(grad, 1.0 / double(m_count), h.row(m), z);
    }
    Matrix stepped = u;
    for (std::size_t i = 0; i < stepped.a.size(); ++i) stepped.a[i] -= 0.1 * grad.a[i];
    const double after = mean_loss(stepped);
    CHECK(std::abs(after - before) / before < 0.01);
}

TEST_CASE("variational targets collapse to c at an exact prediction") {
    const Matrix table = densified_table(8, 4, 19);
    std::vector<std::int32_t> ids{2, 5, 1};
    const ContextSlice slice{&table, ids, 2};
    SaffuParams p;
    p.mode = Aggregation::Sum;
    p.head = 2;
    DetRng rng(3);
    p.w = Matrix(3, 3);
    p.u = Matrix(4, 6);
    for (double& v : p.w.a) v = rng.uniform();
    for (double& v : p.u.a) v = -0.5 + rng.uniform();

    // soft target equal to the model's own prediction: bracket becomes c * 1
    const Vector pred = saffu_forward(slice, p);
    const double c = 7.25;
    const Vector v_row = variational_targets_row(p, slice, pred, c);
    for (double v : v_row) CHECK(v == doctest::Approx(c).epsilon(1e-9));
}

TEST_CASE("variational targets in cat mode use the bracket's segments") {
    const Matrix table = densified_table(7, 3, 23);
    std::vector<std::int32_t> ids{1, 6};
    const ContextSlice slice{&table, ids, 1};
    SaffuParams p;
    p.mode = Aggregation::Cat;
    p.head = 1;
    DetRng rng(29);
    p.w = Matrix(2, 2);
    p.u = Matrix(6, 4);  // K*D = 6 rows
    for (double& v : p.w.a) v = rng.uniform();
    for (double& v : p.u.a) v = -0.5 + rng.uniform();

    const Vector pred = saffu_forward(slice, p);
    const double c = 3.5;
    const Vector v_row = variational_targets_row(p, slice, pred, c);
    REQUIRE(v_row.size() == 2);
    for (double v : v_row) CHECK(v == doctest::Approx(c).epsilon(1e-9));
}

TEST_CASE("init targets: symmetric degenerate case gives c, shape is M x K") {
    Matrix e(5, 4, 0.25);  // uniform rows
    Matrix y = one_hot_rows(std::vector<std::int32_t>{0, 2, 4}, 5);
    SliceSet s;
    s.table = Matrix(5, 4, 0.25);
    s.ids = {{0, 1}, {2, 3}, {4, 0}};
    s.head = 1;
    const std::vector<std::int32_t> targets{0, 2, 4};
    const double c = 4.0;
    const Matrix v_hat = init_targets(e, y, targets, s.slices(), c);
    CHECK(v_hat.rows == 3);
    CHECK(v_hat.cols == 2);
    for (double v : v_hat.a) CHECK(v == doctest::Approx(c).epsilon(1e-9));
}

TEST_CASE("init targets demand densified embeddings") {
    Matrix e(3, 2);
    e(0, 0) = 1.0;  // zero entries elsewhere
    e(1, 1) = 1.0;
    e(2, 0) = 0.5;
    e(2, 1) = 0.5;
    CHECK_THROWS_WITH_AS(log_embeddings(e), doctest::Contains("requires-densified-embeddings"),
                         std::runtime_error);
}

TEST_CASE("solve_attention: K_W = 1 gives ln F, nonpositive cells are named") {
    Matrix q(3, 2), v(3, 2);
    q(0, 0) = 1.0;
    q(1, 1) = 1.0;
    q(2, 0) = 0.5;
    q(2, 1) = 0.5;
    for (double& x : v.a) x = 2.0;
    const Matrix w = solve_attention(q, v, 1.0);
    const Matrix f = cooccurrence(q, v);
    for (std::size_t i = 0; i < w.a.size(); ++i)
        CHECK(w.a[i] == doctest::Approx(std::log(f.a[i])).epsilon(1e-12));

    v(1, 1) = -10.0;  // drives F(Q,V)[1][1] negative
    CHECK_THROWS_WITH_AS(solve_attention(q, v, 1.0), doctest::Contains("negative-cooccurrence"),
                         std::runtime_error);
    try {
        solve_attention(q, v, 1.0);
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("[1][1]") != std::string::npos);
    }
}

TEST_CASE("alternating explicit fits do not increase loss across stages") {
    // contexts from a densified table; the target depends on a non-head slot
    // so the attention fit has signal to exploit
    const std::size_t n = 10, d = 6, k = 4, m_count = 1200;
    const Matrix table = densified_table(n, d, 57);
    SliceSet s;
    s.table = table;
    s.head = k - 1;
    DetRng rng(91);
    std::vector<std::int32_t> targets(m_count);
    s.ids.resize(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
        s.ids[m].resize(k);
        for (auto& id : s.ids[m]) id = static_cast<std::int32_t>(rng.next() % n);
        // target echoes slot 1's token most of the time
        targets[m] = rng.uniform() < 0.8 ? s.ids[m][1]
                                         : static_cast<std::int32_t>(rng.next() % n);
    }
    const auto slices = s.slices();

    SaffuParams p = saffu_fit_uniform(slices, targets, n, Aggregation::Sum, k - 1);
    const double l0 = ref_loss(p, slices, targets);

    // stage 2: attention from variational targets under the fitted decoder
    const Matrix y = one_hot_rows(targets, n);
    const double c = translation_constant(k, n);
    Matrix q(m_count, k);
    for (std::size_t m = 0; m < m_count; ++m) {
        const Vector qm = quadratic_features(slices[m]);
        std::copy(qm.begin(), qm.end(), q.row(m).begin());
    }
    const Matrix v = variational_targets(p, slices, y, c);
    p.w = solve_attention(q, v, p.k_w);
    const double l1 = ref_loss(p, slices, targets);

    // stage 3: refit the decoder under the new attention
    Matrix h(m_count, d);
    for (std::size_t m = 0; m < m_count; ++m) {
        const Vector hm = hidden_state(attention_weights(quadratic_features(slices[m]), p.w),
                                       slices[m], p.mode);
        std::copy(hm.begin(), hm.end(), h.row(m).begin());
    }
    p.u = solve_decoder(h, y, p.k_u, EmptyColumnPolicy::Floor);
    const double l2 = ref_loss(p, slices, targets);

    CHECK(l1 <= l0 + 1e-9);
    CHECK(l2 <= l1 + 1e-9);
    CHECK(l2 < std::log(double(n)));  // far better than uniform
}
