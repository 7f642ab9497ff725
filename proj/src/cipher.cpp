#include "saffu/cipher.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace saffu {

namespace {

using Bits = std::vector<std::uint8_t>;

std::uint64_t pack_bits(const Bits& z) {
    std::uint64_t key = 0;
    for (std::size_t d = 0; d < z.size(); ++d)
        if (z[d]) key |= std::uint64_t{1} << d;
    return key;
}

}  // namespace

CipherPair bit_cipher(std::size_t n, std::size_t d) {
    if (n < 1 || d < 1 || d > 63) throw std::runtime_error("cipher-capacity-exceeded: invalid shape");
    // Capacity is the number of nonzero d-bit patterns.
    if (d < 63 && n > (std::uint64_t{1} << d) - 1)
        throw std::runtime_error("cipher-capacity-exceeded: n > 2^d - 1");

    CipherPair out{Matrix(n, d), Matrix(n, d)};

    // prev/cur are the norm-(stage-1) and norm-stage vector lists; candidates
    // at stage k are |prev[j] - basis[i]|, kept when the norm comes out as k
    // and the pattern is unused. basis order reverses once after stage 1, the
    // stage list reverses every time a stage completes.
    std::vector<Bits> prev{Bits(d, 0)};
    std::vector<Bits> cur;
    std::vector<std::size_t> basis(d);
    for (std::size_t k = 0; k < d; ++k) basis[k] = k;

    std::unordered_set<std::uint64_t> used;
    std::size_t i = 0, j = 0, stage = 1;

    for (std::size_t row = 0; row < n; ++row) {
        bool assigned = false;
        while (!assigned) {
            Bits z = prev[j];
            z[basis[i]] ^= 1;  // |prev - e_i| flips one component
            std::size_t norm = 0;
            for (std::uint8_t b : z) norm += b;
            if (norm == stage) {
                const std::uint64_t key = pack_bits(z);
                if (used.insert(key).second) {
                    cur.push_back(z);
                    for (std::size_t c = 0; c < d; ++c) {
                        out.z(row, c) = z[c];
                        out.e(row, c) = z[c] / static_cast<double>(norm);
                    }
                    assigned = true;
                }
            }
            if (++j == prev.size()) {
                j = 0;
                if (++i == d) {
                    if (stage == 1) std::reverse(basis.begin(), basis.end());
                    i = 0;
                    std::reverse(cur.begin(), cur.end());
                    prev = std::move(cur);
                    cur.clear();
                    ++stage;
                    if (stage > d && !assigned) throw std::runtime_error("cipher-capacity-exceeded");
                }
            }
        }
    }
    return out;
}

NoiseModel noise_model(const Matrix& e, const std::vector<std::uint64_t>& counts) {
    if (counts.size() != e.rows) throw std::runtime_error("dimension-mismatch: counts vs embeddings");
    NoiseModel nm;
    nm.q.resize(e.rows);
    nm.mean_embedding.assign(e.cols, 0.0);
    double total = 0.0;
    for (std::size_t r = 0; r < e.rows; ++r) {
        const double f = static_cast<double>(counts[r]);
        nm.q[r] = f / (f + 1.0);
        axpy(f, e.row(r), nm.mean_embedding);
        total += f;
    }
    if (total <= 0.0) throw std::runtime_error("degenerate-noise-model: no counts");
    for (double& v : nm.mean_embedding) v /= total;

    nm.p.resize(e.cols);
    double z = 0.0;
    for (std::size_t c = 0; c < e.cols; ++c) {
        nm.p[c] = 1.0 - nm.mean_embedding[c];
        z += std::abs(nm.p[c]);
    }
    if (z <= 0.0) throw std::runtime_error("degenerate-noise-model");
    for (double& v : nm.p) v /= z;
    return nm;
}

Matrix densify(const Matrix& e, const std::vector<std::uint64_t>& counts) {
    const NoiseModel nm = noise_model(e, counts);
    Matrix out(e.rows, e.cols);
    for (std::size_t r = 0; r < e.rows; ++r) {
        for (std::size_t c = 0; c < e.cols; ++c)
            out(r, c) = nm.q[r] * e(r, c) + (1.0 - nm.q[r]) * nm.p[c];
    }
    return out;
}

}  // namespace saffu
