#pragma once

#include <cstdint>
#include <vector>

#include "saffu/matrix.hpp"

namespace saffu {

// Bit-cipher output: Z holds the raw bit-vectors, E the 1-norm-normalized
// rows used as embeddings. Row n's bit count is non-decreasing in n and the
// first D rows are the standard basis.
struct CipherPair {
    Matrix z;  // N x D, entries in {0, 1}
    Matrix e;  // N x D, rows nonnegative with unit 1-norm
};

// Assigns the first n nonzero D-bit patterns in order of decreasing
// discernability (increasing bit-norm, with the stated reversal steps
// between norm stages). Pure function of (n, d).
CipherPair bit_cipher(std::size_t n, std::size_t d);

// Noise model for densification: q[n] = f[n]/(f[n]+1), p is the normalized
// complement of the count-weighted average embedding.
struct NoiseModel {
    Vector q;
    Vector p;
    Vector mean_embedding;
};

NoiseModel noise_model(const Matrix& e, const std::vector<std::uint64_t>& counts);

// E'[n] = q[n] * E[n] + (1 - q[n]) * p. Rows stay unit 1-norm and become
// strictly positive for non-degenerate noise.
Matrix densify(const Matrix& e, const std::vector<std::uint64_t>& counts);

}  // namespace saffu
