#pragma once

#include <string>
#include <vector>

#include "saffu/corpus.hpp"
#include "saffu/transformer.hpp"

namespace saffu {

struct AblationCell {
    std::size_t r = 0;
    std::size_t b = 0;
    double train_ppl = 0.0;
    double dev_ppl = 0.0;
    std::string error;  // non-empty marks a failed cell

    bool operator==(const AblationCell&) const = default;
};

// One record per (r, b) grid cell, rows r by columns b.
struct AblationGrid {
    std::vector<std::size_t> r_values;
    std::vector<std::size_t> b_values;
    std::vector<AblationCell> cells;  // row-major

    const AblationCell& at(std::size_t ri, std::size_t bi) const {
        return cells[ri * b_values.size() + bi];
    }
    // Appendix-style table: header "r\b,<b...>", cells quoted "train, dev".
    std::string to_csv(int precision = 1) const;
    static AblationGrid from_csv(const std::string& text);

    bool operator==(const AblationGrid&) const = default;
};

struct AblationConfig {
    std::vector<std::size_t> r_values{2, 4, 8, 16, 32, 64, 128};
    std::vector<std::size_t> b_values{2, 4, 8, 16, 32, 64, 128};
    Aggregation block_mode = Aggregation::Sum;
    Aggregation radius_mode = Aggregation::Sum;
    bool doc_model = false;
    std::size_t d_block = 128;
    std::size_t d_radius = 32;
    std::size_t d_hidden = 0;
    std::size_t fold_size = 1000000;
    std::size_t parallel = 1;
    int precision = 1;  // cell rounding (matches the CSV emission)
};

// Explicit-solution initialization only (no backpropagation) per grid cell;
// per-cell failures land in the cell's error marker without aborting.
AblationGrid ablate(const DocumentStream& train_docs, const DocumentStream& dev_docs,
                    std::span<const std::uint64_t> token_counts, const AblationConfig& cfg);

}  // namespace saffu
