#include "saffu/ablation.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "saffu/eval.hpp"
#include "saffu/numerics.hpp"

namespace saffu {

namespace {

double round_to(double v, int precision) {
    const double scale = std::pow(10.0, precision);
    return std::round(v * scale) / scale;
}

std::string fmt(double v, int precision) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
    return buf;
}

// Minimal CSV field splitter honoring double-quoted fields.
std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::exchange(cur, {}));
        } else {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace

std::string AblationGrid::to_csv(int precision) const {
    std::string out = "r\\b";
    for (std::size_t b : b_values) out += "," + std::to_string(b);
    out += '\n';
    for (std::size_t ri = 0; ri < r_values.size(); ++ri) {
        out += std::to_string(r_values[ri]);
        for (std::size_t bi = 0; bi < b_values.size(); ++bi) {
            const AblationCell& cell = at(ri, bi);
            out += ",\"";
            if (cell.error.empty()) {
                out += fmt(cell.train_ppl, precision) + ", " + fmt(cell.dev_ppl, precision);
            } else {
                out += "ERR: " + cell.error;
            }
            out += '"';
        }
        out += '\n';
    }
    return out;
}

AblationGrid AblationGrid::from_csv(const std::string& text) {
    AblationGrid grid;
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("ablation-csv: empty");
    auto header = split_csv_line(line);
    if (header.empty() || header[0] != "r\\b") throw std::runtime_error("ablation-csv: bad header");
    for (std::size_t i = 1; i < header.size(); ++i)
        grid.b_values.push_back(std::stoul(header[i]));
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto fields = split_csv_line(line);
        if (fields.size() != grid.b_values.size() + 1)
            throw std::runtime_error("ablation-csv: ragged row");
        const std::size_t r = std::stoul(fields[0]);
        grid.r_values.push_back(r);
        for (std::size_t bi = 0; bi < grid.b_values.size(); ++bi) {
            AblationCell cell;
            cell.r = r;
            cell.b = grid.b_values[bi];
            const std::string& body = fields[bi + 1];
            if (body.rfind("ERR: ", 0) == 0) {
                cell.error = body.substr(5);
            } else {
                const auto comma = body.find(',');
                if (comma == std::string::npos) throw std::runtime_error("ablation-csv: bad cell");
                cell.train_ppl = std::stod(body.substr(0, comma));
                cell.dev_ppl = std::stod(body.substr(comma + 1));
            }
            grid.cells.push_back(std::move(cell));
        }
    }
    return grid;
}

AblationGrid ablate(const DocumentStream& train_docs, const DocumentStream& dev_docs,
                    std::span<const std::uint64_t> token_counts, const AblationConfig& cfg) {
    AblationGrid grid;
    grid.r_values = cfg.r_values;
    grid.b_values = cfg.b_values;
    grid.cells.resize(cfg.r_values.size() * cfg.b_values.size());

    const std::vector<Fold> folds = fold_stream(train_docs, cfg.fold_size);
    const std::vector<std::size_t>& fit_docs = folds[0].doc_indices;
    std::vector<std::size_t> dev_indices(dev_docs.docs.size());
    std::iota(dev_indices.begin(), dev_indices.end(), 0);

    const auto run_cell = [&](std::size_t idx) {
        AblationCell& cell = grid.cells[idx];
        cell.r = cfg.r_values[idx / cfg.b_values.size()];
        cell.b = cfg.b_values[idx % cfg.b_values.size()];
        try {
            ModelConfig mc;
            mc.n_tokens = token_counts.size();
            mc.block_size = cell.b;
            mc.radius = cell.r;
            mc.d_block = cfg.d_block;
            mc.d_radius = cfg.d_radius;
            mc.d_hidden = cfg.d_hidden;
            mc.block_mode = cfg.block_mode;
            mc.radius_mode = cfg.radius_mode;
            mc.doc_model = cfg.doc_model;
            mc.n_docs = cfg.doc_model ? train_docs.docs.size() : 0;
            TransformerModel model = build_model(mc, token_counts);
            explicit_fit(model, train_docs, fit_docs, FitMode::Init);
            cell.train_ppl = round_to(perplexity(model, train_docs, fit_docs).perplexity,
                                      cfg.precision);
            cell.dev_ppl = round_to(perplexity(model, dev_docs, dev_indices).perplexity,
                                    cfg.precision);
        } catch (const std::exception& e) {
            cell.error = e.what();
        }
    };

    for_each_shard(grid.cells.size(), std::max<std::size_t>(cfg.parallel, 1),
                   [&](std::size_t, std::size_t lo, std::size_t hi) {
                       for (std::size_t i = lo; i < hi; ++i) run_cell(i);
                   });
    return grid;
}

}  // namespace saffu
