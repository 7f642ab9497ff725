#include "saffu/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "saffu/util.hpp"

namespace saffu {

namespace {

constexpr const char* kMagic = "SAFFU-CKPT";
constexpr int kVersion = 1;

std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void append_matrix(std::string& out, const std::string& name, const Matrix& m) {
    out += name + " " + std::to_string(m.rows) + " " + std::to_string(m.cols) + "\n";
    const std::size_t bytes = m.a.size() * sizeof(double);
    const std::size_t at = out.size();
    out.resize(at + bytes);
    std::memcpy(out.data() + at, m.a.data(), bytes);
}

const char* mode_name(Aggregation m) { return m == Aggregation::Sum ? "sum" : "cat"; }

Aggregation parse_mode(const std::string& s) {
    if (s == "sum") return Aggregation::Sum;
    if (s == "cat") return Aggregation::Cat;
    throw std::runtime_error("checkpoint: unknown aggregation mode " + s);
}

}  // namespace

void save_checkpoint(const TransformerModel& model, const std::string& path) {
    std::string out;
    out += std::string(kMagic) + " " + std::to_string(kVersion) + "\n";
    out += "n " + std::to_string(model.cfg.n_tokens) + "\n";
    out += "block_size " + std::to_string(model.cfg.block_size) + "\n";
    out += "radius " + std::to_string(model.cfg.radius) + "\n";
    out += "d_block " + std::to_string(model.cfg.d_block) + "\n";
    out += "d_radius " + std::to_string(model.cfg.d_radius) + "\n";
    out += "d_hidden " + std::to_string(model.cfg.d_hidden) + "\n";
    out += std::string("block_mode ") + mode_name(model.cfg.block_mode) + "\n";
    out += std::string("radius_mode ") + mode_name(model.cfg.radius_mode) + "\n";
    out += "block_head " + std::to_string(model.block.head) + "\n";
    out += "radius_head " + std::to_string(model.radius.head) + "\n";
    out += "c_block " + fmt_double(model.c_block) + "\n";
    out += "c_radius " + fmt_double(model.c_radius) + "\n";
    out += "k_w_block " + fmt_double(model.block.k_w) + "\n";
    out += "k_u_block " + fmt_double(model.block.k_u) + "\n";
    out += "k_w_radius " + fmt_double(model.radius.k_w) + "\n";
    out += "k_u_radius " + fmt_double(model.radius.k_u) + "\n";
    out += std::string("doc_model ") + (model.cfg.doc_model ? "1" : "0") + "\n";
    out += "n_docs " + std::to_string(model.cfg.n_docs) + "\n";

    const std::size_t n_mats = model.cfg.doc_model ? 9 : 8;
    out += "matrices " + std::to_string(n_mats) + "\n";
    append_matrix(out, "e_block", model.e_block);
    append_matrix(out, "e_radius", model.e_radius);
    append_matrix(out, "z_hidden", model.z_hidden);
    append_matrix(out, "w_block", model.block.w);
    append_matrix(out, "u_block", model.block.u);
    append_matrix(out, "w_radius", model.radius.w);
    append_matrix(out, "u_radius", model.radius.u);
    if (model.cfg.doc_model) append_matrix(out, "d_doc", model.doc_matrix);
    append_matrix(out, "m", model.final_decoder);
    atomic_write(path, out);
}

TransformerModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("checkpoint: empty file");
    {
        std::istringstream head(line);
        std::string magic;
        int version = 0;
        head >> magic >> version;
        if (magic != kMagic) throw std::runtime_error("checkpoint: bad magic");
        if (version != kVersion)
            throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }

    std::map<std::string, std::string> fields;
    std::size_t n_mats = 0;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string key, value;
        ls >> key >> value;
        if (key == "matrices") {
            n_mats = std::stoul(value);
            break;
        }
        fields[key] = value;
    }
    auto field = [&](const std::string& key) -> const std::string& {
        auto it = fields.find(key);
        if (it == fields.end()) throw std::runtime_error("checkpoint: missing field " + key);
        return it->second;
    };

    TransformerModel model;
    model.cfg.n_tokens = std::stoul(field("n"));
    model.cfg.block_size = std::stoul(field("block_size"));
    model.cfg.radius = std::stoul(field("radius"));
    model.cfg.d_block = std::stoul(field("d_block"));
    model.cfg.d_radius = std::stoul(field("d_radius"));
    model.cfg.d_hidden = std::stoul(field("d_hidden"));
    model.cfg.block_mode = parse_mode(field("block_mode"));
    model.cfg.radius_mode = parse_mode(field("radius_mode"));
    model.cfg.doc_model = field("doc_model") == "1";
    model.cfg.n_docs = std::stoul(field("n_docs"));
    model.c_block = std::stod(field("c_block"));
    model.c_radius = std::stod(field("c_radius"));

    model.block.mode = model.cfg.block_mode;
    model.block.head = std::stoul(field("block_head"));
    model.block.k_w = std::stod(field("k_w_block"));
    model.block.k_u = std::stod(field("k_u_block"));
    model.radius.mode = model.cfg.radius_mode;
    model.radius.head = std::stoul(field("radius_head"));
    model.radius.k_w = std::stod(field("k_w_radius"));
    model.radius.k_u = std::stod(field("k_u_radius"));

    for (std::size_t i = 0; i < n_mats; ++i) {
        if (!std::getline(in, line)) throw std::runtime_error("checkpoint: truncated matrix table");
        std::istringstream ls(line);
        std::string name;
        std::size_t rows = 0, cols = 0;
        ls >> name >> rows >> cols;
        Matrix m(rows, cols);
        in.read(reinterpret_cast<char*>(m.a.data()),
                static_cast<std::streamsize>(m.a.size() * sizeof(double)));
        if (!in) throw std::runtime_error("checkpoint: truncated matrix " + name);
        if (name == "e_block") model.e_block = std::move(m);
        else if (name == "e_radius") model.e_radius = std::move(m);
        else if (name == "z_hidden") model.z_hidden = std::move(m);
        else if (name == "w_block") model.block.w = std::move(m);
        else if (name == "u_block") model.block.u = std::move(m);
        else if (name == "w_radius") model.radius.w = std::move(m);
        else if (name == "u_radius") model.radius.u = std::move(m);
        else if (name == "d_doc") model.doc_matrix = std::move(m);
        else if (name == "m") model.final_decoder = std::move(m);
        else throw std::runtime_error("checkpoint: unknown matrix " + name);
    }

    // Hidden soft targets derive from the stored raw codes.
    model.y_hidden = Matrix(model.z_hidden.rows, model.z_hidden.cols);
    for (std::size_t r = 0; r < model.z_hidden.rows; ++r) {
        const double norm = norm1(model.z_hidden.row(r));
        if (norm <= 0.0) throw std::runtime_error("checkpoint: zero hidden code row");
        for (std::size_t c = 0; c < model.z_hidden.cols; ++c)
            model.y_hidden(r, c) = model.z_hidden(r, c) / norm;
    }
    return model;
}

}  // namespace saffu
