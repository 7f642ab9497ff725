#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace saffu {

std::string read_file(const std::string& path);

// Write-then-rename so output paths are replaced atomically.
void atomic_write(const std::string& path, const std::string& content);

// FNV-1a 64-bit, used for manifest content hashes.
std::uint64_t fnv1a64(const std::string& data);
std::string fnv1a64_hex(const std::string& data);

// Manifest of artifacts under an output directory: "<hash>  <name>" lines.
void write_manifest(const std::string& out_dir, const std::vector<std::string>& filenames);

// Deterministic 64-bit generator (splitmix64) with uniform doubles in [0, 1);
// identical streams on every platform for a given seed.
struct DetRng {
    std::uint64_t state;
    explicit DetRng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        state += 0x9e3779b97f4a7c15ull;
        std::uint64_t z = state;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
};

}  // namespace saffu
