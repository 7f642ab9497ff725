#pragma once

#include <map>
#include <string>

namespace saffu {

// Line-oriented "key = value" configuration ('#' starts a comment).
struct Config {
    std::map<std::string, std::string> values;

    static Config parse(const std::string& text);
    static Config load(const std::string& path);

    bool has(const std::string& key) const { return values.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
};

}  // namespace saffu
