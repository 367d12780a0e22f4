#pragma once

#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

namespace latmm {
namespace config {

using KV = std::map<std::string, std::string>;

/// Flat key=value file; '#' starts a comment, blank lines ignored.
inline KV parse(std::istream& in, const std::string& origin) {
    KV kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0)
            throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" +
                                     line + "'");
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        if (kv.count(key)) throw std::runtime_error(origin + ": duplicate key '" + key + "'");
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline KV parse_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open config file: " + path);
    return parse(f, path);
}

inline void write_file(const KV& kv, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write config file: " + path);
    for (const auto& [k, v] : kv) f << k << "=" << v << "\n";
}

/// Typed view over a KV map that tracks key consumption, so unrecognized
/// keys (typos) can be rejected after extraction.
class Reader {
public:
    explicit Reader(KV kv) : kv_(std::move(kv)) {}

    std::string get_string(const std::string& key, const std::string& fallback) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        used_.insert(key);
        return it->second;
    }
    int get_int(const std::string& key, int fallback) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        used_.insert(key);
        try {
            size_t pos = 0;
            const int v = std::stoi(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw std::runtime_error("config key '" + key + "': expected integer, got '" + it->second + "'");
        }
    }
    double get_double(const std::string& key, double fallback) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        used_.insert(key);
        try {
            size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw std::runtime_error("config key '" + key + "': expected number, got '" + it->second + "'");
        }
    }
    bool get_bool(const std::string& key, bool fallback) {
        auto it = kv_.find(key);
        if (it == kv_.end()) return fallback;
        used_.insert(key);
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw std::runtime_error("config key '" + key + "': expected true/false, got '" + it->second + "'");
    }

    void reject_unknown() const {
        for (const auto& [k, v] : kv_)
            if (!used_.count(k)) throw std::runtime_error("unknown config key: '" + k + "'");
    }

private:
    KV kv_;
    std::set<std::string> used_;
};

}  // namespace config
}  // namespace latmm
