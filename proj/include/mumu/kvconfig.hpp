#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "mumu/common.hpp"

namespace mumu {

/// key=value config file; '#' starts a comment, blank lines ignored.
class KvConfig {
  public:
    KvConfig() = default;

    static KvConfig parse(const std::string &text) {
        KvConfig c;
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            std::string k = trim(line.substr(0, eq));
            std::string v = trim(line.substr(eq + 1));
            if (!k.empty()) c.values_[k] = v;
        }
        return c;
    }

    static KvConfig load(const std::string &path) {
        std::ifstream f(path);
        if (!f) throw IoError("config: cannot read " + path);
        std::ostringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    bool has(const std::string &key) const { return values_.count(key) > 0; }

    std::string get(const std::string &key, const std::string &fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    int64_t get_int(const std::string &key, int64_t fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stoll(it->second);
    }

    double get_double(const std::string &key, double fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : std::stod(it->second);
    }

    void set(const std::string &key, const std::string &v) { values_[key] = v; }
    void set_int(const std::string &key, int64_t v) { values_[key] = std::to_string(v); }
    void set_double(const std::string &key, double v) {
        std::ostringstream ss;
        ss.precision(17);
        ss << v;
        values_[key] = ss.str();
    }

    const std::map<std::string, std::string> &items() const { return values_; }

    std::string to_text() const {
        std::ostringstream ss;
        for (const auto &[k, v] : values_) ss << k << "=" << v << "\n";
        return ss.str();
    }

  private:
    static std::string trim(const std::string &s) {
        size_t b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        size_t e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

} // namespace mumu
