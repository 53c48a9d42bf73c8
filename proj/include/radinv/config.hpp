#pragma once

// Plain-text key=value configuration. '#' starts a comment; blank lines are
// ignored; whitespace around keys and values is trimmed.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>

#include "radinv/core.hpp"

namespace radinv {

class KeyValues {
public:
    static KeyValues parse(std::string_view text) {
        KeyValues kv;
        std::istringstream in{std::string(text)};
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const std::string t = trim(line);
            if (t.empty()) continue;
            const auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("line " + std::to_string(lineno) + ": expected key = value, got '" + t + "'");
            const std::string key = trim(t.substr(0, eq));
            const std::string value = trim(t.substr(eq + 1));
            if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
            if (kv.values_.count(key))
                throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
            kv.values_[key] = value;
        }
        return kv;
    }

    static KeyValues load(const std::filesystem::path& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config file " + path.string());
        std::stringstream ss;
        ss << f.rdbuf();
        return parse(ss.str());
    }

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    /// Reads a value if present (marking it consumed), else leaves `out` as its default.
    template <class T>
    void get(const std::string& key, T& out) const {
        auto it = values_.find(key);
        if (it == values_.end()) return;
        used_.insert(key);
        out = convert<T>(key, it->second);
    }

    /// Keys that no reader asked for.
    std::set<std::string> unused() const {
        std::set<std::string> out;
        for (const auto& [k, v] : values_)
            if (!used_.count(k)) out.insert(k);
        return out;
    }

    void reject_unknown() const {
        const auto bad = unused();
        if (bad.empty()) return;
        std::string msg = "unknown config key(s):";
        for (const auto& k : bad) msg += " " + k;
        throw ConfigError(msg);
    }

    const std::map<std::string, std::string>& entries() const { return values_; }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return {};
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    template <class T>
    static T convert(const std::string& key, const std::string& v) {
        if constexpr (std::is_same_v<T, std::string>) {
            return v;
        } else if constexpr (std::is_same_v<T, bool>) {
            if (v == "true" || v == "1" || v == "yes") return true;
            if (v == "false" || v == "0" || v == "no") return false;
            throw ConfigError("key '" + key + "': expected boolean, got '" + v + "'");
        } else if constexpr (std::is_floating_point_v<T>) {
            try {
                std::size_t pos = 0;
                const double d = std::stod(v, &pos);
                if (pos != v.size()) throw std::invalid_argument(v);
                return static_cast<T>(d);
            } catch (const std::exception&) {
                throw ConfigError("key '" + key + "': expected number, got '" + v + "'");
            }
        } else {
            T out{};
            auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
            if (ec != std::errc() || p != v.data() + v.size())
                throw ConfigError("key '" + key + "': expected integer, got '" + v + "'");
            return out;
        }
    }

    std::map<std::string, std::string> values_;
    mutable std::set<std::string> used_;
};

}  // namespace radinv
