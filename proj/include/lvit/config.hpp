#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "lvit/errors.hpp"

namespace lvit {

/// Flat `key=value` text config, one pair per line. The same grammar is used
/// for run config files, `config.resolved` provenance dumps, and the text
/// block embedded in checkpoints. std::map keeps emission order sorted and
/// therefore deterministic.
using KvMap = std::map<std::string, std::string>;

inline std::string_view trim_view(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped; a
/// non-blank line without `=` is malformed.
inline KvMap parse_kv(std::string_view text) {
    KvMap out;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
        line = trim_view(line);
        if (line.empty() || line.front() == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw FormatError("config line " + std::to_string(line_no) + " has no '=': " +
                              std::string(line));
        }
        const std::string key(trim_view(line.substr(0, eq)));
        if (key.empty()) {
            throw FormatError("config line " + std::to_string(line_no) + " has an empty key");
        }
        out[key] = std::string(trim_view(line.substr(eq + 1)));
    }
    return out;
}

inline std::string emit_kv(const KvMap& kv) {
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k;
        out += '=';
        out += v;
        out += '\n';
    }
    return out;
}

/// Shortest decimal form that round-trips the exact double.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::optional<std::string> kv_get(const KvMap& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) return std::nullopt;
    return it->second;
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value) {
    std::uint64_t out = 0;
    const char* first = value.data();
    const char* last = value.data() + value.size();
    const auto res = std::from_chars(first, last, out);
    if (res.ec != std::errc() || res.ptr != last) {
        throw FormatError("key " + key + " expects an unsigned integer, got '" + value + "'");
    }
    return out;
}

inline double parse_f64(const std::string& key, const std::string& value) {
    try {
        std::size_t pos = 0;
        const double out = std::stod(value, &pos);
        if (pos != value.size()) throw std::invalid_argument("trailing junk");
        return out;
    } catch (const std::exception&) {
        throw FormatError("key " + key + " expects a number, got '" + value + "'");
    }
}

inline std::uint64_t kv_u64(const KvMap& kv, const std::string& key, std::uint64_t fallback) {
    auto v = kv_get(kv, key);
    return v ? parse_u64(key, *v) : fallback;
}

inline double kv_f64(const KvMap& kv, const std::string& key, double fallback) {
    auto v = kv_get(kv, key);
    return v ? parse_f64(key, *v) : fallback;
}

inline std::uint64_t kv_u64_required(const KvMap& kv, const std::string& key) {
    auto v = kv_get(kv, key);
    if (!v) throw FormatError("missing required config key: " + key);
    return parse_u64(key, *v);
}

}  // namespace lvit
