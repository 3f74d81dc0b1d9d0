#pragma once
#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>
#include <json.hpp>
#include <ordred/error.hpp>

namespace ordred {
namespace config {

using json = nlohmann::ordered_json;

namespace toml {

namespace detail {

inline std::string strip_comment(const std::string& line)
{
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
        if (line[i] == '#' && !quoted) return line.substr(0, i);
    }
    return line;
}

inline std::string trim(const std::string& s)
{
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

[[noreturn]] inline void fail(std::size_t line, const std::string& msg)
{
    ordred::detail::fail_validation("InvalidConfig", "line " + std::to_string(line) + ": " + msg);
}

class ValueParser
{
public:
    ValueParser(const std::string& s, std::size_t line) : s_(s), line_(line) {}

    json parse_all()
    {
        json v = value();
        skip_ws();
        if (pos_ != s_.size()) fail(line_, "trailing characters after value");
        return v;
    }

private:
    void skip_ws()
    {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t')) ++pos_;
    }

    json value()
    {
        skip_ws();
        if (pos_ >= s_.size()) fail(line_, "missing value");
        const char c = s_[pos_];
        if (c == '"') return string();
        if (c == '[') return array();
        if (s_.compare(pos_, 4, "true") == 0) {
            pos_ += 4;
            return true;
        }
        if (s_.compare(pos_, 5, "false") == 0) {
            pos_ += 5;
            return false;
        }
        return number();
    }

    json string()
    {
        ++pos_;
        std::string out;
        while (pos_ < s_.size() && s_[pos_] != '"') {
            if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) {
                const char e = s_[++pos_];
                out += e == 'n' ? '\n' : e == 't' ? '\t' : e;
            } else {
                out += s_[pos_];
            }
            ++pos_;
        }
        if (pos_ >= s_.size()) fail(line_, "unterminated string");
        ++pos_;
        return out;
    }

    json array()
    {
        ++pos_;
        json a = json::array();
        skip_ws();
        if (pos_ < s_.size() && s_[pos_] == ']') {
            ++pos_;
            return a;
        }
        while (true) {
            a.push_back(value());
            skip_ws();
            if (pos_ >= s_.size()) fail(line_, "unterminated array");
            if (s_[pos_] == ',') {
                ++pos_;
                skip_ws();
                if (pos_ < s_.size() && s_[pos_] == ']') {
                    ++pos_;
                    return a;
                }
                continue;
            }
            if (s_[pos_] == ']') {
                ++pos_;
                return a;
            }
            fail(line_, "expected ',' or ']' in array");
        }
    }

    json number()
    {
        const std::size_t start = pos_;
        while (pos_ < s_.size() && std::string_view("+-0123456789.eE_").find(s_[pos_]) != std::string_view::npos) ++pos_;
        std::string tok = s_.substr(start, pos_ - start);
        tok.erase(std::remove(tok.begin(), tok.end(), '_'), tok.end());
        if (tok.empty()) fail(line_, "unrecognized value");
        const char* b = tok.data() + (tok[0] == '+' ? 1 : 0);
        const char* e = tok.data() + tok.size();
        if (tok.find_first_of(".eE") == std::string::npos) {
            long long iv = 0;
            const auto r = std::from_chars(b, e, iv);
            if (r.ec == std::errc() && r.ptr == e) return iv;
        }
        double dv = 0.0;
        const auto r = std::from_chars(b, e, dv);
        if (r.ec != std::errc() || r.ptr != e) fail(line_, "bad number '" + tok + "'");
        return dv;
    }

    const std::string& s_;
    std::size_t line_;
    std::size_t pos_ = 0;
};

} // namespace detail

/**
 * Reads the TOML subset used by config files: `key = value` pairs, `[table]`
 * headers (one level, dotted names allowed), strings, integers, floats,
 * booleans and single-line arrays.
 */
inline json parse(std::istream& in)
{
    json root = json::object();
    json* table = &root;
    std::string raw;
    std::size_t line_no = 0;
    std::set<std::string> tables_seen;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = detail::trim(detail::strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) detail::fail(line_no, "malformed table header");
            const std::string name = detail::trim(line.substr(1, line.size() - 2));
            if (!tables_seen.insert(name).second) detail::fail(line_no, "table '" + name + "' defined twice");
            table = &root;
            std::stringstream ss(name);
            std::string part;
            while (std::getline(ss, part, '.')) {
                part = detail::trim(part);
                if (part.empty()) detail::fail(line_no, "empty table name component");
                json& next = (*table)[part];
                if (next.is_null()) next = json::object();
                if (!next.is_object()) detail::fail(line_no, "'" + part + "' is not a table");
                table = &next;
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) detail::fail(line_no, "expected key = value");
        std::string key = detail::trim(line.substr(0, eq));
        if (key.size() >= 2 && key.front() == '"' && key.back() == '"') key = key.substr(1, key.size() - 2);
        if (key.empty()) detail::fail(line_no, "empty key");
        if (table->contains(key)) detail::fail(line_no, "duplicate key '" + key + "'");
        const std::string value = detail::trim(line.substr(eq + 1));
        (*table)[key] = detail::ValueParser(value, line_no).parse_all();
    }
    return root;
}

} // namespace toml

/// Loads a JSON or TOML configuration file (chosen by extension).
inline json load(const std::string& path)
{
    std::ifstream in(path);
    if (!in) ordred::detail::fail_validation("FileNotFound", "cannot open '" + path + "'", path);
    const bool is_toml = path.size() >= 5 && path.compare(path.size() - 5, 5, ".toml") == 0;
    if (is_toml) return toml::parse(in);
    try {
        json j = json::parse(in);
        if (!j.is_object()) ordred::detail::fail_validation("InvalidConfig", "configuration must be an object", path);
        return j;
    } catch (const json::exception& e) {
        throw ValidationError("InvalidConfig", std::string("configuration is not valid JSON: ") + e.what(), path);
    }
}

/// Rejects any top-level key outside `allowed`.
inline void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where = "configuration")
{
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            ordred::detail::fail_validation("UnknownKey", "unknown key '" + key + "' in " + where, key);
        }
    }
}

template <class T>
T get(const json& j, const std::string& key)
{
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        ordred::detail::fail_validation("InvalidConfig", "key '" + key + "' has the wrong type", key);
    }
}

} // namespace config
} // namespace ordred
