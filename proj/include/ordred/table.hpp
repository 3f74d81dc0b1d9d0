#pragma once
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>
#include <ordred/em.hpp>
#include <ordred/error.hpp>
#include <ordred/model.hpp>

namespace ordred {

/// Raw CSV contents: header plus string cells.
struct Table
{
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    int column(const std::string& name) const
    {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) detail::fail_validation("UnknownColumn", "no column named '" + name + "'", name);
        return static_cast<int>(it - header.begin());
    }
};

namespace csv {

inline std::vector<std::string> split_line(const std::string& line, std::size_t line_no)
{
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    if (quoted) detail::fail_validation("MalformedCsv", "unterminated quote on line " + std::to_string(line_no));
    out.push_back(cur);
    return out;
}

inline std::string trim(const std::string& s)
{
    const auto a = s.find_first_not_of(" \t");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t");
    return s.substr(a, b - a + 1);
}

inline Table parse(std::istream& in)
{
    Table t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        std::vector<std::string> cells = split_line(line, line_no);
        for (auto& c : cells) c = trim(c);
        if (t.header.empty()) {
            t.header = std::move(cells);
            std::set<std::string> seen;
            for (const auto& h : t.header) {
                if (h.empty()) detail::fail_validation("MalformedCsv", "empty column name in header");
                if (!seen.insert(h).second) detail::fail_validation("MalformedCsv", "duplicate column '" + h + "'", h);
            }
            continue;
        }
        if (cells.size() != t.header.size()) {
            detail::fail_validation("MalformedCsv", "line " + std::to_string(line_no) + " has " +
                                                        std::to_string(cells.size()) + " fields, expected " +
                                                        std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    if (t.header.empty()) detail::fail_validation("MalformedCsv", "input has no header");
    return t;
}

inline Table read(const std::string& path)
{
    std::ifstream in(path);
    if (!in) detail::fail_validation("FileNotFound", "cannot open '" + path + "'", path);
    return parse(in);
}

inline std::string quote(const std::string& s)
{
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

inline std::optional<double> parse_number(const std::string& s)
{
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    const char* b = s.data();
    const char* e = b + s.size();
    if (*b == '+') ++b;
    const auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc() || res.ptr != e || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline bool is_missing(const std::string& s)
{
    return s.empty() || s == "NA" || s == "NaN" || s == "nan" || s == ".";
}

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

} // namespace csv

struct DatasetSpec
{
    std::string response = "y";
    /// empty: every other column
    std::vector<std::string> predictors;
    /// explicit level order per predictor (required for non-numeric labels)
    std::map<std::string, std::vector<std::string>> levels;
    /// empty: detect (numeric means continuous)
    std::optional<bool> categorical_response;
};

namespace detail {

/// Order-preserving recode of one predictor column to 1..G.
inline std::vector<std::string> column_levels(const Table& t, int col, const std::string& name,
                                              const std::map<std::string, std::vector<std::string>>& explicit_levels)
{
    if (auto it = explicit_levels.find(name); it != explicit_levels.end()) {
        std::set<std::string> uniq(it->second.begin(), it->second.end());
        if (uniq.size() != it->second.size()) fail_validation("InvalidLevels", "repeated level label", name);
        return it->second;
    }
    std::vector<double> values;
    bool all_integer = true;
    for (const auto& row : t.rows) {
        const auto v = csv::parse_number(row[col]);
        if (!v) fail_validation("NonOrdinalColumn", "non-numeric labels need an explicit level order", name);
        values.push_back(*v);
        all_integer = all_integer && std::floor(*v) == *v && std::abs(*v) < 1e9;
    }
    std::vector<std::string> out;
    if (all_integer) {
        // integer codes span a contiguous range; gaps become unobserved levels
        const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
        for (long c = static_cast<long>(*lo); c <= static_cast<long>(*hi); ++c) out.push_back(std::to_string(c));
        return out;
    }
    std::set<double> uniq(values.begin(), values.end());
    for (double v : uniq) out.push_back(csv::format_double(v));
    return out;
}

inline int level_code(const std::vector<std::string>& levels, const std::string& cell, const std::string& name)
{
    for (std::size_t k = 0; k < levels.size(); ++k) {
        if (levels[k] == cell) return static_cast<int>(k) + 1;
    }
    // numeric labels may be written differently ("2" vs "2.0")
    if (const auto v = csv::parse_number(cell)) {
        for (std::size_t k = 0; k < levels.size(); ++k) {
            const auto lv = csv::parse_number(levels[k]);
            if (lv && *lv == *v) return static_cast<int>(k) + 1;
        }
    }
    fail_validation("UnknownLevel", "label '" + cell + "' is not a known level", name);
}

} // namespace detail

/// Builds and validates an OrdinalDataset from a parsed table.
inline OrdinalDataset validate_dataset(const Table& t, const DatasetSpec& spec = {})
{
    const int ycol = t.column(spec.response);
    std::vector<int> pcols;
    std::vector<std::string> pnames;
    if (spec.predictors.empty()) {
        for (int c = 0; c < static_cast<int>(t.header.size()); ++c) {
            if (c != ycol) {
                pcols.push_back(c);
                pnames.push_back(t.header[c]);
            }
        }
    } else {
        for (const auto& name : spec.predictors) {
            pcols.push_back(t.column(name));
            pnames.push_back(name);
        }
    }
    for (const auto& [name, lv] : spec.levels) {
        if (std::find(pnames.begin(), pnames.end(), name) == pnames.end()) {
            detail::fail_validation("UnknownColumn", "level order given for unknown predictor '" + name + "'", name);
        }
    }
    if (pcols.empty()) detail::fail_validation("InvalidDataset", "need at least 1 predictor");
    const int n = static_cast<int>(t.rows.size());
    if (n < 2) detail::fail_validation("InvalidDataset", "need at least 2 observations");

    for (int r = 0; r < n; ++r) {
        if (csv::is_missing(t.rows[r][ycol])) {
            detail::fail_validation("MissingValue", "missing response on data row " + std::to_string(r + 1),
                                    spec.response);
        }
        for (std::size_t k = 0; k < pcols.size(); ++k) {
            if (csv::is_missing(t.rows[r][pcols[k]])) {
                detail::fail_validation("MissingValue", "missing value on data row " + std::to_string(r + 1), pnames[k]);
            }
        }
    }

    OrdinalDataset d;
    d.response_name = spec.response;
    d.predictor_names = pnames;
    d.x.resize(n, static_cast<Eigen::Index>(pcols.size()));
    d.g.resize(pcols.size());
    d.level_labels.resize(pcols.size());
    for (std::size_t k = 0; k < pcols.size(); ++k) {
        d.level_labels[k] = detail::column_levels(t, pcols[k], pnames[k], spec.levels);
        d.g[k] = static_cast<int>(d.level_labels[k].size());
        std::set<int> seen;
        for (int r = 0; r < n; ++r) {
            d.x(r, static_cast<Eigen::Index>(k)) = detail::level_code(d.level_labels[k], t.rows[r][pcols[k]], pnames[k]);
            seen.insert(d.x(r, static_cast<Eigen::Index>(k)));
        }
        if (seen.size() < 2) detail::fail_validation("NonOrdinalColumn", "column is constant", pnames[k]);
    }

    bool numeric = true;
    for (int r = 0; r < n && numeric; ++r) numeric = csv::parse_number(t.rows[r][ycol]).has_value();
    d.categorical_response = spec.categorical_response.value_or(!numeric);
    d.y.resize(n);
    if (d.categorical_response) {
        std::set<std::string> labels;
        for (int r = 0; r < n; ++r) labels.insert(t.rows[r][ycol]);
        d.response_labels.assign(labels.begin(), labels.end());
        if (numeric) {
            std::sort(d.response_labels.begin(), d.response_labels.end(), [](const std::string& a, const std::string& b) {
                return *csv::parse_number(a) < *csv::parse_number(b);
            });
        }
        for (int r = 0; r < n; ++r) {
            const auto it = std::find(d.response_labels.begin(), d.response_labels.end(), t.rows[r][ycol]);
            d.y(r) = static_cast<double>(it - d.response_labels.begin());
        }
        if (d.response_labels.size() < 2) {
            detail::fail_validation("InvalidDataset", "categorical response needs at least 2 classes", spec.response);
        }
    } else {
        if (!numeric) detail::fail_validation("InvalidDataset", "continuous response must be numeric", spec.response);
        for (int r = 0; r < n; ++r) d.y(r) = *csv::parse_number(t.rows[r][ycol]);
    }
    d.validate();
    return d;
}

/// Codes of new observations under a fitted model's predictor names and level labels.
inline IMat encode_predictors(const Table& t, const FittedModel& m)
{
    const int n = static_cast<int>(t.rows.size());
    IMat x(n, m.p());
    for (int j = 0; j < m.p(); ++j) {
        const std::string name = m.name(j);
        const int col = t.column(name);
        for (int r = 0; r < n; ++r) {
            const std::string& cell = t.rows[r][col];
            if (csv::is_missing(cell)) {
                detail::fail_validation("MissingValue", "missing value on data row " + std::to_string(r + 1), name);
            }
            if (j < static_cast<int>(m.level_labels.size()) && !m.level_labels[j].empty()) {
                x(r, j) = detail::level_code(m.level_labels[j], cell, name);
            } else {
                const auto v = csv::parse_number(cell);
                if (!v || std::floor(*v) != *v) detail::fail_validation("UnknownLevel", "code is not an integer", name);
                x(r, j) = static_cast<int>(*v);
            }
            if (x(r, j) < 1 || x(r, j) > static_cast<int>(m.level_maps[j].to.size())) {
                detail::fail_validation("UnknownLevel", "code outside the fitted level range", name);
            }
        }
    }
    return x;
}

/// Writes a numeric matrix with the given header at round-trip precision.
inline void write_matrix(std::ostream& out, const std::vector<std::string>& header, const Mat& m)
{
    for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << csv::quote(header[k]);
    out << "\n";
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) out << (j ? "," : "") << csv::format_double(m(i, j));
        out << "\n";
    }
}

/// Writes a dataset back out using its original labels.
inline void write_dataset(std::ostream& out, const OrdinalDataset& d)
{
    for (int j = 0; j < d.p(); ++j) out << csv::quote(d.column_name(j)) << ",";
    out << csv::quote(d.response_name) << "\n";
    for (int i = 0; i < d.n(); ++i) {
        for (int j = 0; j < d.p(); ++j) {
            const int c = d.x(i, j);
            if (j < static_cast<int>(d.level_labels.size()) && !d.level_labels[j].empty()) {
                out << csv::quote(d.level_labels[j][c - 1]);
            } else {
                out << c;
            }
            out << ",";
        }
        if (d.categorical_response && !d.response_labels.empty()) {
            out << csv::quote(d.response_labels[static_cast<int>(d.y(i))]);
        } else {
            out << csv::format_double(d.y(i));
        }
        out << "\n";
    }
}

} // namespace ordred
