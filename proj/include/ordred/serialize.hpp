#pragma once
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <json.hpp>
#include <ordred/em.hpp>
#include <ordred/error.hpp>

namespace ordred {
namespace io {

using json = nlohmann::ordered_json;

inline constexpr const char* model_schema = "ordred.model";
inline constexpr int model_version = 1;

/// Exact text form of a double (C99 hex float); inf and nan spelled out.
inline std::string hex(double v)
{
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

inline double unhex(const json& j)
{
    if (j.is_number()) return j.get<double>();
    if (!j.is_string()) detail::fail_validation("InvalidModelFile", "expected a hex-float string");
    const std::string s = j.get<std::string>();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') detail::fail_validation("InvalidModelFile", "bad number '" + s + "'");
    return v;
}

inline json vec_json(const Vec& v)
{
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(hex(v(i)));
    return a;
}

inline json mat_json(const Mat& m)
{
    json o;
    o["rows"] = m.rows();
    o["cols"] = m.cols();
    json a = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back(hex(m(i, j)));
    }
    o["data"] = std::move(a);
    return o;
}

inline Vec json_vec(const json& a)
{
    if (!a.is_array()) detail::fail_validation("InvalidModelFile", "expected an array");
    Vec v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = unhex(a[i]);
    return v;
}

inline Mat json_mat(const json& o)
{
    const auto rows = o.at("rows").get<Eigen::Index>();
    const auto cols = o.at("cols").get<Eigen::Index>();
    const json& a = o.at("data");
    if (static_cast<Eigen::Index>(a.size()) != rows * cols) {
        detail::fail_validation("InvalidModelFile", "matrix data size mismatch");
    }
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = unhex(a[static_cast<std::size_t>(i * cols + j)]);
    }
    return m;
}

inline std::vector<double> json_doubles(const json& a)
{
    std::vector<double> out;
    for (const auto& v : a) out.push_back(unhex(v));
    return out;
}

inline json doubles_json(const std::vector<double>& v)
{
    json a = json::array();
    for (double x : v) a.push_back(hex(x));
    return a;
}

inline json to_json(const FittedModel& m)
{
    json j;
    j["schema"] = model_schema;
    j["version"] = model_version;
    j["backend"] = to_string(m.backend);
    j["seed"] = m.seed;
    j["d"] = m.d;
    j["converged"] = m.converged;
    j["iterations"] = m.iterations;
    j["lambda"] = hex(m.lambda);
    j["unconverged_moments"] = m.unconverged_moments;
    j["q_trace"] = doubles_json(m.q_trace);
    j["params"] = {{"delta", mat_json(m.params.delta)}, {"alpha", mat_json(m.params.alpha)}, {"xi", mat_json(m.params.xi)}};
    json th = json::array();
    for (const Vec& c : m.thresholds.cuts) th.push_back(vec_json(c));
    j["thresholds"] = std::move(th);
    j["basis"] = {{"kind", m.basis.spec.kind == BasisSpec::Kind::polynomial ? "polynomial" : "slice"},
                  {"size", m.basis.spec.size},
                  {"categorical", m.basis.categorical},
                  {"center", vec_json(m.basis.center)},
                  {"edges", doubles_json(m.basis.edges)}};
    json maps = json::array();
    for (const LevelMap& lm : m.level_maps) maps.push_back({{"to", lm.to}, {"levels", lm.levels}});
    j["level_maps"] = std::move(maps);
    j["slices"] = {{"fbar", mat_json(m.slices.fbar)}, {"prior", vec_json(m.slices.prior)},
                   {"edges", doubles_json(m.slices.edges)}};
    j["response_name"] = m.response_name;
    j["response_labels"] = m.response_labels;
    j["predictor_names"] = m.predictor_names;
    j["level_labels"] = m.level_labels;
    return j;
}

inline FittedModel from_json(const json& j)
{
    try {
        if (j.at("schema").get<std::string>() != model_schema) {
            detail::fail_validation("InvalidModelFile", "not a model document");
        }
        const int version = j.at("version").get<int>();
        if (version != model_version) {
            detail::fail_validation("UnsupportedVersion", "model schema version " + std::to_string(version));
        }
        FittedModel m;
        const std::string backend = j.at("backend").get<std::string>();
        if (backend != "approximate" && backend != "exact") detail::fail_validation("InvalidModelFile", "unknown backend");
        m.backend = backend == "exact" ? Backend::exact : Backend::approximate;
        m.seed = j.at("seed").get<std::uint64_t>();
        m.d = j.at("d").get<int>();
        m.converged = j.at("converged").get<bool>();
        m.iterations = j.at("iterations").get<int>();
        m.lambda = unhex(j.at("lambda"));
        m.unconverged_moments = j.at("unconverged_moments").get<int>();
        m.q_trace = json_doubles(j.at("q_trace"));
        const json& p = j.at("params");
        m.params.delta = json_mat(p.at("delta"));
        m.params.alpha = json_mat(p.at("alpha"));
        m.params.xi = json_mat(p.at("xi"));
        for (const auto& c : j.at("thresholds")) m.thresholds.cuts.push_back(json_vec(c));
        const json& b = j.at("basis");
        const std::string kind = b.at("kind").get<std::string>();
        if (kind != "polynomial" && kind != "slice") detail::fail_validation("InvalidModelFile", "unknown basis kind");
        m.basis.spec.kind = kind == "polynomial" ? BasisSpec::Kind::polynomial : BasisSpec::Kind::slice;
        m.basis.spec.size = b.at("size").get<int>();
        m.basis.categorical = b.at("categorical").get<bool>();
        m.basis.center = json_vec(b.at("center"));
        m.basis.edges = json_doubles(b.at("edges"));
        for (const auto& lm : j.at("level_maps")) {
            LevelMap l;
            l.to = lm.at("to").get<std::vector<int>>();
            l.levels = lm.at("levels").get<int>();
            m.level_maps.push_back(std::move(l));
        }
        const json& s = j.at("slices");
        m.slices.fbar = json_mat(s.at("fbar"));
        m.slices.prior = json_vec(s.at("prior"));
        m.slices.edges = json_doubles(s.at("edges"));
        m.response_name = j.at("response_name").get<std::string>();
        m.response_labels = j.at("response_labels").get<std::vector<std::string>>();
        m.predictor_names = j.at("predictor_names").get<std::vector<std::string>>();
        m.level_labels = j.at("level_labels").get<std::vector<std::vector<std::string>>>();
        if (m.params.d() != m.d || static_cast<int>(m.level_maps.size()) != m.p() || m.thresholds.p() != m.p()) {
            detail::fail_validation("InvalidModelFile", "inconsistent dimensions");
        }
        m.validate();
        return m;
    } catch (const json::exception& e) {
        throw ValidationError("InvalidModelFile", std::string("malformed model document: ") + e.what());
    } catch (const NumericalError& e) {
        throw ValidationError("InvalidModelFile", std::string("model violates invariants: ") + e.what());
    }
}

inline std::string dump(const FittedModel& m) { return to_json(m).dump(2) + "\n"; }

inline void save(const FittedModel& m, const std::string& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) detail::fail_validation("FileNotWritable", "cannot write '" + path + "'", path);
    out << dump(m);
}

inline FittedModel load(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) detail::fail_validation("FileNotFound", "cannot open '" + path + "'", path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError("InvalidModelFile", std::string("model file is not JSON: ") + e.what(), path);
    }
    return from_json(j);
}

} // namespace io
} // namespace ordred
