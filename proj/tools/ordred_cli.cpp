#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <ordred/bench.hpp>
#include <ordred/ordred.hpp>

using namespace ordred;
using json = nlohmann::ordered_json;

namespace {

enum Exit { ok = 0, validation = 2, numerical = 3, internal = 4 };

void report_error(const char* category, const std::string& kind, const std::string& message,
                  const std::string& subject = {})
{
    json e = {{"error", {{"category", category}, {"kind", kind}, {"message", message}}}};
    if (!subject.empty()) e["error"]["subject"] = subject;
    std::cerr << e.dump() << "\n";
}

/// Flag value if given, else config value, else default.
class Settings
{
public:
    json cfg = json::object();

    template <class T>
    T pick(const std::optional<T>& flag, const std::string& key, T fallback) const
    {
        if (flag) return *flag;
        if (cfg.contains(key)) return config::get<T>(cfg, key);
        return fallback;
    }

    template <class T>
    std::optional<T> maybe(const std::optional<T>& flag, const std::string& key) const
    {
        if (flag) return flag;
        if (cfg.contains(key)) return config::get<T>(cfg, key);
        return std::nullopt;
    }

    std::string require(const std::optional<std::string>& flag, const std::string& key, const char* what) const
    {
        const auto v = maybe(flag, key);
        if (!v || v->empty()) detail::fail_validation("MissingOption", std::string("missing ") + what, key);
        return *v;
    }
};

struct Common
{
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    bool no_timing = false;
};

void add_common(CLI::App* app, Common& c)
{
    app->add_option("--config", c.config, "JSON or TOML configuration file (flags override it)");
    app->add_option("--seed", c.seed, "master seed (falls back to ORDRED_SEED)");
    app->add_option("--threads", c.threads, "worker threads (default: available parallelism)")->check(CLI::PositiveNumber);
    app->add_flag("--no-timing", c.no_timing, "omit wall-clock fields so outputs are byte-comparable");
}

Settings load_settings(const Common& c, std::vector<std::string> allowed)
{
    Settings s;
    if (c.config) {
        s.cfg = config::load(*c.config);
        for (const char* k : {"seed", "threads", "no_timing"}) allowed.emplace_back(k);
        config::check_keys(s.cfg, allowed);
    }
    return s;
}

std::uint64_t resolve_seed(const Common& c, const Settings& s)
{
    if (c.seed) return *c.seed;
    if (s.cfg.contains("seed")) return config::get<std::uint64_t>(s.cfg, "seed");
    if (const char* env = std::getenv("ORDRED_SEED")) {
        std::uint64_t v = 0;
        const std::string str(env);
        const auto res = std::from_chars(str.data(), str.data() + str.size(), v);
        if (res.ec != std::errc() || res.ptr != str.data() + str.size()) {
            detail::fail_validation("InvalidSeed", "ORDRED_SEED is not an unsigned integer", "ORDRED_SEED");
        }
        return v;
    }
    return 1;
}

int resolve_threads(const Common& c, const Settings& s)
{
    const int t = s.pick(c.threads, "threads", default_threads());
    if (t < 1) detail::fail_validation("InvalidThreads", "threads must be positive", "threads");
    return t;
}

bool resolve_no_timing(const Common& c, const Settings& s)
{
    return c.no_timing || (s.cfg.contains("no_timing") && config::get<bool>(s.cfg, "no_timing"));
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = csv::trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

Backend parse_backend(const std::string& s)
{
    if (s == "approximate" || s == "approx") return Backend::approximate;
    if (s == "exact") return Backend::exact;
    detail::fail_validation("InvalidOption", "backend must be approximate or exact", "backend");
}

void write_text(const std::string& path, const std::string& text)
{
    if (path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) detail::fail_validation("FileNotWritable", "cannot write '" + path + "'", path);
    out << text;
}

// ---------------------------------------------------------------------------
// Data and model options shared by fit and select-dim

struct DataFlags
{
    std::optional<std::string> input;
    std::optional<std::string> response;
    std::optional<std::string> predictors;
    bool categorical = false;
    std::optional<std::string> basis;
    std::optional<int> basis_size;
    std::optional<std::string> backend;
    std::optional<double> tol;
    std::optional<int> max_iter;
    std::optional<int> reduction_slices;
    std::optional<int> qmc_points;
};

const std::vector<std::string> data_keys = {"input",   "response", "predictors", "levels",           "categorical_response",
                                            "basis",   "basis_size", "backend",  "tol",              "max_iter",
                                            "reduction_slices", "qmc_points"};

void add_data_flags(CLI::App* app, DataFlags& f)
{
    app->add_option("--in", f.input, "input CSV");
    app->add_option("--response", f.response, "response column (default y)");
    app->add_option("--predictors", f.predictors, "comma-separated predictor columns (default: all others)");
    app->add_flag("--categorical-response", f.categorical, "treat the response as class labels");
    app->add_option("--basis", f.basis, "poly or slice")->check(CLI::IsMember({"poly", "slice"}));
    app->add_option("--basis-size", f.basis_size, "polynomial degree or number of slices");
    app->add_option("--backend", f.backend, "approximate or exact E-step")
        ->check(CLI::IsMember({"approximate", "approx", "exact"}));
    app->add_option("--tol", f.tol, "relative Q convergence tolerance");
    app->add_option("--max-iter", f.max_iter, "maximum EM iterations");
    app->add_option("--reduction-slices", f.reduction_slices, "response slices used by the reduction");
    app->add_option("--qmc-points", f.qmc_points, "lattice points per rectangle probability in the reduction");
}

struct Loaded
{
    OrdinalDataset data;
    BasisSpec spec;
    FitOptions fo;
    ReduceOptions ro;
};

Loaded load_data(const DataFlags& f, const Settings& s, std::uint64_t seed, int threads)
{
    Loaded L;
    DatasetSpec ds;
    ds.response = s.pick(f.response, "response", std::string("y"));
    if (f.predictors) {
        ds.predictors = split_list(*f.predictors);
    } else if (s.cfg.contains("predictors")) {
        ds.predictors = s.cfg["predictors"].is_string() ? split_list(config::get<std::string>(s.cfg, "predictors"))
                                                        : config::get<std::vector<std::string>>(s.cfg, "predictors");
    }
    if (s.cfg.contains("levels")) {
        ds.levels = config::get<std::map<std::string, std::vector<std::string>>>(s.cfg, "levels");
    }
    if (f.categorical) {
        ds.categorical_response = true;
    } else if (s.cfg.contains("categorical_response")) {
        ds.categorical_response = config::get<bool>(s.cfg, "categorical_response");
    }
    const std::string path = s.require(f.input, "input", "input CSV (--in)");
    L.data = validate_dataset(csv::read(path), ds);

    const int classes = static_cast<int>(L.data.response_labels.size());
    const std::string kind = s.pick(f.basis, "basis", std::string(L.data.categorical_response ? "slice" : "poly"));
    if (kind != "poly" && kind != "slice") detail::fail_validation("InvalidOption", "basis must be poly or slice", "basis");
    const int size = s.pick(f.basis_size, "basis_size", kind == "poly" ? 2 : (L.data.categorical_response ? classes : 5));
    L.spec = kind == "poly" ? BasisSpec::polynomial(size) : BasisSpec::slices(size);
    if (L.data.categorical_response && kind == "slice" && size != classes) {
        detail::fail_validation("InvalidBasis", "slice count must equal the number of response classes", "basis_size");
    }

    L.fo.backend = parse_backend(s.pick(f.backend, "backend", std::string("approximate")));
    L.fo.tol = s.pick(f.tol, "tol", 1e-6);
    L.fo.max_iter = s.pick(f.max_iter, "max_iter", 200);
    L.fo.reduction_slices = s.pick(f.reduction_slices, "reduction_slices", 10);
    L.fo.seed = seed;
    L.fo.threads = threads;
    if (!(L.fo.tol > 0.0)) detail::fail_validation("InvalidOption", "tol must be positive", "tol");
    if (L.fo.max_iter < 1) detail::fail_validation("InvalidOption", "max_iter must be positive", "max_iter");
    if (L.fo.reduction_slices < 2) detail::fail_validation("InvalidOption", "reduction_slices must be >= 2", "reduction_slices");
    L.ro.points = s.pick(f.qmc_points, "qmc_points", L.ro.points);
    if (L.ro.points < 1) detail::fail_validation("InvalidOption", "qmc_points must be positive", "qmc_points");
    L.ro.threads = threads;
    return L;
}

json level_merges(const FittedModel& m)
{
    json a = json::array();
    for (int j = 0; j < m.p(); ++j) {
        if (!m.level_maps[j].identity()) a.push_back({{"predictor", m.name(j)}, {"map", m.level_maps[j].to}});
    }
    return a;
}

std::vector<double> parse_grid(const std::string& s)
{
    std::vector<double> g;
    for (const auto& item : split_list(s)) {
        const auto v = csv::parse_number(item);
        if (!v) detail::fail_validation("InvalidLambdaGrid", "bad lambda value '" + item + "'", "lambda_grid");
        g.push_back(*v);
    }
    return g;
}

// ---------------------------------------------------------------------------

struct FitFlags
{
    Common common;
    DataFlags data;
    std::optional<std::string> output;
    std::optional<std::string> report;
    std::optional<int> d;
    std::optional<double> lambda;
    std::optional<std::string> lambda_grid;
    std::optional<std::string> select;
    std::optional<int> folds;
};

int cmd_fit(const FitFlags& f)
{
    std::vector<std::string> keys = data_keys;
    for (const char* k : {"output", "report", "d", "lambda", "lambda_grid", "select", "folds"}) keys.emplace_back(k);
    const Settings s = load_settings(f.common, keys);
    const std::uint64_t seed = resolve_seed(f.common, s);
    const int threads = resolve_threads(f.common, s);
    const bool no_timing = resolve_no_timing(f.common, s);
    const std::string out_path = s.require(f.output, "output", "model output path (--out)");
    Loaded L = load_data(f.data, s, seed, threads);
    const int d = s.pick(f.d, "d", 1);

    std::optional<std::string> grid_text = f.lambda_grid;
    std::vector<double> grid;
    if (!grid_text && s.cfg.contains("lambda_grid")) {
        if (s.cfg["lambda_grid"].is_array()) {
            grid = config::get<std::vector<double>>(s.cfg, "lambda_grid");
            if (grid.empty()) detail::fail_validation("InvalidLambdaGrid", "lambda grid is empty", "lambda_grid");
        } else {
            grid_text = config::get<std::string>(s.cfg, "lambda_grid");
        }
    }
    const auto lambda = s.maybe(f.lambda, "lambda");
    const auto select = s.maybe(f.select, "select");
    if (lambda && (grid_text || !grid.empty())) {
        detail::fail_validation("ConflictingOptions", "give either lambda or lambda_grid, not both", "lambda");
    }
    if (select && *select != "aic" && *select != "bic" && *select != "cv") {
        detail::fail_validation("InvalidOption", "select must be aic, bic or cv", "select");
    }

    const auto t0 = std::chrono::steady_clock::now();
    FittedModel model;
    json report;
    report["command"] = "fit";
    if (lambda || select || grid_text || !grid.empty()) {
        if (lambda) {
            if (*lambda < 0.0) detail::fail_validation("InvalidOption", "lambda must be non-negative", "lambda");
            grid = {*lambda};
        } else if (grid_text && *grid_text != "auto") {
            grid = parse_grid(*grid_text);
        } else if (grid.empty()) {
            grid = default_lambda_grid(lambda_max_for(L.data, L.spec, d, L.fo));
        }
        SelectLambdaOptions so;
        const std::string crit = select.value_or("bic");
        so.criterion = crit == "aic" ? LambdaCriterion::aic : crit == "cv" ? LambdaCriterion::cv : LambdaCriterion::bic;
        so.folds = s.pick(f.folds, "folds", 10);
        so.reduce = L.ro;
        const RegularizedFit rf = select_lambda(L.data, L.spec, d, grid, L.fo, so);
        model = rf.model;
        json trace = json::array();
        for (const CriterionPoint& c : rf.criterion_trace) {
            trace.push_back({{"lambda", c.lambda}, {"value", c.value}, {"se", c.se}, {"active", c.active}});
        }
        std::vector<std::string> names;
        for (int j : rf.active_set) names.push_back(model.name(j));
        report["criterion"] = to_string(so.criterion);
        report["lambda"] = rf.lambda;
        report["active_set"] = names;
        report["criterion_trace"] = trace;
    } else {
        model = fit(L.data, L.spec, d, L.fo);
    }
    const double seconds = bench::seconds_since(t0);
    io::save(model, out_path);

    report["model"] = out_path;
    report["backend"] = to_string(model.backend);
    report["d"] = model.d;
    report["seed"] = seed;
    report["converged"] = model.converged;
    report["iterations"] = model.iterations;
    report["q_trace"] = model.q_trace;
    report["unconverged_moments"] = model.unconverged_moments;
    report["level_merges"] = level_merges(model);
    if (!no_timing) report["seconds"] = seconds;
    write_text(s.pick(f.report, "report", std::string("-")), report.dump(2) + "\n");
    return ok;
}

// ---------------------------------------------------------------------------

struct ReduceFlags
{
    Common common;
    std::optional<std::string> model;
    std::optional<std::string> input;
    std::optional<std::string> output;
    std::optional<int> qmc_points;
    bool ses = false;
};

Vec response_for_orientation(const Table& t, const FittedModel& m)
{
    const int col = t.column(m.response_name);
    Vec y(static_cast<Eigen::Index>(t.rows.size()));
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::string& cell = t.rows[r][col];
        if (csv::is_missing(cell)) {
            detail::fail_validation("MissingValue", "missing response on data row " + std::to_string(r + 1), m.response_name);
        }
        if (!m.response_labels.empty()) {
            const auto it = std::find(m.response_labels.begin(), m.response_labels.end(), cell);
            if (it == m.response_labels.end()) detail::fail_validation("UnknownLevel", "unknown response label '" + cell + "'", m.response_name);
            y(static_cast<Eigen::Index>(r)) = static_cast<double>(it - m.response_labels.begin());
        } else {
            const auto v = csv::parse_number(cell);
            if (!v) detail::fail_validation("InvalidDataset", "response is not numeric", m.response_name);
            y(static_cast<Eigen::Index>(r)) = *v;
        }
    }
    return y;
}

int run_reduce(const ReduceFlags& f, bool ses_only)
{
    const Settings s = load_settings(f.common, {"model", "input", "output", "qmc_points", "ses"});
    const int threads = resolve_threads(f.common, s);
    resolve_seed(f.common, s); // validates ORDRED_SEED; the model carries its own seed
    const FittedModel model = io::load(s.require(f.model, "model", "model file (--model)"));
    const Table t = csv::read(s.require(f.input, "input", "input CSV (--in)"));
    const std::string out_path = s.pick(f.output, "output", std::string("-"));
    const bool ses = ses_only || f.ses || (s.cfg.contains("ses") && config::get<bool>(s.cfg, "ses"));

    ReduceOptions ro;
    ro.points = s.pick(f.qmc_points, "qmc_points", ro.points);
    if (ro.points < 1) detail::fail_validation("InvalidOption", "qmc_points must be positive", "qmc_points");
    ro.threads = threads;
    const IMat x = encode_predictors(t, model);
    const Mat r = reduce_dataset(x, model, ro).r;

    std::vector<std::string> header;
    Mat out;
    if (!ses_only) {
        for (int k = 0; k < r.cols(); ++k) header.push_back("R" + std::to_string(k + 1));
        out = r;
    }
    if (ses) {
        const SesIndex idx = ses_index(r, response_for_orientation(t, model));
        header.push_back("ses_index");
        out.conservativeResize(r.rows(), out.cols() + 1);
        out.col(out.cols() - 1) = idx.index;
        if (out_path != "-") std::cout << json({{"ses_flipped", idx.flipped}}).dump() << "\n";
    }
    std::ostringstream os;
    write_matrix(os, header, out);
    write_text(out_path, os.str());
    return ok;
}

// ---------------------------------------------------------------------------

struct SelectFlags
{
    Common common;
    DataFlags data;
    std::optional<std::string> output;
    std::optional<std::string> method;
    std::optional<int> B;
    std::optional<double> level;
    std::optional<int> folds;
};

json candidate_json(const DimCandidate& c)
{
    return {{"d", c.d},         {"q", c.q},           {"value", c.value},       {"p_value", c.p_value},
            {"se", c.se},       {"replicates", c.replicates}, {"exceed", c.exceed}};
}

int cmd_select(const SelectFlags& f)
{
    std::vector<std::string> keys = data_keys;
    for (const char* k : {"output", "method", "B", "level", "folds"}) keys.emplace_back(k);
    const Settings s = load_settings(f.common, keys);
    const std::uint64_t seed = resolve_seed(f.common, s);
    const int threads = resolve_threads(f.common, s);
    const bool no_timing = resolve_no_timing(f.common, s);
    Loaded L = load_data(f.data, s, seed, threads);
    const std::string method = s.pick(f.method, "method", std::string("perm"));

    const auto t0 = std::chrono::steady_clock::now();
    DimensionDecision dec;
    if (method == "perm") {
        PermutationOptions po;
        po.B = s.pick(f.B, "B", 500);
        po.level = s.pick(f.level, "level", 0.01);
        po.reduce = L.ro;
        if (po.B < 100) detail::fail_validation("InvalidPermutationCount", "B must be at least 100", "B");
        dec = permutation_select(L.data, L.spec, L.fo, po);
    } else if (method == "aic" || method == "bic") {
        dec = ic_select(L.data, L.spec, method == "bic", L.fo);
    } else if (method == "cv") {
        CvOptions co;
        co.folds = s.pick(f.folds, "folds", 10);
        co.reduce = L.ro;
        dec = cv_select(L.data, L.spec, L.fo, co);
    } else {
        detail::fail_validation("InvalidOption", "method must be perm, cv, aic or bic", "method");
    }
    json out = {{"command", "select-dim"}, {"method", to_string(dec.method)}, {"d_hat", dec.d_hat}, {"seed", seed}};
    json cands = json::array();
    for (const DimCandidate& c : dec.diagnostics) cands.push_back(candidate_json(c));
    out["candidates"] = cands;
    if (!no_timing) out["seconds"] = bench::seconds_since(t0);
    write_text(s.pick(f.output, "output", std::string("-")), out.dump(2) + "\n");
    return ok;
}

// ---------------------------------------------------------------------------
// simulate: replicated fits of a design described in a TOML/JSON file

struct SimulateFlags
{
    Common common;
    std::optional<std::string> design;
    std::optional<int> reps;
    std::optional<std::string> output;
    std::optional<std::string> write_data;
};

sim::SimDesign parse_design(const json& j)
{
    config::check_keys(j, {"preset", "n", "p", "d", "r", "alpha", "delta_c", "rho", "b_scale", "xi_scale", "errors",
                           "g", "structure_seed", "fit"},
                       "design");
    const std::string preset = j.contains("preset") ? config::get<std::string>(j, "preset") : "validation";
    const int n = j.contains("n") ? config::get<int>(j, "n") : -1;
    sim::SimDesign ds;
    if (preset == "validation") ds = sim::validation_design();
    else if (preset == "comparison") ds = sim::comparison_design();
    else if (preset == "dimension") ds = sim::dimension_design();
    else if (preset == "selection") ds = sim::selection_design();
    else detail::fail_validation("InvalidDesign", "unknown preset '" + preset + "'", "preset");
    if (n > 0) ds.n = n;
    if (j.contains("p")) {
        ds.p = config::get<int>(j, "p");
        if (!j.contains("g")) ds.g = sim::cycling_levels(ds.p);
    }
    if (j.contains("d")) ds.d = config::get<int>(j, "d");
    if (j.contains("r")) ds.r = config::get<int>(j, "r");
    if (j.contains("alpha")) {
        const std::string a = config::get<std::string>(j, "alpha");
        if (a == "ones-and-signs") ds.alpha_rule = sim::AlphaRule::ones_and_signs;
        else if (a == "sparse-block") ds.alpha_rule = sim::AlphaRule::sparse_block;
        else detail::fail_validation("InvalidDesign", "alpha must be ones-and-signs or sparse-block", "alpha");
    }
    if (j.contains("delta_c")) ds.delta_c = config::get<double>(j, "delta_c");
    if (j.contains("rho")) ds.rho = config::get<double>(j, "rho");
    if (j.contains("b_scale")) ds.b_scale = config::get<double>(j, "b_scale");
    if (j.contains("xi_scale")) ds.xi_scale = config::get<double>(j, "xi_scale");
    if (j.contains("errors")) {
        const std::string e = config::get<std::string>(j, "errors");
        if (e == "normal") ds.error_kind = sim::ErrorKind::normal;
        else if (e == "chi2") ds.error_kind = sim::ErrorKind::chi2;
        else detail::fail_validation("InvalidDesign", "errors must be normal or chi2", "errors");
    }
    if (j.contains("g")) {
        ds.g = j["g"].is_array() ? config::get<std::vector<int>>(j, "g") : std::vector<int>{config::get<int>(j, "g")};
        for (int g : ds.g) {
            if (g < 2) detail::fail_validation("InvalidDesign", "level counts must be >= 2", "g");
        }
        if (ds.g.size() != 1 && static_cast<int>(ds.g.size()) != ds.p) {
            detail::fail_validation("InvalidDesign", "g must have one entry or p entries", "g");
        }
    }
    if (j.contains("structure_seed")) ds.structure_seed = config::get<std::uint64_t>(j, "structure_seed");
    if (ds.n < 2) detail::fail_validation("InvalidDesign", "n must be >= 2", "n");
    return ds;
}

struct FitPlan
{
    int d = 2;
    int degree = 2;
    Backend backend = Backend::approximate;
    std::string select_dim = "none";
    std::string lambda = "none";
    int B = 200;
    double level = 0.01;
    int folds = 10;
    int qmc_points = 256;
};

FitPlan parse_plan(const json& j, const sim::SimDesign& ds)
{
    FitPlan fp;
    fp.d = ds.d;
    fp.degree = ds.r;
    if (!j.contains("fit")) return fp;
    const json& f = j["fit"];
    config::check_keys(f, {"d", "degree", "backend", "select_dim", "lambda", "B", "level", "folds", "qmc_points"}, "[fit]");
    if (f.contains("d")) fp.d = config::get<int>(f, "d");
    if (f.contains("degree")) fp.degree = config::get<int>(f, "degree");
    if (f.contains("backend")) fp.backend = parse_backend(config::get<std::string>(f, "backend"));
    if (f.contains("select_dim")) fp.select_dim = config::get<std::string>(f, "select_dim");
    if (f.contains("lambda")) fp.lambda = config::get<std::string>(f, "lambda");
    if (f.contains("B")) fp.B = config::get<int>(f, "B");
    if (f.contains("level")) fp.level = config::get<double>(f, "level");
    if (f.contains("folds")) fp.folds = config::get<int>(f, "folds");
    if (f.contains("qmc_points")) fp.qmc_points = config::get<int>(f, "qmc_points");
    const std::vector<std::string> dims = {"none", "perm", "aic", "bic", "cv"};
    if (std::find(dims.begin(), dims.end(), fp.select_dim) == dims.end()) {
        detail::fail_validation("InvalidDesign", "select_dim must be none, perm, aic, bic or cv", "select_dim");
    }
    const std::vector<std::string> lams = {"none", "aic", "bic", "cv"};
    if (std::find(lams.begin(), lams.end(), fp.lambda) == lams.end()) {
        detail::fail_validation("InvalidDesign", "lambda must be none, aic, bic or cv", "lambda");
    }
    return fp;
}

int cmd_simulate(const SimulateFlags& f)
{
    const Settings s = load_settings(f.common, {"design", "reps", "output", "write_data"});
    const std::uint64_t seed = resolve_seed(f.common, s);
    const int threads = resolve_threads(f.common, s);
    const bool no_timing = resolve_no_timing(f.common, s);
    const json dj = config::load(s.require(f.design, "design", "design file (--design)"));
    const sim::SimDesign ds = parse_design(dj);
    const FitPlan plan = parse_plan(dj, ds);
    const int reps = s.pick(f.reps, "reps", 10);
    if (reps < 1) detail::fail_validation("InvalidOption", "reps must be positive", "reps");
    const sim::PreparedDesign pd(ds);
    const BasisSpec spec = BasisSpec::polynomial(plan.degree);
    if (const auto dump = s.maybe(f.write_data, "write_data")) {
        // first replicate only, as CSV with the response last
        std::ostringstream data;
        write_dataset(data, sim::generate(pd, bench::rep_seed(seed, 0)).data);
        write_text(*dump, data.str());
        return ok;
    }

    std::ostringstream os;
    os << "rep,seed,d_hat,angle,angle_pfc,lambda,active_set,n_active,contains_s0";
    if (!no_timing) os << ",seconds";
    os << "\n";
    for (int rep = 0; rep < reps; ++rep) {
        const std::uint64_t rs = bench::rep_seed(seed, rep);
        const sim::SimData sd = sim::generate(pd, rs);
        FitOptions fo;
        fo.seed = rs;
        fo.threads = threads;
        fo.backend = plan.backend;
        ReduceOptions ro;
        ro.points = plan.qmc_points;
        ro.threads = threads;
        const auto t0 = std::chrono::steady_clock::now();
        int d = plan.d;
        if (plan.select_dim == "perm") {
            PermutationOptions po;
            po.B = plan.B;
            po.level = plan.level;
            po.reduce = ro;
            d = permutation_select(sd.data, spec, fo, po).d_hat;
        } else if (plan.select_dim == "aic" || plan.select_dim == "bic") {
            d = ic_select(sd.data, spec, plan.select_dim == "bic", fo).d_hat;
        } else if (plan.select_dim == "cv") {
            CvOptions co;
            co.folds = plan.folds;
            co.reduce = ro;
            d = cv_select(sd.data, spec, fo, co).d_hat;
        }
        FittedModel m;
        double lam = 0.0;
        if (plan.lambda != "none" && d > 0) {
            SelectLambdaOptions so;
            so.criterion = plan.lambda == "aic"  ? LambdaCriterion::aic
                           : plan.lambda == "cv" ? LambdaCriterion::cv
                                                 : LambdaCriterion::bic;
            so.folds = plan.folds;
            so.reduce = ro;
            const RegularizedFit rf =
                select_lambda(sd.data, spec, d, default_lambda_grid(lambda_max_for(sd.data, spec, d, fo)), fo, so);
            m = rf.model;
            lam = rf.lambda;
        } else {
            m = fit(sd.data, spec, d, fo);
        }
        const double secs = bench::seconds_since(t0);
        const std::vector<int> active = m.active_set();
        const bool contains = std::includes(active.begin(), active.end(), sd.truth.S0.begin(), sd.truth.S0.end());
        const bool same_d = d == ds.d && d > 0;
        const double angle = same_d ? sim::subspace_angle(m.params.alpha, sd.truth.alpha) : bench::nan;
        double angle_pfc = bench::nan;
        if (ds.d > 0 && ds.d <= std::min(plan.degree, ds.p)) {
            const PfcFit pf = fit_pfc(sd.data.x.cast<double>(), build_basis(sd.data.y, spec).F, ds.d);
            angle_pfc = sim::subspace_angle(pf.alpha, sd.truth.alpha);
        }
        auto num = [](double v) { return std::isnan(v) ? std::string("NA") : csv::format_double(v); };
        os << rep << "," << rs << "," << d << "," << num(angle) << "," << num(angle_pfc) << "," << num(lam) << ","
           << csv::quote(bench::join(active)) << "," << active.size() << "," << (contains ? 1 : 0);
        if (!no_timing) os << "," << num(secs);
        os << "\n";
    }
    write_text(s.pick(f.output, "output", std::string("-")), os.str());
    return ok;
}

// ---------------------------------------------------------------------------

struct BenchFlags
{
    Common common;
    std::optional<std::string> name;
    std::optional<int> reps;
    std::optional<int> n;
    std::optional<std::string> output;
    std::optional<int> B;
    std::optional<double> level;
    std::optional<int> folds;
    std::optional<double> rho;
    std::optional<int> knn_reps;
    std::optional<int> qmc_points;
    std::optional<std::string> errors;
};

std::string num(double v) { return std::isnan(v) ? std::string("NA") : csv::format_double(v); }

int cmd_benchmark(const BenchFlags& f)
{
    const Settings s = load_settings(
        f.common, {"name", "reps", "n", "output", "B", "level", "folds", "rho", "knn_reps", "qmc_points", "errors"});
    const std::uint64_t seed = resolve_seed(f.common, s);
    const int threads = resolve_threads(f.common, s);
    const bool no_timing = resolve_no_timing(f.common, s);
    const std::string name = s.require(f.name, "name", "benchmark name (--name)");
    const auto reps_opt = s.maybe(f.reps, "reps");
    const auto n_opt = s.maybe(f.n, "n");
    const std::string out_path = s.pick(f.output, "output", std::string());
    ReduceOptions ro;
    ro.points = s.pick(f.qmc_points, "qmc_points", 256);
    ro.threads = threads;
    if (reps_opt && *reps_opt < 1) detail::fail_validation("InvalidOption", "reps must be positive", "reps");

    std::ostringstream rows;
    json summary = {{"benchmark", name}, {"seed", seed}};
    auto timing = [&](std::ostringstream& os, double v) {
        if (!no_timing) os << "," << num(v);
    };

    if (name == "validate-estep") {
        bench::EstepOptions o;
        o.reps = reps_opt.value_or(10);
        o.seed = seed;
        o.threads = threads;
        if (n_opt) o.design.n = *n_opt;
        const auto res = bench::validate_estep(o);
        rows << "rep,angle_approx,angle_exact" << (no_timing ? "" : ",seconds_approx,seconds_exact") << "\n";
        for (const auto& r : res) {
            rows << r.rep << "," << num(r.angle_approx) << "," << num(r.angle_exact);
            timing(rows, r.seconds_approx);
            timing(rows, r.seconds_exact);
            rows << "\n";
        }
        const auto [ma, sa] = bench::column_stats(res, [](const auto& r) { return r.angle_approx; });
        const auto [me, se] = bench::column_stats(res, [](const auto& r) { return r.angle_exact; });
        const auto [md, sdd] = bench::column_stats(res, [](const auto& r) { return r.angle_approx - r.angle_exact; });
        summary["reps"] = o.reps;
        summary["mean_angle_approximate"] = ma;
        summary["sd_angle_approximate"] = sa;
        summary["mean_angle_exact"] = me;
        summary["sd_angle_exact"] = se;
        summary["mean_difference"] = md;
        summary["sd_difference"] = sdd;
        if (!no_timing) {
            const double ta = bench::column_stats(res, [](const auto& r) { return r.seconds_approx; }).first;
            const double te = bench::column_stats(res, [](const auto& r) { return r.seconds_exact; }).first;
            summary["mean_seconds_approximate"] = ta;
            summary["mean_seconds_exact"] = te;
            summary["speed_ratio"] = te / ta;
        }
    } else if (name == "angle-comparison") {
        bench::AngleOptions o;
        o.reps = reps_opt.value_or(20);
        o.seed = seed;
        o.threads = threads;
        o.reduce = ro;
        o.knn_reps = s.pick(f.knn_reps, "knn_reps", 0);
        const std::string err = s.pick(f.errors, "errors", std::string("normal"));
        if (err != "normal" && err != "chi2") detail::fail_validation("InvalidOption", "errors must be normal or chi2", "errors");
        o.design = sim::comparison_design(n_opt.value_or(500), err == "chi2" ? sim::ErrorKind::chi2 : sim::ErrorKind::normal);
        const auto res = bench::angle_comparison(o);
        rows << "rep,angle_pfcord,angle_pfc,knn_mse_pfcord,knn_mse_pfc" << (no_timing ? "" : ",seconds") << "\n";
        for (const auto& r : res) {
            rows << r.rep << "," << num(r.angle_ord) << "," << num(r.angle_pfc) << "," << num(r.mse_ord) << ","
                 << num(r.mse_pfc);
            timing(rows, r.seconds);
            rows << "\n";
        }
        summary["reps"] = o.reps;
        summary["errors"] = err;
        summary["mean_angle_pfcord"] = bench::column_stats(res, [](const auto& r) { return r.angle_ord; }).first;
        summary["mean_angle_pfc"] = bench::column_stats(res, [](const auto& r) { return r.angle_pfc; }).first;
        summary["mean_knn_mse_pfcord"] = bench::column_stats(res, [](const auto& r) { return r.mse_ord; }).first;
        summary["mean_knn_mse_pfc"] = bench::column_stats(res, [](const auto& r) { return r.mse_pfc; }).first;
    } else if (name == "choose-d") {
        bench::ChooseDOptions o;
        o.reps = reps_opt.value_or(10);
        o.seed = seed;
        o.threads = threads;
        o.design = sim::dimension_design(n_opt.value_or(300));
        o.permutation.B = s.pick(f.B, "B", 200);
        o.permutation.level = s.pick(f.level, "level", 0.01);
        o.permutation.reduce = ro;
        o.cv_options.folds = s.pick(f.folds, "folds", 10);
        o.cv_options.reduce = ro;
        const auto res = bench::choose_d(o);
        rows << "rep,d_perm,d_aic,d_bic,d_cv" << (no_timing ? "" : ",seconds") << "\n";
        for (const auto& r : res) {
            rows << r.rep << "," << r.d_perm << "," << r.d_aic << "," << r.d_bic << "," << r.d_cv;
            timing(rows, r.seconds);
            rows << "\n";
        }
        summary["reps"] = o.reps;
        json frac = json::object();
        const int dmax = std::min(o.r, o.design.p);
        for (const char* m : {"perm", "aic", "bic", "cv"}) {
            json v = json::array();
            for (int d = 0; d <= dmax; ++d) {
                v.push_back(bench::fraction(
                    res,
                    [m](const bench::ChooseDRow& r) {
                        return std::string(m) == "perm" ? r.d_perm
                               : std::string(m) == "aic" ? r.d_aic
                               : std::string(m) == "bic" ? r.d_bic
                                                         : r.d_cv;
                    },
                    d, d));
            }
            frac[m] = v;
        }
        summary["fraction_by_d"] = frac;
    } else if (name == "variable-selection") {
        bench::SelectionOptions o;
        o.reps = reps_opt.value_or(10);
        o.seed = seed;
        o.threads = threads;
        o.design = sim::selection_design(n_opt.value_or(500), s.pick(f.rho, "rho", 0.0));
        o.select.reduce = ro;
        const auto res = bench::variable_selection(o);
        rows << "rep,lambda,active_set,n_active,contains_s0" << (no_timing ? "" : ",seconds") << "\n";
        std::vector<std::vector<int>> sets;
        for (const auto& r : res) {
            rows << r.rep << "," << num(r.lambda) << "," << csv::quote(bench::join(r.active)) << "," << r.active.size()
                 << "," << (r.contains ? 1 : 0);
            timing(rows, r.seconds);
            rows << "\n";
            sets.push_back(r.active);
        }
        const sim::SelectionMetrics sm = sim::selection_metrics(sim::PreparedDesign(o.design).structure.S0, sets);
        summary["reps"] = o.reps;
        summary["rho"] = o.design.rho;
        summary["pr_contain"] = sm.pr_contain;
        summary["mean_card"] = sm.mean_card;
        summary["sd_card"] = sm.sd_card;
    } else {
        detail::fail_validation("UnknownBenchmark",
                                "benchmark must be validate-estep, angle-comparison, choose-d or variable-selection",
                                name);
    }
    if (!out_path.empty()) write_text(out_path, rows.str());
    std::cout << summary.dump(2) << "\n";
    return ok;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Supervised reduction of ordered-categorical predictors"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "ordred 1.0.0");

    FitFlags fit_f;
    auto* fit_cmd = app.add_subcommand("fit", "Fit the latent-Gaussian inverse-regression model");
    add_common(fit_cmd, fit_f.common);
    add_data_flags(fit_cmd, fit_f.data);
    fit_cmd->add_option("--out", fit_f.output, "model JSON output");
    fit_cmd->add_option("--report", fit_f.report, "fit report JSON (default stdout)");
    fit_cmd->add_option("--d", fit_f.d, "reduction dimension");
    fit_cmd->add_option("--lambda", fit_f.lambda, "group-lasso weight");
    fit_cmd->add_option("--lambda-grid", fit_f.lambda_grid, "comma-separated ascending grid, or 'auto'");
    fit_cmd->add_option("--select", fit_f.select, "lambda criterion")->check(CLI::IsMember({"aic", "bic", "cv"}));
    fit_cmd->add_option("--folds", fit_f.folds, "cross-validation folds");

    ReduceFlags red_f;
    auto* red_cmd = app.add_subcommand("reduce", "Compute R(X) for new observations");
    add_common(red_cmd, red_f.common);
    red_cmd->add_option("--model", red_f.model, "model JSON");
    red_cmd->add_option("--in", red_f.input, "input CSV");
    red_cmd->add_option("--out", red_f.output, "output CSV (default stdout)");
    red_cmd->add_option("--qmc-points", red_f.qmc_points, "lattice points per rectangle probability");
    red_cmd->add_flag("--ses", red_f.ses, "append the normalized single index (d = 1)");

    ReduceFlags ses_f;
    auto* ses_cmd = app.add_subcommand("ses-index", "Normalized single index in [0, 1] (d = 1 models)");
    add_common(ses_cmd, ses_f.common);
    ses_cmd->add_option("--model", ses_f.model, "model JSON");
    ses_cmd->add_option("--in", ses_f.input, "input CSV (must contain the response for orientation)");
    ses_cmd->add_option("--out", ses_f.output, "output CSV (default stdout)");
    ses_cmd->add_option("--qmc-points", ses_f.qmc_points, "lattice points per rectangle probability");

    SelectFlags sel_f;
    auto* sel_cmd = app.add_subcommand("select-dim", "Infer the reduction dimension");
    add_common(sel_cmd, sel_f.common);
    add_data_flags(sel_cmd, sel_f.data);
    sel_cmd->add_option("--out", sel_f.output, "decision JSON (default stdout)");
    sel_cmd->add_option("--method", sel_f.method, "perm, cv, aic or bic")->check(CLI::IsMember({"perm", "cv", "aic", "bic"}));
    sel_cmd->add_option("--B", sel_f.B, "permutations per test");
    sel_cmd->add_option("--level", sel_f.level, "test level");
    sel_cmd->add_option("--folds", sel_f.folds, "cross-validation folds");

    SimulateFlags sim_f;
    auto* sim_cmd = app.add_subcommand("simulate", "Replicated fits on a synthetic design");
    add_common(sim_cmd, sim_f.common);
    sim_cmd->add_option("--design", sim_f.design, "design file (TOML or JSON)");
    sim_cmd->add_option("--reps", sim_f.reps, "replicates");
    sim_cmd->add_option("--out", sim_f.output, "results CSV (default stdout)");
    sim_cmd->add_option("--write-data", sim_f.write_data, "write the first replicate's dataset as CSV and exit");

    BenchFlags bench_f;
    auto* bench_cmd = app.add_subcommand("benchmark", "Run a named simulation benchmark");
    add_common(bench_cmd, bench_f.common);
    bench_cmd->add_option("--name", bench_f.name, "validate-estep, angle-comparison, choose-d or variable-selection");
    bench_cmd->add_option("--reps", bench_f.reps, "replicates");
    bench_cmd->add_option("--n", bench_f.n, "sample size");
    bench_cmd->add_option("--out", bench_f.output, "per-replicate CSV");
    bench_cmd->add_option("--B", bench_f.B, "permutations (choose-d)");
    bench_cmd->add_option("--level", bench_f.level, "test level (choose-d)");
    bench_cmd->add_option("--folds", bench_f.folds, "cross-validation folds (choose-d)");
    bench_cmd->add_option("--rho", bench_f.rho, "correlation between active and inactive blocks (variable-selection)");
    bench_cmd->add_option("--knn-reps", bench_f.knn_reps, "replicates with the held-out k-NN comparison (angle-comparison)");
    bench_cmd->add_option("--qmc-points", bench_f.qmc_points, "lattice points per rectangle probability");
    bench_cmd->add_option("--errors", bench_f.errors, "normal or chi2 (angle-comparison)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("validation", "InvalidArguments", e.what());
        return validation;
    }

    try {
        if (*fit_cmd) return cmd_fit(fit_f);
        if (*red_cmd) return run_reduce(red_f, false);
        if (*ses_cmd) return run_reduce(ses_f, true);
        if (*sel_cmd) return cmd_select(sel_f);
        if (*sim_cmd) return cmd_simulate(sim_f);
        if (*bench_cmd) return cmd_benchmark(bench_f);
    } catch (const ValidationError& e) {
        report_error("validation", e.kind(), e.what(), e.subject());
        return validation;
    } catch (const NumericalError& e) {
        report_error("numerical", e.kind(), e.what());
        return numerical;
    } catch (const std::exception& e) {
        report_error("internal", "Internal", e.what());
        return internal;
    }
    return internal;
}
