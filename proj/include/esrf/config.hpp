#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "esrf/harness.hpp"
#include "esrf/model.hpp"

namespace esrf {

using json = nlohmann::json;

namespace detail {

inline std::pair<int, int> line_col(const std::string& text, std::size_t byte) {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') { ++line; col = 1; }
        else ++col;
    }
    return {line, col};
}

inline const json& require_field(const json& obj, const std::string& key,
                                 const std::string& path) {
    if (!obj.is_object())
        throw ConfigError(path + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end())
        throw ConfigError(path + "." + key + ": missing required field");
    return *it;
}

inline double get_double(const json& obj, const std::string& key, const std::string& path) {
    const json& v = require_field(obj, key, path);
    if (!v.is_number())
        throw ConfigError(path + "." + key + ": expected a number");
    return v.get<double>();
}

inline double get_double_or(const json& obj, const std::string& key, const std::string& path,
                            double fallback) {
    if (!obj.is_object() || !obj.contains(key)) return fallback;
    return get_double(obj, key, path);
}

inline long get_int(const json& obj, const std::string& key, const std::string& path) {
    const json& v = require_field(obj, key, path);
    if (!v.is_number_integer())
        throw ConfigError(path + "." + key + ": expected an integer");
    return v.get<long>();
}

inline long get_int_or(const json& obj, const std::string& key, const std::string& path,
                       long fallback) {
    if (!obj.is_object() || !obj.contains(key)) return fallback;
    return get_int(obj, key, path);
}

inline std::string get_string(const json& obj, const std::string& key,
                              const std::string& path) {
    const json& v = require_field(obj, key, path);
    if (!v.is_string())
        throw ConfigError(path + "." + key + ": expected a string");
    return v.get<std::string>();
}

/// Matrices are nested row-major lists: [[a,b],[c,d]].
inline Matrix parse_matrix(const json& v, const std::string& path, Index rows, Index cols) {
    if (!v.is_array() || Index(v.size()) != rows)
        throw ConfigError(path + ": expected " + std::to_string(rows) + " rows");
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i) {
        const json& row = v[std::size_t(i)];
        if (!row.is_array() || Index(row.size()) != cols)
            throw ConfigError(path + "[" + std::to_string(i) + "]: expected " +
                              std::to_string(cols) + " entries");
        for (Index j = 0; j < cols; ++j) {
            const json& x = row[std::size_t(j)];
            if (!x.is_number())
                throw ConfigError(path + "[" + std::to_string(i) + "][" + std::to_string(j) +
                                  "]: expected a number");
            m(i, j) = x.get<double>();
        }
    }
    return m;
}

inline Vector parse_vector(const json& v, const std::string& path, Index n) {
    if (!v.is_array() || Index(v.size()) != n)
        throw ConfigError(path + ": expected " + std::to_string(n) + " entries");
    Vector out(n);
    for (Index i = 0; i < n; ++i) {
        const json& x = v[std::size_t(i)];
        if (!x.is_number())
            throw ConfigError(path + "[" + std::to_string(i) + "]: expected a number");
        out(i) = x.get<double>();
    }
    return out;
}

} // namespace detail

/// Parses a JSON document, converting parse failures into ConfigError with
/// line/column positions.
inline json parse_json_text(const std::string& text, const std::string& origin) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const auto [line, col] = detail::line_col(text, e.byte > 0 ? e.byte - 1 : 0);
        throw ConfigError(origin + ":" + std::to_string(line) + ":" + std::to_string(col) +
                          ": " + e.what());
    }
}

inline json load_json_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_json_text(ss.str(), path);
}

/// Named nonlinear drifts available from configs.
inline Drift parse_drift(const json& v, const std::string& path, Index d) {
    const std::string kind = detail::get_string(v, "kind", path);
    if (kind == "linear") {
        return LinearDrift{detail::parse_matrix(detail::require_field(v, "matrix", path),
                                                path + ".matrix", d, d)};
    }
    if (kind == "tanh_damped") {
        // f(x) = -x + tanh(x), globally Lipschitz with constant 1
        const double bound = detail::get_double_or(v, "lipschitz_bound", path, 1.0);
        return LipschitzDrift{
            [](const Vector& x) { return Vector(-x + x.array().tanh().matrix()); }, bound};
    }
    throw ConfigError(path + ".kind: unknown drift kind '" + kind +
                      "' (expected linear | tanh_damped)");
}

inline StateSpaceModel parse_model(const json& v, const std::string& path = "model") {
    const Index d = detail::get_int(v, "dim_state", path);
    const Index p = detail::get_int(v, "dim_obs", path);
    if (d < 1) throw ConfigError(path + ".dim_state: must be >= 1");
    if (p < 1) throw ConfigError(path + ".dim_obs: must be >= 1");
    Drift drift = parse_drift(detail::require_field(v, "drift", path), path + ".drift", d);
    Matrix g = detail::parse_matrix(detail::require_field(v, "obs_matrix", path),
                                    path + ".obs_matrix", p, d);
    Matrix q = detail::parse_matrix(detail::require_field(v, "model_noise_cov", path),
                                    path + ".model_noise_cov", d, d);
    Matrix c = detail::parse_matrix(detail::require_field(v, "obs_noise_cov", path),
                                    path + ".obs_noise_cov", p, p);
    const double horizon = detail::get_double(v, "horizon", path);
    Vector m0;
    Matrix p0;
    if (v.contains("init_mean"))
        m0 = detail::parse_vector(v["init_mean"], path + ".init_mean", d);
    if (v.contains("init_cov"))
        p0 = detail::parse_matrix(v["init_cov"], path + ".init_cov", d, d);
    try {
        return StateSpaceModel(d, p, std::move(drift), std::move(g), std::move(q), std::move(c),
                               horizon, std::move(m0), std::move(p0));
    } catch (const ModelError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline FilterKind parse_filter_kind(const std::string& s, const std::string& path) {
    if (s == "eakf") return FilterKind::Eakf;
    if (s == "etkf") return FilterKind::Etkf;
    if (s == "wh2002") return FilterKind::WhitakerHamill;
    if (s == "modified") return FilterKind::Modified;
    if (s == "stoch-enkf") return FilterKind::StochasticEnkf;
    throw ConfigError(path + ": unknown variant '" + s +
                      "' (expected eakf | etkf | wh2002 | modified | stoch-enkf)");
}

inline PerturbationKind parse_perturbation_kind(const std::string& s, const std::string& path) {
    if (s == "reich") return PerturbationKind::Reich;
    if (s == "reich-pinv") return PerturbationKind::ReichPseudoInverse;
    if (s == "quadratic") return PerturbationKind::QuadraticSolve;
    if (s == "none") return PerturbationKind::None;
    throw ConfigError(path + ": unknown perturbation '" + s +
                      "' (expected reich | reich-pinv | quadratic | none)");
}

inline ErrorKind parse_error_kind(const std::string& s, const std::string& path) {
    if (s == "cov_forecast") return ErrorKind::CovForecast;
    if (s == "cov_analysis") return ErrorKind::CovAnalysis;
    if (s == "mean") return ErrorKind::Mean;
    if (s == "ensemble") return ErrorKind::EnsembleGap;
    if (s == "pairwise_variant") return ErrorKind::PairwiseVariant;
    throw ConfigError(path + ": unknown error kind '" + s + "'");
}

/// Full sweep configuration: {"model": {...}, "sweep": {...}}.
/// The sweep-level perturbation applies to all variants, except that the
/// modified filter always uses reich and the stochastic EnKF always uses
/// none.
inline SweepConfig parse_sweep_config(const json& root) {
    const json& model_j = detail::require_field(root, "model", "config");
    const json& sweep_j = detail::require_field(root, "sweep", "config");

    StateSpaceModel model = parse_model(model_j);

    PerturbationSpec pert;
    if (sweep_j.contains("perturbation"))
        pert.kind = parse_perturbation_kind(
            detail::get_string(sweep_j, "perturbation", "sweep"), "sweep.perturbation");
    pert.kappa_bound = detail::get_double_or(sweep_j, "kappa_bound", "sweep", 0.0);
    pert.rank_tol = detail::get_double_or(sweep_j, "rank_tol", "sweep", 1e-10);

    TransformMode mode = TransformMode::Exact;
    if (sweep_j.contains("transform_mode")) {
        const std::string m = detail::get_string(sweep_j, "transform_mode", "sweep");
        if (m == "exact") mode = TransformMode::Exact;
        else if (m == "first-order") mode = TransformMode::FirstOrder;
        else throw ConfigError("sweep.transform_mode: expected exact | first-order");
    }

    SweepConfig cfg{std::move(model)};
    cfg.model_tag = root.contains("model_tag") && root["model_tag"].is_string()
                        ? root["model_tag"].get<std::string>()
                        : "model";

    const json& variants = detail::require_field(sweep_j, "variants", "sweep");
    if (!variants.is_array() || variants.empty())
        throw ConfigError("sweep.variants: expected a non-empty array");
    for (std::size_t i = 0; i < variants.size(); ++i) {
        const json& v = variants[i];
        if (!v.is_string())
            throw ConfigError("sweep.variants[" + std::to_string(i) + "]: expected a string");
        EsrfVariant var;
        var.kind = parse_filter_kind(v.get<std::string>(),
                                     "sweep.variants[" + std::to_string(i) + "]");
        var.perturbation = pert;
        var.transform_mode = mode;
        if (var.kind == FilterKind::Modified) var.perturbation.kind = PerturbationKind::Reich;
        if (var.kind == FilterKind::StochasticEnkf)
            var.perturbation.kind = PerturbationKind::None;
        cfg.variants.push_back(std::move(var));
    }

    const json& hs = detail::require_field(sweep_j, "h_values", "sweep");
    if (!hs.is_array() || hs.empty())
        throw ConfigError("sweep.h_values: expected a non-empty array");
    for (std::size_t i = 0; i < hs.size(); ++i) {
        if (!hs[i].is_number())
            throw ConfigError("sweep.h_values[" + std::to_string(i) + "]: expected a number");
        cfg.h_values.push_back(hs[i].get<double>());
    }

    cfg.fine_refinement = detail::get_int_or(sweep_j, "fine_refinement", "sweep", 16);
    cfg.ensemble_size = int(detail::get_int_or(sweep_j, "ensemble_size", "sweep", 16));
    cfg.num_seeds = int(detail::get_int_or(sweep_j, "num_seeds", "sweep", 50));
    cfg.base_seed =
        std::uint64_t(detail::get_int_or(sweep_j, "base_seed", "sweep", 0x2b5ad5c9L));
    cfg.initial_offset_scale =
        detail::get_double_or(sweep_j, "initial_offset_scale", "sweep", 0.0);
    cfg.parallelism = int(detail::get_int_or(sweep_j, "parallelism", "sweep", 0));

    if (sweep_j.contains("sup_sampling")) {
        const std::string s = detail::get_string(sweep_j, "sup_sampling", "sweep");
        if (s == "fine") cfg.sup_sampling = SupSampling::FineGrid;
        else if (s == "coarse") cfg.sup_sampling = SupSampling::CoarseGrid;
        else throw ConfigError("sweep.sup_sampling: expected fine | coarse");
    }

    const json& kinds = detail::require_field(sweep_j, "error_kinds", "sweep");
    if (!kinds.is_array() || kinds.empty())
        throw ConfigError("sweep.error_kinds: expected a non-empty array");
    for (std::size_t i = 0; i < kinds.size(); ++i) {
        if (!kinds[i].is_string())
            throw ConfigError("sweep.error_kinds[" + std::to_string(i) +
                              "]: expected a string");
        cfg.error_kinds.push_back(parse_error_kind(
            kinds[i].get<std::string>(), "sweep.error_kinds[" + std::to_string(i) + "]"));
    }

    if (sweep_j.contains("slope_windows")) {
        const json& w = sweep_j["slope_windows"];
        if (!w.is_object()) throw ConfigError("sweep.slope_windows: expected an object");
        for (auto it = w.begin(); it != w.end(); ++it) {
            const ErrorKind k = parse_error_kind(it.key(), "sweep.slope_windows");
            const json& arr = it.value();
            if (!arr.is_array() || arr.size() != 2 || !arr[0].is_number() ||
                !arr[1].is_number())
                throw ConfigError("sweep.slope_windows." + it.key() +
                                  ": expected [lo, hi]");
            cfg.slope_windows[k] = SlopeWindow{arr[0].get<double>(), arr[1].get<double>()};
        }
    }
    return cfg;
}

struct OutputConfig {
    std::string directory = "out";
    ReportFormat format = ReportFormat::Csv;
};

inline OutputConfig parse_output_config(const json& root) {
    OutputConfig out;
    if (!root.contains("output")) return out;
    const json& o = root["output"];
    if (!o.is_object()) throw ConfigError("output: expected an object");
    if (o.contains("directory")) out.directory = detail::get_string(o, "directory", "output");
    if (o.contains("format")) {
        const std::string f = detail::get_string(o, "format", "output");
        if (f == "csv") out.format = ReportFormat::Csv;
        else if (f == "jsonl") out.format = ReportFormat::JsonLines;
        else throw ConfigError("output.format: expected csv | jsonl");
    }
    return out;
}

} // namespace esrf
