#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "esrf/filters.hpp"
#include "esrf/kalman.hpp"
#include "esrf/limit.hpp"
#include "esrf/model.hpp"
#include "esrf/observation.hpp"

namespace esrf {

enum class ErrorKind { CovForecast, CovAnalysis, Mean, EnsembleGap, PairwiseVariant };

inline const char* to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::CovForecast: return "cov_forecast";
        case ErrorKind::CovAnalysis: return "cov_analysis";
        case ErrorKind::Mean: return "mean";
        case ErrorKind::EnsembleGap: return "ensemble";
        case ErrorKind::PairwiseVariant: return "pairwise_variant";
    }
    return "?";
}

/// Where the time supremum of the error functionals is evaluated.  FineGrid
/// follows the limit theorems: the continuous reference moves on the fine
/// grid while the discrete trajectory is frozen at the latest coarse point.
/// CoarseGrid compares at the coarse points only; the aligned-grid error is
/// one order smaller there, so rate windows calibrated for the theorems will
/// generally fail in that mode.
enum class SupSampling { FineGrid, CoarseGrid };

struct SlopeWindow {
    double lo = 0.0;
    double hi = std::numeric_limits<double>::infinity();
};

struct SweepConfig {
    StateSpaceModel model;
    std::string model_tag = "model";
    std::vector<EsrfVariant> variants;
    std::vector<double> h_values; // strictly decreasing
    long fine_refinement = 16;     // h_fine = h_min / fine_refinement
    int ensemble_size = 16;
    int num_seeds = 50;
    std::uint64_t base_seed = 0x2b5ad5c9u;
    std::vector<ErrorKind> error_kinds;
    SupSampling sup_sampling = SupSampling::FineGrid;
    double initial_offset_scale = 0.0; // injects an O(h) member offset at t=0
    int parallelism = 0;               // 0: hardware concurrency
    std::map<ErrorKind, SlopeWindow> slope_windows; // filled with defaults if absent

    void validate();
};

inline SlopeWindow default_window(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::CovForecast:
        case ErrorKind::CovAnalysis: return {0.8, 1.2};
        case ErrorKind::Mean:
        case ErrorKind::EnsembleGap: return {0.7, 1.3};
        case ErrorKind::PairwiseVariant:
            return {0.7, std::numeric_limits<double>::infinity()};
    }
    return {0.0, std::numeric_limits<double>::infinity()};
}

inline void SweepConfig::validate() {
    if (variants.empty()) throw ConfigError("sweep: no variants configured");
    for (const EsrfVariant& v : variants) v.validate();
    if (h_values.empty()) throw ConfigError("sweep: no h values configured");
    for (std::size_t i = 0; i < h_values.size(); ++i) {
        if (!(h_values[i] > 0.0)) throw ConfigError("sweep: h values must be positive");
        if (i > 0 && h_values[i] >= h_values[i - 1])
            throw ConfigError("sweep: h values must be strictly decreasing");
        const double ratio = model.horizon() / h_values[i];
        if (std::abs(ratio - std::round(ratio)) > 1e-9 * std::max(1.0, ratio))
            throw ConfigError("sweep: horizon is not an integer multiple of every h");
    }
    if (fine_refinement < 1) throw ConfigError("sweep: fine_refinement must be >= 1");
    const double h_fine = h_values.back() / double(fine_refinement);
    for (double h : h_values) {
        const double r = h / h_fine;
        if (std::abs(r - std::round(r)) > 1e-9 * std::max(1.0, r))
            throw ConfigError("sweep: every h must be an integer multiple of h_fine");
    }
    if (ensemble_size < 2) throw ConfigError("sweep: ensemble_size must be >= 2");
    if (num_seeds < 1) throw ConfigError("sweep: num_seeds must be >= 1");
    if (error_kinds.empty()) throw ConfigError("sweep: no error kinds configured");
    for (ErrorKind k : error_kinds) {
        if ((k == ErrorKind::CovForecast || k == ErrorKind::CovAnalysis ||
             k == ErrorKind::Mean) &&
            !model.is_linear())
            throw ConfigError(std::string("sweep: error kind ") + to_string(k) +
                              " needs the linear reference processes");
        if (slope_windows.find(k) == slope_windows.end())
            slope_windows[k] = default_window(k);
    }
    for (const EsrfVariant& v : variants) {
        const bool needs_full_rank = v.perturbation.kind == PerturbationKind::Reich;
        if (needs_full_rank && ensemble_size < model.dim_state() + 1)
            throw ConfigError("sweep: reich perturbations need ensemble_size >= d + 1");
    }
    if (std::find(error_kinds.begin(), error_kinds.end(), ErrorKind::PairwiseVariant) !=
        error_kinds.end()) {
        int deterministic = 0;
        for (const EsrfVariant& v : variants)
            if (v.kind != FilterKind::StochasticEnkf) ++deterministic;
        if (deterministic < 2)
            throw ConfigError("sweep: pairwise_variant needs at least two deterministic variants");
    }
}

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    int points_used = 0;
};

/// Ordinary least squares of log(error) against log(h).  Rows with
/// non-finite or non-positive error are excluded (reported through
/// `warnings`); fewer than 4 surviving rows means no fit.
inline std::optional<RateFit> fit_rate(const std::vector<std::pair<double, double>>& table,
                                       std::vector<std::string>* warnings = nullptr) {
    std::vector<double> lx, ly;
    for (const auto& [h, err] : table) {
        if (!(err > 0.0) || !std::isfinite(err)) {
            if (warnings)
                warnings->push_back("excluded h=" + std::to_string(h) +
                                    " (error not positive/finite)");
            continue;
        }
        lx.push_back(std::log(h));
        ly.push_back(std::log(err));
    }
    const int n = int(lx.size());
    if (n < 4) {
        if (warnings) warnings->push_back("fit unavailable: fewer than 4 usable rows");
        return std::nullopt;
    }
    double mx = 0.0, my = 0.0;
    for (int i = 0; i < n; ++i) { mx += lx[i]; my += ly[i]; }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (int i = 0; i < n; ++i) {
        sxx += (lx[i] - mx) * (lx[i] - mx);
        sxy += (lx[i] - mx) * (ly[i] - my);
        syy += (ly[i] - my) * (ly[i] - my);
    }
    RateFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    fit.points_used = n;
    return fit;
}

// ---------------------------------------------------------------------------
// Report structures
// ---------------------------------------------------------------------------

struct ErrorRow {
    double h = 0.0;
    double error = 0.0;
    double std_error = 0.0;
    int seeds_ok = 0;
};

struct ErrorTable {
    std::string variant; // variant label, or "a|b" for pairwise tables
    ErrorKind kind = ErrorKind::Mean;
    std::vector<ErrorRow> rows;
    std::optional<RateFit> fit;
    SlopeWindow window;
    bool pass = false;
    /// Fraction of seeds whose error at the smallest h lies below the error
    /// at the largest h (refinement sanity; expected >= 0.9).
    double monotone_fraction = 0.0;
    std::string note;
};

struct SweepMeta {
    std::string model_tag;
    long dim_state = 0, dim_obs = 0;
    double horizon = 0.0;
    int ensemble_size = 0;
    int num_seeds = 0;
    std::uint64_t base_seed = 0;
    double h_fine = 0.0;
    long fine_refinement = 0;
    std::string sup_sampling;
    double initial_offset_scale = 0.0;
    std::vector<std::string> variants;
};

struct ConvergenceReport {
    SweepMeta meta;
    std::vector<ErrorTable> tables;

    bool all_pass() const {
        for (const ErrorTable& t : tables)
            if (!t.pass) return false;
        return !tables.empty();
    }
};

// ---------------------------------------------------------------------------
// Sweep execution
// ---------------------------------------------------------------------------

namespace detail {

struct CellErrors {
    double cov_f = std::numeric_limits<double>::quiet_NaN();
    double cov_a = std::numeric_limits<double>::quiet_NaN();
    double mean = std::numeric_limits<double>::quiet_NaN();
    double ens = std::numeric_limits<double>::quiet_NaN();
    bool failed = false;
    std::string note;
};

struct SeedResult {
    // cells[variant][h_index]
    std::vector<std::vector<CellErrors>> cells;
    // pairwise[pair_index][h_index]
    std::vector<std::vector<double>> pairwise;
    double member_scale = 0.0;
    bool ok = false;
    std::string error;
};

inline bool wants(const SweepConfig& cfg, ErrorKind k) {
    return std::find(cfg.error_kinds.begin(), cfg.error_kinds.end(), k) != cfg.error_kinds.end();
}

inline SeedResult run_seed(const SweepConfig& cfg, int seed_index) {
    SeedResult res;
    const std::size_t n_var = cfg.variants.size();
    const std::size_t n_h = cfg.h_values.size();
    res.cells.assign(n_var, std::vector<CellErrors>(n_h));

    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    if (wants(cfg, ErrorKind::PairwiseVariant)) {
        for (std::size_t i = 0; i < n_var; ++i)
            for (std::size_t j = i + 1; j < n_var; ++j)
                if (cfg.variants[i].kind != FilterKind::StochasticEnkf &&
                    cfg.variants[j].kind != FilterKind::StochasticEnkf)
                    pairs.emplace_back(i, j);
        res.pairwise.assign(pairs.size(),
                            std::vector<double>(n_h, std::numeric_limits<double>::quiet_NaN()));
    }

    const std::uint64_t path_seed = mix_seed(cfg.base_seed, std::uint64_t(seed_index) * 3 + 0);
    const std::uint64_t ens_seed = mix_seed(cfg.base_seed, std::uint64_t(seed_index) * 3 + 1);
    const std::uint64_t upd_seed = mix_seed(cfg.base_seed, std::uint64_t(seed_index) * 3 + 2);

    const double h_min = cfg.h_values.back();
    const double h_fine = h_min / double(cfg.fine_refinement);
    const long fine_steps = std::llround(cfg.model.horizon() / h_fine);
    const TimeGrid fine_grid(h_fine, fine_steps);

    const ObservationPath path = simulate_reference(cfg.model, fine_grid, path_seed);

    Rng ens_rng(ens_seed);
    const Index d = cfg.model.dim_state();
    Matrix init_members =
        (cfg.model.sqrt_init_cov() * standard_normal(ens_rng, d, cfg.ensemble_size)).colwise() +
        cfg.model.init_mean();
    const Ensemble init(init_members);
    const EnsembleStats init_stats = ensemble_stats(init);

    // reference processes started at the ensemble's empirical moments so the
    // initial gaps are zero
    std::optional<KalmanBucyTrajectory> kb;
    if (wants(cfg, ErrorKind::CovForecast) || wants(cfg, ErrorKind::CovAnalysis) ||
        wants(cfg, ErrorKind::Mean))
        kb = integrate_kalman_bucy(cfg.model, path, init_stats.mean, init_stats.covariance);

    std::map<PerturbationKind, LimitTrajectory> limits;
    if (wants(cfg, ErrorKind::EnsembleGap)) {
        for (const EsrfVariant& v : cfg.variants) {
            if (v.kind == FilterKind::StochasticEnkf) continue;
            if (limits.find(v.perturbation.kind) == limits.end())
                limits.emplace(v.perturbation.kind,
                               integrate_limit(cfg.model, path, init, v.perturbation));
        }
    }

    const bool fine_sup = cfg.sup_sampling == SupSampling::FineGrid;
    std::vector<std::vector<FilterTrajectory>> trajs(
        n_var, std::vector<FilterTrajectory>());
    for (auto& tv : trajs) tv.reserve(n_h);

    for (std::size_t hi = 0; hi < n_h; ++hi) {
        const double h = cfg.h_values[hi];
        const long r = std::llround(h / h_fine);

        // shared-path discipline: aggregated totals must telescope exactly
        {
            const std::vector<Vector> agg = aggregate_increments(path, h);
            Vector total = Vector::Zero(cfg.model.dim_obs());
            for (const Vector& v : agg) total += v;
            Vector fine_total = Vector::Zero(cfg.model.dim_obs());
            for (const Vector& v : path.obs_increments) fine_total += v;
            if ((total - fine_total).norm() > 1e-13 * (1.0 + fine_total.norm()))
                throw Error("shared-path aggregation totals disagree");
        }

        Ensemble start = init;
        if (cfg.initial_offset_scale != 0.0) {
            Matrix shifted = init.members();
            shifted(0, 0) += cfg.initial_offset_scale * h;
            start = Ensemble(shifted);
        }

        for (std::size_t vi = 0; vi < n_var; ++vi) {
            CellErrors& cell = res.cells[vi][hi];
            FilterTrajectory ft;
            try {
                RunOptions opts;
                opts.update_noise_seed = mix_seed(upd_seed, vi);
                ft = run_filter(cfg.variants[vi], cfg.model, path, h, start, opts);
            } catch (const Error& e) {
                cell.failed = true;
                cell.note = e.what();
                trajs[vi].push_back(FilterTrajectory{});
                continue;
            }

            const long coarse_steps = ft.grid.steps();
            auto nu_of = [&](long j) {
                return std::min(j / r, coarse_steps);
            };

            if (kb) {
                double sup_f = 0.0, sup_a = 0.0, sup_m = 0.0;
                std::vector<Vector> coarse_means(coarse_steps + 1);
                for (long k = 0; k <= coarse_steps; ++k)
                    coarse_means[k] = ft.members[k].rowwise().mean();
                const long stride = fine_sup ? 1 : r;
                for (long j = 0; j <= fine_steps; j += stride) {
                    const long k = nu_of(j);
                    if (wants(cfg, ErrorKind::CovForecast))
                        sup_f = std::max(sup_f, spectral_norm_sym(Matrix(
                                                    kb->covs[j] - ft.forecast_cov[k])));
                    if (wants(cfg, ErrorKind::CovAnalysis))
                        sup_a = std::max(sup_a, spectral_norm_sym(Matrix(
                                                    kb->covs[j] - ft.analysis_cov[k])));
                    if (wants(cfg, ErrorKind::Mean))
                        sup_m = std::max(sup_m,
                                         (kb->means[j] - coarse_means[k]).squaredNorm());
                }
                cell.cov_f = sup_f;
                cell.cov_a = sup_a;
                cell.mean = sup_m;
            }
            if (wants(cfg, ErrorKind::EnsembleGap) &&
                cfg.variants[vi].kind != FilterKind::StochasticEnkf) {
                const LimitTrajectory& limit = limits.at(cfg.variants[vi].perturbation.kind);
                double sup = 0.0;
                const long stride = fine_sup ? 1 : r;
                for (long j = 0; j <= fine_steps; j += stride)
                    sup = std::max(sup, (ft.members[nu_of(j)] - limit.members[j]).squaredNorm());
                cell.ens = sup;
            }
            for (const Matrix& mem : ft.members)
                res.member_scale = std::max(res.member_scale, mem.squaredNorm());
            trajs[vi].push_back(std::move(ft));
        }

        for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
            const auto [ia, ib] = pairs[pi];
            const FilterTrajectory& fa = trajs[ia][hi];
            const FilterTrajectory& fb = trajs[ib][hi];
            if (fa.members.empty() || fb.members.empty()) continue;
            double sup = 0.0;
            for (std::size_t k = 0; k < fa.members.size(); ++k)
                sup = std::max(sup, (fa.members[k] - fb.members[k]).squaredNorm());
            res.pairwise[pi][hi] = sup;
        }
    }
    res.ok = true;
    return res;
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace detail

/// Runs the configured sweep: one shared fine-grid observation path per seed,
/// every variant and step size consuming aggregations of that same path, and
/// the error functionals of the covariance/mean/ensemble limit statements
/// evaluated against the fine-grid reference processes.  Seeds execute
/// concurrently up to the configured parallelism; aggregation is in seed
/// order, so reports are deterministic.
inline ConvergenceReport run_sweep(SweepConfig config) {
    config.validate();
    const std::size_t n_seeds = std::size_t(config.num_seeds);

    std::vector<detail::SeedResult> results(n_seeds);
    int workers = config.parallelism > 0 ? config.parallelism
                                         : int(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    workers = std::min<int>(workers, int(n_seeds));

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (;;) {
            const std::size_t s = next.fetch_add(1);
            if (s >= n_seeds) return;
            try {
                results[s] = detail::run_seed(config, int(s));
            } catch (const std::exception& e) {
                results[s].ok = false;
                results[s].error = e.what();
            }
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (std::thread& t : pool) t.join();
    }

    ConvergenceReport report;
    report.meta.model_tag = config.model_tag;
    report.meta.dim_state = config.model.dim_state();
    report.meta.dim_obs = config.model.dim_obs();
    report.meta.horizon = config.model.horizon();
    report.meta.ensemble_size = config.ensemble_size;
    report.meta.num_seeds = config.num_seeds;
    report.meta.base_seed = config.base_seed;
    report.meta.fine_refinement = config.fine_refinement;
    report.meta.h_fine = config.h_values.back() / double(config.fine_refinement);
    report.meta.sup_sampling =
        config.sup_sampling == SupSampling::FineGrid ? "fine" : "coarse";
    report.meta.initial_offset_scale = config.initial_offset_scale;
    for (const EsrfVariant& v : config.variants) report.meta.variants.push_back(v.label());

    int failed_seeds = 0;
    for (const detail::SeedResult& r : results)
        if (!r.ok) ++failed_seeds;

    double member_scale = 0.0;
    for (const detail::SeedResult& r : results)
        member_scale = std::max(member_scale, r.member_scale);

    auto reduce_rows = [&](auto&& value_of) {
        std::vector<ErrorRow> rows;
        for (std::size_t hi = 0; hi < config.h_values.size(); ++hi) {
            ErrorRow row;
            row.h = config.h_values[hi];
            double sum = 0.0, sum_sq = 0.0;
            int n = 0;
            for (std::size_t s = 0; s < n_seeds; ++s) {
                if (!results[s].ok) continue;
                const double v = value_of(results[s], hi);
                if (!std::isfinite(v)) continue;
                sum += v;
                sum_sq += v * v;
                ++n;
            }
            row.seeds_ok = n;
            row.error = n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
            row.std_error =
                n > 1 ? std::sqrt(std::max(0.0, (sum_sq / n - row.error * row.error) /
                                                    double(n - 1)))
                      : 0.0;
            rows.push_back(row);
        }
        return rows;
    };

    auto monotone_fraction_of = [&](auto&& value_of) {
        const std::size_t hi_first = 0;                       // largest h
        const std::size_t hi_last = config.h_values.size() - 1; // smallest h
        int ok = 0, monotone = 0;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            if (!results[s].ok) continue;
            const double coarse = value_of(results[s], hi_first);
            const double fine = value_of(results[s], hi_last);
            if (!std::isfinite(coarse) || !std::isfinite(fine)) continue;
            ++ok;
            if (fine < coarse) ++monotone;
        }
        return ok > 0 ? double(monotone) / double(ok) : 0.0;
    };

    auto finish_table = [&](ErrorTable& table) {
        std::vector<std::pair<double, double>> fit_table;
        for (const ErrorRow& row : table.rows) fit_table.emplace_back(row.h, row.error);
        std::vector<std::string> warnings;
        table.fit = fit_rate(fit_table, &warnings);
        if (table.fit) {
            table.pass = table.fit->slope >= table.window.lo &&
                         table.fit->slope <= table.window.hi;
        } else {
            table.pass = false;
            if (!warnings.empty()) table.note = warnings.back();
        }
        if (failed_seeds > 0)
            table.note += (table.note.empty() ? "" : "; ") +
                          std::to_string(failed_seeds) + " seed(s) failed";
    };

    for (std::size_t vi = 0; vi < config.variants.size(); ++vi) {
        for (ErrorKind kind : config.error_kinds) {
            if (kind == ErrorKind::PairwiseVariant) continue;
            if (kind == ErrorKind::EnsembleGap &&
                config.variants[vi].kind == FilterKind::StochasticEnkf)
                continue;
            ErrorTable table;
            table.variant = config.variants[vi].label();
            table.kind = kind;
            table.window = config.slope_windows.at(kind);
            auto value_of = [&, kind](const detail::SeedResult& r, std::size_t hi) {
                const detail::CellErrors& c = r.cells[vi][hi];
                switch (kind) {
                    case ErrorKind::CovForecast: return c.cov_f;
                    case ErrorKind::CovAnalysis: return c.cov_a;
                    case ErrorKind::Mean: return c.mean;
                    case ErrorKind::EnsembleGap: return c.ens;
                    default: return std::numeric_limits<double>::quiet_NaN();
                }
            };
            table.rows = reduce_rows(value_of);
            table.monotone_fraction = monotone_fraction_of(value_of);
            finish_table(table);
            report.tables.push_back(std::move(table));
        }
    }

    if (detail::wants(config, ErrorKind::PairwiseVariant)) {
        std::vector<std::pair<std::size_t, std::size_t>> pairs;
        for (std::size_t i = 0; i < config.variants.size(); ++i)
            for (std::size_t j = i + 1; j < config.variants.size(); ++j)
                if (config.variants[i].kind != FilterKind::StochasticEnkf &&
                    config.variants[j].kind != FilterKind::StochasticEnkf)
                    pairs.emplace_back(i, j);
        for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
            ErrorTable table;
            table.variant = config.variants[pairs[pi].first].label() + "|" +
                            config.variants[pairs[pi].second].label();
            table.kind = ErrorKind::PairwiseVariant;
            table.window = config.slope_windows.at(ErrorKind::PairwiseVariant);
            auto value_of = [&, pi](const detail::SeedResult& r, std::size_t hi) {
                return r.pairwise[pi][hi];
            };
            table.rows = reduce_rows(value_of);
            table.monotone_fraction = monotone_fraction_of(value_of);
            // coincident variants: all distances at machine precision
            bool coincident = !table.rows.empty();
            for (const ErrorRow& row : table.rows)
                if (!(row.error <= 1e-14 * std::max(1.0, member_scale))) coincident = false;
            if (coincident) {
                table.pass = true;
                table.note = "variants coincide (distance at machine precision)";
            } else {
                finish_table(table);
            }
            report.tables.push_back(std::move(table));
        }
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

enum class ReportFormat { Csv, JsonLines };

/// Writes errors.(csv|jsonl), summary.(csv|jsonl) and meta.json into out_dir.
/// Output is byte-deterministic for identical reports ("%.17g" floats, no
/// timestamps).
inline void emit_report(const ConvergenceReport& report, ReportFormat format,
                        const std::filesystem::path& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("emit_report: cannot create " + out_dir.string());

    const bool csv = format == ReportFormat::Csv;
    const char* ext = csv ? ".csv" : ".jsonl";

    auto open = [&](const std::string& name) {
        std::ofstream os(out_dir / name, std::ios::binary);
        if (!os) throw IoError("emit_report: cannot open " + (out_dir / name).string());
        return os;
    };

    {
        std::ofstream os = open(std::string("errors") + ext);
        if (csv) os << "variant,error_kind,h,error,std_error\n";
        for (const ErrorTable& t : report.tables) {
            for (const ErrorRow& row : t.rows) {
                if (csv) {
                    os << t.variant << ',' << to_string(t.kind) << ','
                       << detail::fmt_double(row.h) << ',' << detail::fmt_double(row.error)
                       << ',' << detail::fmt_double(row.std_error) << "\n";
                } else {
                    nlohmann::json j{{"type", "error"},
                                     {"variant", t.variant},
                                     {"error_kind", to_string(t.kind)},
                                     {"h", row.h},
                                     {"error", row.error},
                                     {"std_error", row.std_error},
                                     {"seeds_ok", row.seeds_ok}};
                    os << j.dump() << "\n";
                }
            }
        }
    }
    {
        std::ofstream os = open(std::string("summary") + ext);
        if (csv)
            os << "variant,error_kind,slope,intercept,r_squared,n_points,"
                  "window_lo,window_hi,pass,monotone_fraction,note\n";
        for (const ErrorTable& t : report.tables) {
            const bool has_fit = t.fit.has_value();
            if (csv) {
                os << t.variant << ',' << to_string(t.kind) << ','
                   << (has_fit ? detail::fmt_double(t.fit->slope) : "") << ','
                   << (has_fit ? detail::fmt_double(t.fit->intercept) : "") << ','
                   << (has_fit ? detail::fmt_double(t.fit->r_squared) : "") << ','
                   << (has_fit ? std::to_string(t.fit->points_used) : "0") << ','
                   << detail::fmt_double(t.window.lo) << ','
                   << detail::fmt_double(t.window.hi) << ',' << (t.pass ? "1" : "0") << ','
                   << detail::fmt_double(t.monotone_fraction) << ','
                   << '"' << t.note << '"' << "\n";
            } else {
                nlohmann::json j{{"type", "summary"},
                                 {"variant", t.variant},
                                 {"error_kind", to_string(t.kind)},
                                 {"window_lo", t.window.lo},
                                 {"window_hi", t.window.hi},
                                 {"pass", t.pass},
                                 {"monotone_fraction", t.monotone_fraction},
                                 {"note", t.note}};
                if (has_fit) {
                    j["slope"] = t.fit->slope;
                    j["intercept"] = t.fit->intercept;
                    j["r_squared"] = t.fit->r_squared;
                    j["n_points"] = t.fit->points_used;
                }
                os << j.dump() << "\n";
            }
        }
    }
    {
        std::ofstream os = open("meta.json");
        nlohmann::json j{{"model_tag", report.meta.model_tag},
                         {"dim_state", report.meta.dim_state},
                         {"dim_obs", report.meta.dim_obs},
                         {"horizon", report.meta.horizon},
                         {"ensemble_size", report.meta.ensemble_size},
                         {"num_seeds", report.meta.num_seeds},
                         {"base_seed", report.meta.base_seed},
                         {"h_fine", report.meta.h_fine},
                         {"fine_refinement", report.meta.fine_refinement},
                         {"sup_sampling", report.meta.sup_sampling},
                         {"initial_offset_scale", report.meta.initial_offset_scale},
                         {"variants", report.meta.variants}};
        os << j.dump(2) << "\n";
    }
}

} // namespace esrf
