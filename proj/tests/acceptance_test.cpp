// Acceptance suite: one test case per criterion, each printing a pass/fail
// line with the measured quantities.  Run via ctest or directly:
//   ./acceptance_tests --reporter console

#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "esrf/esrf.hpp"

using namespace esrf;
namespace fs = std::filesystem;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

void report_line(const std::string& id, bool pass, const std::string& detail) {
    std::cout << "[acceptance] " << id << ": " << (pass ? "PASS" : "FAIL") << " — " << detail
              << std::endl;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3g", v);
    return buf;
}

StateSpaceModel scalar_acceptance_model() {
    return StateSpaceModel(1, 1, LinearDrift{Matrix::Constant(1, 1, -0.5)},
                           Matrix::Identity(1, 1), Matrix::Identity(1, 1),
                           Matrix::Identity(1, 1), 2.0);
}

StateSpaceModel planar_acceptance_model() {
    Matrix a(2, 2);
    a << 0.0, 1.0, -1.0, -0.5;
    Matrix c = Matrix::Zero(2, 2);
    c(0, 0) = 1.0;
    c(1, 1) = 2.0; // anisotropic observation noise keeps the updates distinct
    return StateSpaceModel(2, 2, LinearDrift{a}, Matrix::Identity(2, 2),
                           Matrix::Identity(2, 2), c, 2.0);
}

StateSpaceModel one_step_bound_model() {
    Matrix a(2, 2);
    a << 0.0, 1.0, -1.0, -0.5;
    Matrix q = Matrix::Zero(2, 2);
    q(0, 0) = 1.0;
    q(1, 1) = 2.0; // anisotropic Q keeps the step-size threshold constant finite
    Matrix c = q;
    return StateSpaceModel(2, 2, LinearDrift{a}, Matrix::Identity(2, 2), q, c, 2.0);
}

std::vector<double> dyadic_h() {
    std::vector<double> hs;
    for (int k = 4; k <= 9; ++k) hs.push_back(std::pow(2.0, -k));
    return hs;
}

EsrfVariant reich_variant(FilterKind kind) {
    EsrfVariant v;
    v.kind = kind;
    v.perturbation.kind = PerturbationKind::Reich;
    return v;
}

SweepConfig rate_sweep(StateSpaceModel model, std::vector<EsrfVariant> variants,
                       std::vector<ErrorKind> kinds, int seeds, int parallelism = 0) {
    SweepConfig cfg{std::move(model)};
    cfg.variants = std::move(variants);
    cfg.h_values = dyadic_h();
    cfg.fine_refinement = 16;
    cfg.ensemble_size = 16;
    cfg.num_seeds = seeds;
    cfg.error_kinds = std::move(kinds);
    cfg.parallelism = parallelism;
    cfg.base_seed = 0x5eed2026;
    return cfg;
}

const ErrorTable& find_table(const ConvergenceReport& rep, const std::string& variant,
                             ErrorKind kind) {
    for (const ErrorTable& t : rep.tables)
        if (t.variant == variant && t.kind == kind) return t;
    throw std::runtime_error("table not found: " + variant);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_CASE("criterion 01: transform adjointness") {
    Timer timer;
    const CheckResult res = check_adjointness(500, 0xA001);
    report_line("01 transform-adjointness", res.pass,
                "500 instances, worst residual/tol " + fmt(res.max_residual) + " (" +
                    fmt(timer.seconds()) + "s)");
    REQUIRE(res.trials == 500);
    REQUIRE(res.pass);
    REQUIRE(timer.seconds() < 10.0);
}

TEST_CASE("criterion 02: exact analysis covariance") {
    Timer timer;
    const CheckResult res = check_covariance_law(500, 0xA002);
    report_line("02 exact-covariance-law", res.pass,
                "500 instances x 3 filters, worst residual/tol " + fmt(res.max_residual) +
                    " (" + fmt(timer.seconds()) + "s)");
    REQUIRE(res.pass);
    REQUIRE(timer.seconds() < 10.0);
}

TEST_CASE("criterion 03: deviation-gain ansatz") {
    Timer timer;
    const CheckResult res = check_whitaker_ansatz(500, 0xA003);
    report_line("03 deviation-gain-ansatz", res.pass,
                "500 instances, worst residual/tol " + fmt(res.max_residual) + " (" +
                    fmt(timer.seconds()) + "s)");
    REQUIRE(res.pass);
}

TEST_CASE("criterion 04: perturbation moment identities") {
    Timer timer;
    const CheckResult res = check_reich_moments(500, 0xA004);
    report_line("04 perturbation-moments", res.pass,
                "500 ensembles, worst residual/tol " + fmt(res.max_residual) + " (" +
                    fmt(timer.seconds()) + "s)");
    REQUIRE(res.pass);
}

TEST_CASE("criterion 05: expansion remainder bound") {
    Timer timer;
    const CheckResult res = check_remainder_bound(1000, 0xA005);
    report_line("05 remainder-bound", res.pass,
                "1000 instances, worst lhs/bound " + fmt(res.max_residual) + ", violations " +
                    std::to_string(res.violations) + " (" + fmt(timer.seconds()) + "s)");
    REQUIRE(res.violations == 0);
    REQUIRE(res.pass);
}

TEST_CASE("criterion 06: covariance convergence rate") {
    Timer timer;
    bool all_pass = true;
    std::string detail;
    for (bool planar : {false, true}) {
        SweepConfig cfg = rate_sweep(planar ? planar_acceptance_model()
                                            : scalar_acceptance_model(),
                                     {reich_variant(FilterKind::Eakf)},
                                     {ErrorKind::CovForecast, ErrorKind::CovAnalysis}, 8,
                                     /*parallelism=*/1);
        const ConvergenceReport rep = run_sweep(cfg);
        const ErrorTable& tf = find_table(rep, "eakf", ErrorKind::CovForecast);
        const ErrorTable& ta = find_table(rep, "eakf", ErrorKind::CovAnalysis);
        all_pass = all_pass && tf.pass && ta.pass;
        detail += std::string(planar ? "d2" : "scalar") + " slope_f=" +
                  fmt(tf.fit ? tf.fit->slope : 0.0) + " slope_a=" +
                  fmt(ta.fit ? ta.fit->slope : 0.0) + "  ";
    }
    const double secs = timer.seconds();
    report_line("06 covariance-rate", all_pass, detail + "(" + fmt(secs) + "s, single thread)");
    REQUIRE(all_pass);
    REQUIRE(secs < 120.0);
}

TEST_CASE("criterion 07: mean convergence rate") {
    Timer timer;
    bool all_pass = true;
    std::string detail;
    for (bool planar : {false, true}) {
        SweepConfig cfg = rate_sweep(planar ? planar_acceptance_model()
                                            : scalar_acceptance_model(),
                                     {reich_variant(FilterKind::Eakf)}, {ErrorKind::Mean}, 50);
        const ConvergenceReport rep = run_sweep(cfg);
        const ErrorTable& t = find_table(rep, "eakf", ErrorKind::Mean);
        all_pass = all_pass && t.pass;
        detail += std::string(planar ? "d2" : "scalar") + " slope=" +
                  fmt(t.fit ? t.fit->slope : 0.0) + "  ";
    }
    const double secs = timer.seconds();
    report_line("07 mean-rate", all_pass, detail + "(" + fmt(secs) + "s)");
    REQUIRE(all_pass);
    REQUIRE(secs < 600.0);
}

TEST_CASE("criterion 08: ensemble convergence to the limit equations") {
    Timer timer;
    SweepConfig cfg = rate_sweep(
        scalar_acceptance_model(),
        {reich_variant(FilterKind::Eakf), reich_variant(FilterKind::Etkf),
         reich_variant(FilterKind::WhitakerHamill)},
        {ErrorKind::EnsembleGap}, 50);
    const ConvergenceReport rep = run_sweep(cfg);
    bool all_pass = true;
    std::string detail;
    for (const char* name : {"eakf", "etkf", "wh2002"}) {
        const ErrorTable& t = find_table(rep, name, ErrorKind::EnsembleGap);
        all_pass = all_pass && t.pass;
        detail += std::string(name) + " slope=" + fmt(t.fit ? t.fit->slope : 0.0) + "  ";
    }
    const double secs = timer.seconds();
    report_line("08 ensemble-rate", all_pass, detail + "(" + fmt(secs) + "s)");
    REQUIRE(all_pass);
    REQUIRE(secs < 1200.0);
}

TEST_CASE("criterion 09: nonlinear drift ensemble rate and spread contraction") {
    Timer timer;
    LipschitzDrift drift{
        [](const Vector& x) { return Vector(-x + x.array().tanh().matrix()); }, 1.0};
    StateSpaceModel model(1, 1, drift, Matrix::Identity(1, 1), Matrix::Identity(1, 1),
                          Matrix::Identity(1, 1), 2.0);
    SweepConfig cfg =
        rate_sweep(model, {reich_variant(FilterKind::Etkf)}, {ErrorKind::EnsembleGap}, 50);
    const ConvergenceReport rep = run_sweep(cfg);
    const ErrorTable& t = find_table(rep, "etkf", ErrorKind::EnsembleGap);

    // spread contraction at every analysis step of a representative run
    const ObservationPath path = simulate_reference(model, TimeGrid(2.0 / 4096.0, 4096), 5150);
    Rng rng(5151);
    const Ensemble init(detail::standard_normal(rng, 1, 16));
    int violations = 0;
    for (double h : {2.0 / 32.0, 2.0 / 256.0}) {
        const FilterTrajectory ft =
            run_filter(reich_variant(FilterKind::Etkf), model, path, h, init);
        for (const StepDiagnostics& d : ft.diagnostics)
            if (d.spread_a > d.spread_f * (1.0 + 1e-12)) ++violations;
    }
    const bool pass = t.pass && violations == 0;
    const double secs = timer.seconds();
    report_line("09 nonlinear-rate", pass,
                "etkf slope=" + fmt(t.fit ? t.fit->slope : 0.0) + " spread violations " +
                    std::to_string(violations) + " (" + fmt(secs) + "s)");
    REQUIRE(t.pass);
    REQUIRE(violations == 0);
}

TEST_CASE("criterion 10: universality of the limit across filters") {
    Timer timer;
    SweepConfig cfg = rate_sweep(
        planar_acceptance_model(),
        {reich_variant(FilterKind::Eakf), reich_variant(FilterKind::WhitakerHamill)},
        {ErrorKind::PairwiseVariant}, 50);
    const ConvergenceReport rep = run_sweep(cfg);
    const ErrorTable& t = find_table(rep, "eakf|wh2002", ErrorKind::PairwiseVariant);
    const double secs = timer.seconds();
    report_line("10 universality", t.pass,
                "pairwise slope=" + std::string(t.fit ? fmt(t.fit->slope) : "n/a") +
                    (t.note.empty() ? "" : " [" + t.note + "]") + " (" + fmt(secs) + "s)");
    REQUIRE(t.pass);
    if (t.fit) REQUIRE(t.fit->slope >= 0.7);
}

TEST_CASE("criterion 11: one-step filter stability bounds") {
    Timer timer;
    StateSpaceModel model = one_step_bound_model();
    const ModifiedFilterBounds bounds = modified_filter_bounds(model);
    REQUIRE(std::isfinite(bounds.alpha_T));

    bool pass = true;
    double worst_ratio = 0.0;
    double worst_order = 0.0;
    for (double h : {0.25, 0.125}) {
        REQUIRE(h < bounds.h_star);
        const long steps = std::lround(2.0 / h);
        const ObservationPath path = simulate_reference(model, TimeGrid(h, steps), 0xB001);
        Rng rng(0xB002);
        const Ensemble init(detail::standard_normal(rng, 2, 12));
        const FilterTrajectory ft =
            run_filter(reich_variant(FilterKind::Modified), model, path, h, init);
        const Vector eigs0 = detail::sym_eigen(init.covariance()).values;
        const double bound = bounds.inv_analysis_cov_bound(1.0 / eigs0.minCoeff());
        for (std::size_t k = 1; k < ft.analysis_cov.size(); ++k) {
            const Vector eigs = detail::sym_eigen(ft.analysis_cov[k]).values;
            if (!(eigs.minCoeff() > 0.0)) pass = false;
            worst_ratio = std::max(worst_ratio, (1.0 / eigs.minCoeff()) / bound);
            const Matrix diff = ft.forecast_cov[k] - ft.analysis_cov[k];
            worst_order = std::min(worst_order, detail::sym_eigen(diff).values.minCoeff());
        }
    }
    pass = pass && worst_ratio <= 1.0 && worst_order >= -1e-10;
    report_line("11 stability-bounds", pass,
                "h*=" + fmt(bounds.h_star) + " alpha_T=" + fmt(bounds.alpha_T) +
                    " worst inv-cov/bound=" + fmt(worst_ratio) +
                    " min-eig(Pf-Pa)=" + fmt(worst_order) + " (" + fmt(timer.seconds()) + "s)");
    REQUIRE(pass);
}

TEST_CASE("criterion 12: inverse-root integral representation") {
    Timer timer;
    const CheckResult res = check_integral_representation(200, 0xA012, 1e4, 384, 1e-6);
    report_line("12 integral-representation", res.pass,
                "200 SPD matrices cond<=1e4, worst rel-err/1e-6 = " + fmt(res.max_residual) +
                    " (" + fmt(timer.seconds()) + "s)");
    REQUIRE(res.pass);
}

TEST_CASE("criterion 13: quadratic perturbation equation") {
    Timer timer;
    const CheckResult res = check_quadratic_residual(200, 0xA013);

    // forecast-covariance recursion residual decays at second order
    StateSpaceModel model = planar_acceptance_model();
    Rng rng(0xA013);
    const Ensemble analysis0(detail::standard_normal(rng, 2, 8));
    std::vector<std::pair<double, double>> table;
    for (double h : {0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625}) {
        const PerturbationSpec pert{PerturbationKind::QuadraticSolve, 0, 1e-10};
        const ForecastResult f0 = forecast_step(analysis0, model, h, pert);
        const Matrix pf0 = f0.ensemble.covariance();
        EsrfVariant v;
        v.kind = FilterKind::Etkf;
        v.perturbation = pert;
        const Ensemble a1 =
            analysis_step(f0.ensemble, v, model, h, Vector::Zero(model.dim_obs()));
        const Matrix pf1 = forecast_step(a1, model, h, pert).ensemble.covariance();
        const Matrix gain = kalman_gain(pf0, model, h);
        const Matrix rhs = model.A() * pf0 + pf0 * model.A().transpose() + model.Q() -
                           gain * (model.G() * pf0);
        table.emplace_back(h, (pf1 - pf0 - h * rhs).norm());
    }
    const auto fit = fit_rate(table);
    const bool pass = res.pass && fit.has_value() && fit->slope >= 1.8;
    report_line("13 quadratic-perturbation", pass,
                "200 residuals worst/tol " + fmt(res.max_residual) + ", recursion slope " +
                    fmt(fit ? fit->slope : 0.0) + " (" + fmt(timer.seconds()) + "s)");
    REQUIRE(res.pass);
    REQUIRE(fit.has_value());
    REQUIRE(fit->slope >= 1.8);
}

TEST_CASE("criterion 14: byte-identical reports") {
    Timer timer;
    auto run_once = [&]() {
        SweepConfig cfg = rate_sweep(scalar_acceptance_model(),
                                     {reich_variant(FilterKind::Eakf)},
                                     {ErrorKind::CovForecast, ErrorKind::CovAnalysis}, 8);
        return run_sweep(cfg);
    };
    const fs::path dir = fs::temp_directory_path() / "esrf-acceptance-determinism";
    fs::remove_all(dir);
    emit_report(run_once(), ReportFormat::Csv, dir / "a");
    emit_report(run_once(), ReportFormat::Csv, dir / "b");
    const bool errors_same = slurp(dir / "a" / "errors.csv") == slurp(dir / "b" / "errors.csv");
    const bool summary_same =
        slurp(dir / "a" / "summary.csv") == slurp(dir / "b" / "summary.csv");
    const bool pass = errors_same && summary_same;
    report_line("14 determinism", pass,
                std::string("errors.csv ") + (errors_same ? "identical" : "DIFFER") +
                    ", summary.csv " + (summary_same ? "identical" : "DIFFER") + " (" +
                    fmt(timer.seconds()) + "s)");
    fs::remove_all(dir);
    REQUIRE(pass);
}
