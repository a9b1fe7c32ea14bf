#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "esrf/kalman.hpp"
#include "esrf/matrix_ops.hpp"
#include "esrf/model.hpp"
#include "esrf/observation.hpp"
#include "esrf/perturbations.hpp"

namespace esrf {

enum class FilterKind { Eakf, Etkf, WhitakerHamill, Modified, StochasticEnkf };

/// Exact deviation transform, or the first-order expansion
/// Id - (h/2) P^f G^T C^{-1} G with the remainder dropped (selectable to
/// study the expansion error; the two agree to O(h^2)).
enum class TransformMode { Exact, FirstOrder };

inline const char* to_string(FilterKind k) {
    switch (k) {
        case FilterKind::Eakf: return "eakf";
        case FilterKind::Etkf: return "etkf";
        case FilterKind::WhitakerHamill: return "wh2002";
        case FilterKind::Modified: return "modified";
        case FilterKind::StochasticEnkf: return "stoch-enkf";
    }
    return "?";
}

/// Optional orthogonal post-multiplier generator: maps the forecast ensemble
/// and step index to an M x M orthogonal matrix with the ones vector as an
/// eigenvector (mean-preserving).
using PostMultiplierFn = std::function<Matrix(const Ensemble& forecast, long step)>;

struct EsrfVariant {
    FilterKind kind = FilterKind::Etkf;
    PerturbationSpec perturbation{};
    PostMultiplierFn post_multiplier{};
    TransformMode transform_mode = TransformMode::Exact;

    void validate() const {
        if (kind == FilterKind::Modified && perturbation.kind != PerturbationKind::Reich)
            throw ConfigError("the modified filter requires Reich perturbations");
        if (kind == FilterKind::StochasticEnkf && perturbation.kind != PerturbationKind::None)
            throw ConfigError("the stochastic EnKF uses its own random forecast noise; "
                              "set perturbation kind to none");
    }

    std::string label() const {
        std::string s = to_string(kind);
        if (transform_mode == TransformMode::FirstOrder) s += "-expansion";
        return s;
    }
};

// ---------------------------------------------------------------------------
// Transforms and gains
// ---------------------------------------------------------------------------

/// ETKF post-multiplier T = (Id + (h/(M-1)) (G E^f)^T C^{-1} (G E^f))^{-1/2}.
inline Matrix etkf_transform(const Ensemble& forecast, const StateSpaceModel& model, double h) {
    if (h < 0.0) throw ConfigError("etkf_transform: h must be nonnegative");
    const Index m = forecast.size();
    const Matrix ge = model.G() * forecast.deviations();
    Matrix inner = Matrix::Identity(m, m) +
                   (h / double(m - 1)) * (ge.transpose() * model.inv_C() * ge);
    return detail::sym_inv_sqrt(inner);
}

/// EAKF pre-multiplier
/// A = sqrt(P^f) (Id + h sqrt(P^f) G^T C^{-1} G sqrt(P^f))^{-1/2} sqrt(P^f)^+,
/// with the pseudo-inverse root when P^f is rank-deficient.
inline Matrix eakf_transform(const Ensemble& forecast, const StateSpaceModel& model, double h,
                             double rank_tol = 1e-10) {
    if (h < 0.0) throw ConfigError("eakf_transform: h must be nonnegative");
    const Index d = forecast.dim();
    const Matrix sf = detail::sym_sqrt(forecast.covariance());
    const Matrix inner = Matrix::Identity(d, d) + h * (sf * model.theta() * sf);
    return sf * detail::sym_inv_sqrt(inner) * detail::sym_pinv(sf, rank_tol);
}

struct TransformExpansion {
    Matrix linear_part;       // Id - (h/2) P^f G^T C^{-1} G
    Matrix remainder;         // A E^f - linear_part E^f
    double remainder_bound;   // (3 h^2 / 8) |P^f|^2 |G^T C^{-1} G|^2, operator norms
};

/// First-order expansion of the exact transform acting on the deviations.
inline TransformExpansion integral_transform_expansion(const Ensemble& forecast,
                                                       const StateSpaceModel& model, double h) {
    if (h < 0.0) throw ConfigError("integral_transform_expansion: h must be nonnegative");
    const Index d = forecast.dim();
    const Matrix pf = forecast.covariance();
    TransformExpansion out;
    out.linear_part = Matrix::Identity(d, d) - 0.5 * h * (pf * model.theta());
    const Matrix dev = forecast.deviations();
    out.remainder = eakf_transform(forecast, model, h) * dev - out.linear_part * dev;
    const double pf_norm = detail::spectral_norm_sym(pf);
    const double theta_norm = detail::spectral_norm_sym(model.theta());
    out.remainder_bound = 0.375 * h * h * pf_norm * pf_norm * theta_norm * theta_norm;
    return out;
}

/// Deviation gain of the unperturbed filter:
/// K~ = P^f G^T (C + h G P^f G^T)^{-1/2} ((C + h G P^f G^T)^{1/2} + C^{1/2})^{-1}.
/// Solves (Id - h K~ G) P^f (Id - h K~ G)^T = (Id - h K G) P^f.
inline Matrix whitaker_gain(const Matrix& forecast_cov, const StateSpaceModel& model, double h) {
    if (h < 0.0) throw ConfigError("whitaker_gain: h must be nonnegative");
    Matrix b = h * (model.G() * forecast_cov * model.G().transpose());
    return forecast_cov * model.G().transpose() *
           half_gain_inverse(PsdMatrix(model.C()), PsdMatrix(0.5 * (b + b.transpose())));
}

/// Kalman gain, the variant's deviation half-gain K^, and the operator bound
/// on the unified-update remainder term.
struct GainSet {
    Matrix gain;
    Matrix half_gain;
    double remainder_bound = 0.0;
};

inline GainSet gain_set(const Matrix& forecast_cov, const StateSpaceModel& model, double h,
                        FilterKind kind) {
    GainSet g;
    g.gain = kalman_gain(forecast_cov, model, h);
    switch (kind) {
        case FilterKind::Eakf:
        case FilterKind::Etkf: {
            g.half_gain = 0.5 * forecast_cov * model.G().transpose() * model.inv_C();
            const double pf_norm = detail::spectral_norm_sym(forecast_cov);
            const double theta_norm = detail::spectral_norm_sym(model.theta());
            g.remainder_bound = 0.375 * h * h * pf_norm * pf_norm * theta_norm * theta_norm;
            break;
        }
        case FilterKind::WhitakerHamill:
            g.half_gain = whitaker_gain(forecast_cov, model, h);
            break;
        case FilterKind::Modified:
            g.half_gain = 0.5 * g.gain;
            break;
        case FilterKind::StochasticEnkf:
            g.half_gain = Matrix::Zero(g.gain.rows(), g.gain.cols());
            break;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Forecast / analysis steps
// ---------------------------------------------------------------------------

struct ForecastResult {
    Ensemble ensemble;
    Matrix perturbation; // the d x M matrix W used in h Q^{1/2} W (zero for kind none)
};

/// X^(i),f = X^(i),a + h drift(X^(i),a) + h Q^{1/2} W^(i) with deterministic
/// perturbations chosen by the spec.
inline ForecastResult forecast_step(const Ensemble& analysis, const StateSpaceModel& model,
                                    double h, const PerturbationSpec& pert) {
    if (h <= 0.0) throw ConfigError("forecast_step: h must be positive");
    Matrix w;
    switch (pert.kind) {
        case PerturbationKind::None:
            w = Matrix::Zero(analysis.dim(), analysis.size());
            break;
        case PerturbationKind::Reich:
            w = perturb_reich(analysis, PsdMatrix(model.Q()));
            break;
        case PerturbationKind::ReichPseudoInverse:
            w = perturb_reich_pinv(analysis, PsdMatrix(model.Q()), pert.rank_tol);
            break;
        case PerturbationKind::QuadraticSolve:
            w = solve_quadratic_perturbation(analysis, model, h, pert.rank_tol);
            break;
    }
    Matrix members = analysis.members() + h * model.drift_columns(analysis.members()) +
                     h * (model.sqrt_Q() * w);
    return {Ensemble(std::move(members)), std::move(w)};
}

/// Stochastic EnKF forecast: fresh Gaussian model noise per member,
/// X^(i),f = X^(i),a + h drift + Q^{1/2} W~, W~ ~ N(0, h Id).
inline Ensemble stochastic_forecast_step(const Ensemble& analysis, const StateSpaceModel& model,
                                         double h, Rng& rng) {
    if (h <= 0.0) throw ConfigError("stochastic_forecast_step: h must be positive");
    const Matrix noise =
        std::sqrt(h) * detail::standard_normal(rng, analysis.dim(), analysis.size());
    Matrix members = analysis.members() + h * model.drift_columns(analysis.members()) +
                     model.sqrt_Q() * noise;
    return Ensemble(std::move(members));
}

/// Applies an orthogonal post-multiplier to analysis deviations.  U must be
/// orthogonal and have the ones vector as an eigenvector (so column sums stay
/// zero and the covariance is unchanged).
inline Matrix orthogonal_postmultiply(const Matrix& analysis_devs, const Matrix& u) {
    const Index m = analysis_devs.cols();
    if (u.rows() != m || u.cols() != m)
        throw DimensionError("orthogonal_postmultiply: U must be M x M");
    if ((u.transpose() * u - Matrix::Identity(m, m)).norm() > 1e-10 * double(m))
        throw ConfigError("orthogonal_postmultiply: U is not orthogonal");
    const Vector ones = Vector::Ones(m);
    const Vector v = u * ones;
    const double lambda = v.mean();
    if (std::abs(std::abs(lambda) - 1.0) > 1e-10 ||
        (v - lambda * ones).norm() > 1e-10 * std::sqrt(double(m)))
        throw ConfigError("orthogonal_postmultiply: ones vector is not an eigenvector of U");
    return analysis_devs * u;
}

/// One analysis update.  All deterministic variants update the mean by
/// xbar^a = xbar^f + K (dy - h G xbar^f) and transform the deviations; the
/// member form of the unified update is recovered exactly (tested, not
/// recomputed here).  The stochastic variant perturbs the observations per
/// member and needs an RNG.
inline Ensemble analysis_step(const Ensemble& forecast, const EsrfVariant& variant,
                              const StateSpaceModel& model, double h, const Vector& dy,
                              Rng* rng = nullptr) {
    if (h < 0.0) throw ConfigError("analysis_step: h must be nonnegative");
    if (dy.size() != model.dim_obs()) throw DimensionError("analysis_step: dy has wrong size");
    variant.validate();

    const EnsembleStats st = ensemble_stats(forecast);
    const Matrix gain = kalman_gain(st.covariance, model, h);

    if (variant.kind == FilterKind::StochasticEnkf) {
        if (rng == nullptr)
            throw ConfigError("analysis_step: the stochastic EnKF needs an RNG");
        Matrix members = forecast.members();
        const double sq_h = std::sqrt(h);
        for (Index i = 0; i < members.cols(); ++i) {
            const Vector vtilde = detail::standard_normal(*rng, model.dim_obs());
            const Vector dy_i = dy + model.sqrt_C() * (sq_h * vtilde);
            members.col(i) += gain * (dy_i - h * (model.G() * members.col(i)));
        }
        return Ensemble(std::move(members));
    }

    const Vector mean_a = st.mean + gain * (dy - h * (model.G() * st.mean));
    Matrix dev_a;
    switch (variant.kind) {
        case FilterKind::Eakf:
            dev_a = (variant.transform_mode == TransformMode::Exact)
                        ? Matrix(eakf_transform(forecast, model, h) * st.deviations)
                        : Matrix(st.deviations -
                                 0.5 * h * (st.covariance * (model.theta() * st.deviations)));
            break;
        case FilterKind::Etkf:
            dev_a = (variant.transform_mode == TransformMode::Exact)
                        ? Matrix(st.deviations * etkf_transform(forecast, model, h))
                        : Matrix(st.deviations -
                                 0.5 * h * (st.covariance * (model.theta() * st.deviations)));
            break;
        case FilterKind::WhitakerHamill: {
            const Matrix ktilde = whitaker_gain(st.covariance, model, h);
            dev_a = st.deviations - h * (ktilde * (model.G() * st.deviations));
            break;
        }
        case FilterKind::Modified:
            dev_a = st.deviations - 0.5 * h * (gain * (model.G() * st.deviations));
            break;
        case FilterKind::StochasticEnkf:
            break; // handled above
    }
    if (variant.post_multiplier) {
        const Matrix u = variant.post_multiplier(forecast, -1);
        dev_a = orthogonal_postmultiply(dev_a, u);
    }
    return Ensemble(dev_a.colwise() + mean_a);
}

// ---------------------------------------------------------------------------
// Filter runs
// ---------------------------------------------------------------------------

struct StepDiagnostics {
    double pf_norm = 0.0;
    double pa_norm = 0.0;
    double spread_f = 0.0;
    double spread_a = 0.0;
    double gain_norm = 0.0;
    double half_gain_norm = 0.0;
    double mean_residual = 0.0; // implied analysis mean vs the gain formula
    double a1_cross_residual = std::numeric_limits<double>::quiet_NaN();
    double a1_center_residual = std::numeric_limits<double>::quiet_NaN();
    double a1_second_norm = std::numeric_limits<double>::quiet_NaN();
};

/// Time-indexed record of one filter run: analysis ensembles at t_0..t_L and
/// the forecast/analysis covariances (index 0 holds the initial covariance).
struct FilterTrajectory {
    double h = 0.0;
    TimeGrid grid{1.0, 0};
    std::vector<Matrix> members;
    std::vector<Matrix> forecast_cov;
    std::vector<Matrix> analysis_cov;
    std::vector<StepDiagnostics> diagnostics;
    double effective_kappa = 0.0;
};

struct RunOptions {
    /// Seed for the stochastic variant's update noise; 0 derives one from the
    /// path seed.
    std::uint64_t update_noise_seed = 0;
    double divergence_threshold = 1e8;
};

inline FilterTrajectory run_filter(const EsrfVariant& variant, const StateSpaceModel& model,
                                   const ObservationPath& path, double h, const Ensemble& init,
                                   RunOptions opts = {}) {
    variant.validate();
    if (init.dim() != model.dim_state())
        throw DimensionError("run_filter: ensemble dimension does not match the model");
    const std::vector<Vector> dy = aggregate_increments(path, h);
    const long steps = long(dy.size());

    FilterTrajectory traj;
    traj.h = h;
    traj.grid = TimeGrid(h, steps);
    traj.members.reserve(steps + 1);
    traj.forecast_cov.reserve(steps + 1);
    traj.analysis_cov.reserve(steps + 1);
    traj.diagnostics.reserve(steps);

    // effective kappa for the assumption residual reports
    double kappa = variant.perturbation.kappa_bound;
    if (kappa <= 0.0) {
        const Vector eigs = detail::sym_eigen(init.covariance()).values;
        const double inv_p0 =
            eigs.minCoeff() > 0.0 ? 1.0 / eigs.minCoeff() : std::numeric_limits<double>::infinity();
        kappa = default_kappa(model, modified_filter_bounds(model).inv_analysis_cov_bound(inv_p0));
    }
    traj.effective_kappa = kappa;

    Rng update_rng(opts.update_noise_seed
                       ? opts.update_noise_seed
                       : detail::mix_seed(path.rng_seed, 0x5bf03635ULL));

    Ensemble current = init;
    traj.members.push_back(current.members());
    traj.forecast_cov.push_back(current.covariance());
    traj.analysis_cov.push_back(current.covariance());

    const PsdMatrix q_psd(model.Q());
    for (long k = 0; k < steps; ++k) {
        StepDiagnostics diag;
        Ensemble forecast = current;
        if (variant.kind == FilterKind::StochasticEnkf) {
            forecast = stochastic_forecast_step(current, model, h, update_rng);
        } else {
            ForecastResult fr = forecast_step(current, model, h, variant.perturbation);
            if (variant.perturbation.kind != PerturbationKind::None) {
                const Assumption1Report rep =
                    check_assumption1(fr.perturbation, current, q_psd, kappa);
                diag.a1_cross_residual = rep.cross_residual;
                diag.a1_center_residual = rep.center_residual;
                diag.a1_second_norm = rep.second_moment_norm;
            }
            forecast = std::move(fr.ensemble);
        }

        const EnsembleStats stf = ensemble_stats(forecast);
        const GainSet gains = gain_set(stf.covariance, model, h, variant.kind);
        diag.pf_norm = detail::spectral_norm_sym(stf.covariance);
        diag.spread_f = stf.covariance.trace();
        diag.gain_norm = gains.gain.norm();
        diag.half_gain_norm = gains.half_gain.norm();

        current = analysis_step(forecast, variant, model, h, dy[k],
                                variant.kind == FilterKind::StochasticEnkf ? &update_rng : nullptr);

        const EnsembleStats sta = ensemble_stats(current);
        diag.pa_norm = detail::spectral_norm_sym(sta.covariance);
        diag.spread_a = sta.covariance.trace();
        if (variant.kind != FilterKind::StochasticEnkf) {
            const Vector target = stf.mean + gains.gain * (dy[k] - h * (model.G() * stf.mean));
            diag.mean_residual = (sta.mean - target).norm();
        } else {
            diag.mean_residual = std::numeric_limits<double>::quiet_NaN();
        }
        if (sta.mean.norm() > opts.divergence_threshold)
            throw DivergenceError("run_filter: ensemble mean diverged", k + 1);

        traj.members.push_back(current.members());
        traj.forecast_cov.push_back(stf.covariance);
        traj.analysis_cov.push_back(sta.covariance);
        traj.diagnostics.push_back(diag);
    }
    return traj;
}

/// Per-step diagnostics as CSV.  Column order:
/// step, t, pf_norm, pa_norm, spread_f, spread_a, gain_norm, half_gain_norm,
/// mean_residual, a1_cross_residual, a1_center_residual, a1_second_norm.
inline void write_diagnostics_csv(const FilterTrajectory& traj, std::ostream& os) {
    os << "step,t,pf_norm,pa_norm,spread_f,spread_a,gain_norm,half_gain_norm,"
          "mean_residual,a1_cross_residual,a1_center_residual,a1_second_norm\n";
    char buf[32];
    for (std::size_t k = 0; k < traj.diagnostics.size(); ++k) {
        const StepDiagnostics& d = traj.diagnostics[k];
        const double vals[] = {traj.grid.t(long(k) + 1), d.pf_norm,  d.pa_norm,
                               d.spread_f,               d.spread_a, d.gain_norm,
                               d.half_gain_norm,         d.mean_residual,
                               d.a1_cross_residual,      d.a1_center_residual,
                               d.a1_second_norm};
        os << (k + 1);
        for (double v : vals) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            os << ',' << buf;
        }
        os << "\n";
    }
}

} // namespace esrf
