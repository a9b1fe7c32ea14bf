#pragma once

#include <cmath>
#include <optional>
#include <ostream>
#include <vector>

#include "esrf/model.hpp"
#include "esrf/observation.hpp"

namespace esrf {

enum class FilterPhase { Forecast, Analysis };

struct KalmanState {
    Vector mean;
    Matrix cov;
    FilterPhase phase = FilterPhase::Analysis;
    long step_index = 0;
};

struct KalmanStepResult {
    KalmanState forecast;
    KalmanState analysis;
    Matrix gain;
};

/// Kalman gain K = P^f G^T (C + h G P^f G^T)^{-1}, computed by Cholesky solve.
inline Matrix kalman_gain(const Matrix& forecast_cov, const StateSpaceModel& model, double h) {
    Matrix s = model.C() + h * (model.G() * forecast_cov * model.G().transpose());
    s = 0.5 * (s + s.transpose());
    Eigen::LLT<Matrix> llt(s);
    if (llt.info() != Eigen::Success)
        throw SingularMatrixError("kalman_gain: innovation covariance not PD");
    return llt.solve(model.G() * forecast_cov).transpose();
}

/// One forecast/update cycle of the discrete Kalman filter on observation
/// increments: forecast mean (Id + hA) x, forecast covariance
/// (Id + hA) P (Id + hA)^T + hQ, then the increment-form update with gain
/// K = P^f G^T (C + h G P^f G^T)^{-1}.
inline KalmanStepResult kalman_step(const KalmanState& state, const StateSpaceModel& model,
                                    double h, const Vector& dy) {
    if (!model.is_linear()) throw ModelError("kalman_step requires a linear drift");
    if (state.phase != FilterPhase::Analysis)
        throw ConfigError("kalman_step expects an analysis-phase state");
    if (dy.size() != model.dim_obs()) throw DimensionError("kalman_step: dy has wrong size");

    const Index d = model.dim_state();
    const Matrix prop = Matrix::Identity(d, d) + h * model.A();

    KalmanStepResult out;
    out.forecast.mean = prop * state.mean;
    out.forecast.cov = prop * state.cov * prop.transpose() + h * model.Q();
    out.forecast.cov = 0.5 * (out.forecast.cov + out.forecast.cov.transpose());
    out.forecast.phase = FilterPhase::Forecast;
    out.forecast.step_index = state.step_index + 1;

    out.gain = kalman_gain(out.forecast.cov, model, h);
    out.analysis.mean =
        out.forecast.mean + out.gain * (dy - h * (model.G() * out.forecast.mean));
    Matrix pa = (Matrix::Identity(d, d) - h * out.gain * model.G()) * out.forecast.cov;
    out.analysis.cov = 0.5 * (pa + pa.transpose());
    out.analysis.phase = FilterPhase::Analysis;
    out.analysis.step_index = state.step_index + 1;
    return out;
}

/// Fine-grid mean and covariance of the continuous-time filter:
///     dx = A x dt + P G^T C^{-1} (dY - G x dt)
///     dP = (A P + P A^T + Q - P G^T C^{-1} G P) dt
struct KalmanBucyTrajectory {
    TimeGrid grid;
    std::vector<Vector> means;
    std::vector<Matrix> covs;
    double sup_cov_norm = 0.0;
};

/// Explicit Euler integration of the mean/covariance equations on the path's
/// fine grid, consuming the same observation increments as the discrete
/// filters.  P is symmetrized each step and eigen-clamped at zero if needed.
/// Optional overrides replace the model's initial mean/covariance (used to
/// start the reference processes at an ensemble's empirical moments).
inline KalmanBucyTrajectory integrate_kalman_bucy(const StateSpaceModel& model,
                                                  const ObservationPath& path,
                                                  std::optional<Vector> mean0 = std::nullopt,
                                                  std::optional<Matrix> cov0 = std::nullopt) {
    if (!model.is_linear()) throw ModelError("integrate_kalman_bucy requires a linear drift");
    const Index d = model.dim_state();
    const double hf = path.fine_grid.h();
    const long steps = path.fine_grid.steps();

    KalmanBucyTrajectory traj{path.fine_grid, {}, {}, 0.0};
    traj.means.reserve(steps + 1);
    traj.covs.reserve(steps + 1);

    Vector x = mean0 ? *mean0 : model.init_mean();
    Matrix cov = cov0 ? *cov0 : model.init_cov();
    if (x.size() != d || cov.rows() != d || cov.cols() != d)
        throw DimensionError("integrate_kalman_bucy: initial moments have wrong size");

    traj.means.push_back(x);
    traj.covs.push_back(cov);
    traj.sup_cov_norm = cov.norm();

    const Matrix& a = model.A();
    for (long k = 0; k < steps; ++k) {
        const Matrix gain = cov * model.G().transpose() * model.inv_C();
        const Matrix rhs =
            a * cov + cov * a.transpose() + model.Q() - gain * (model.G() * cov);
        x += hf * (a * x) + gain * (path.obs_increments[k] - hf * (model.G() * x));
        cov += hf * rhs;
        cov = 0.5 * (cov + cov.transpose());
        // clamp only when the cheap PD probe fails
        if (Eigen::LLT<Matrix>(cov).info() != Eigen::Success)
            cov = detail::clamp_psd(cov);
        const double norm = cov.norm();
        if (norm > 1e8)
            throw DivergenceError("integrate_kalman_bucy: covariance blow-up", k + 1);
        traj.sup_cov_norm = std::max(traj.sup_cov_norm, norm);
        traj.means.push_back(x);
        traj.covs.push_back(cov);
    }
    return traj;
}

/// CSV export: t, mean components, covariance upper triangle (row by row).
inline void write_csv(const KalmanBucyTrajectory& traj, std::ostream& os) {
    const Index d = traj.means.empty() ? 0 : traj.means.front().size();
    os << "t";
    for (Index i = 0; i < d; ++i) os << ",mean_" << i;
    for (Index i = 0; i < d; ++i)
        for (Index j = i; j < d; ++j) os << ",cov_" << i << "_" << j;
    os << "\n";
    char buf[32];
    for (std::size_t k = 0; k < traj.means.size(); ++k) {
        std::snprintf(buf, sizeof(buf), "%.17g", traj.grid.t(long(k)));
        os << buf;
        for (Index i = 0; i < d; ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", traj.means[k](i));
            os << ',' << buf;
        }
        for (Index i = 0; i < d; ++i)
            for (Index j = i; j < d; ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", traj.covs[k](i, j));
                os << ',' << buf;
            }
        os << "\n";
    }
}

} // namespace esrf
