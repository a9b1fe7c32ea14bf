#pragma once

#include <cmath>
#include <ostream>
#include <vector>

#include "esrf/filters.hpp"
#include "esrf/model.hpp"
#include "esrf/observation.hpp"
#include "esrf/perturbations.hpp"

namespace esrf {

struct LimitDiagnostics {
    double cov_norm = 0.0;
    double spread = 0.0;
    double min_eigenvalue = 0.0;
    double mean_eq_residual = 0.0; // implied mean step vs the mean equation
};

/// Fine-grid solution of the coupled ensemble equations
///   dX^(i) = drift(X^(i)) dt + Q^{1/2} W^(i) dt
///            + P_t G^T C^{-1} (dY - (1/2) G (X^(i) + xbar) dt)
/// with P_t the empirical ensemble covariance recomputed each step.
struct LimitTrajectory {
    TimeGrid grid{1.0, 0};
    std::vector<Matrix> members; // fine steps + 1 entries, d x M each
    std::vector<LimitDiagnostics> diagnostics;
    double sup_spread = 0.0;
};

/// Explicit Euler on the path's fine grid, consuming the fine observation
/// increments.  The perturbation kind selects the continuous model
/// perturbations: reich (inverse), reich-pinv (pseudo-inverse), or none.
/// A singular P_t under the reich kind aborts with the failing step.
inline LimitTrajectory integrate_limit(const StateSpaceModel& model, const ObservationPath& path,
                                       const Ensemble& init, const PerturbationSpec& pert) {
    if (init.dim() != model.dim_state())
        throw DimensionError("integrate_limit: ensemble dimension does not match the model");
    if (pert.kind == PerturbationKind::QuadraticSolve)
        throw ConfigError("integrate_limit: the quadratic perturbation has no continuous-time "
                          "counterpart; use reich, reich-pinv, or none");
    const double hf = path.fine_grid.h();
    const long steps = path.fine_grid.steps();
    const Index d = init.dim();
    const Index m = init.size();

    LimitTrajectory traj;
    traj.grid = path.fine_grid;
    traj.members.reserve(steps + 1);
    traj.diagnostics.reserve(steps);

    Matrix x = init.members();
    traj.members.push_back(x);
    traj.sup_spread = init.spread();

    const Matrix gt_cinv = model.G().transpose() * model.inv_C();
    for (long k = 0; k < steps; ++k) {
        const Vector mean = x.rowwise().mean();
        const Matrix dev = x.colwise() - mean;
        Matrix cov = dev * dev.transpose() / double(m - 1);
        cov = 0.5 * (cov + cov.transpose());
        const detail::SymEigen es = detail::sym_eigen(cov);

        LimitDiagnostics diag;
        diag.cov_norm = es.values.cwiseAbs().maxCoeff();
        diag.spread = es.values.sum();
        diag.min_eigenvalue = es.values.minCoeff();

        Matrix w;
        switch (pert.kind) {
            case PerturbationKind::None:
                w = Matrix::Zero(d, m);
                break;
            case PerturbationKind::Reich: {
                if (diag.min_eigenvalue <= 1e-14 * std::max(diag.cov_norm, 1e-300))
                    throw DivergenceError(
                        "integrate_limit: ensemble covariance became singular", k);
                Vector inv = es.values.cwiseInverse();
                const Matrix pinv = es.vectors * inv.asDiagonal() * es.vectors.transpose();
                w = 0.5 * model.sqrt_Q() * (pinv * dev);
                break;
            }
            case PerturbationKind::ReichPseudoInverse:
                w = 0.5 * model.sqrt_Q() * (detail::sym_pinv(cov, pert.rank_tol) * dev);
                break;
            case PerturbationKind::QuadraticSolve:
                break; // rejected above
        }

        const Matrix gain = cov * gt_cinv;
        const Vector dy = path.obs_increments[k];
        const Matrix drift_cols = model.drift_columns(x);
        const Matrix innovations =
            dy.replicate(1, m) - 0.5 * hf * (model.G() * (x.colwise() + mean));
        x += hf * (drift_cols + model.sqrt_Q() * w) + gain * innovations;

        // centered perturbations make the implied mean an Euler step of the
        // mean equation (with the member-averaged drift); record the residual
        const Vector new_mean = x.rowwise().mean();
        const Vector mean_target = mean + hf * Vector(drift_cols.rowwise().mean()) +
                                   gain * (dy - hf * (model.G() * mean));
        diag.mean_eq_residual = (new_mean - mean_target).norm();

        traj.members.push_back(x);
        traj.sup_spread = std::max(traj.sup_spread, diag.spread);
        traj.diagnostics.push_back(diag);
        if (!x.allFinite())
            throw DivergenceError("integrate_limit: ensemble diverged", k + 1);
    }
    return traj;
}

/// One evaluation point of the member-gap functional.
struct GapPoint {
    double t = 0.0;
    double gap = 0.0;         // sum_i || X^(i),a_{nu(t)} - X^(i)_t ||^2
    double running_sup = 0.0;
};

/// Squared ensemble distance between a discrete filter trajectory (frozen at
/// the latest coarse analysis) and the fine-grid limit trajectory, evaluated
/// at every fine time.  Members must be index-aligned (same initial
/// ensemble).
inline std::vector<GapPoint> member_gap(const FilterTrajectory& discrete,
                                        const LimitTrajectory& limit) {
    if (discrete.members.empty() || limit.members.empty())
        throw DimensionError("member_gap: empty trajectory");
    if (discrete.members.front().rows() != limit.members.front().rows() ||
        discrete.members.front().cols() != limit.members.front().cols())
        throw DimensionError("member_gap: ensembles are not aligned (dimension or size)");
    const double hf = limit.grid.h();
    const double ratio = discrete.h / hf;
    const long r = static_cast<long>(std::llround(ratio));
    if (r < 1 || std::abs(ratio - double(r)) > 1e-9 * std::max(1.0, ratio))
        throw ConfigError("member_gap: limit grid does not refine the discrete grid");

    std::vector<GapPoint> out;
    out.reserve(limit.members.size());
    double sup = 0.0;
    for (std::size_t j = 0; j < limit.members.size(); ++j) {
        const std::size_t k = std::min(j / std::size_t(r), discrete.members.size() - 1);
        GapPoint pt;
        pt.t = limit.grid.t(long(j));
        pt.gap = (discrete.members[k] - limit.members[j]).squaredNorm();
        sup = std::max(sup, pt.gap);
        pt.running_sup = sup;
        out.push_back(pt);
    }
    return out;
}

/// Member snapshots at the requested times (rounded down to the fine grid):
/// columns t, member_0_0..member_{d-1}_{M-1} in column-major member order.
inline void write_snapshots_csv(const LimitTrajectory& traj, const std::vector<double>& times,
                                std::ostream& os) {
    const Index d = traj.members.front().rows();
    const Index m = traj.members.front().cols();
    os << "t";
    for (Index i = 0; i < m; ++i)
        for (Index r = 0; r < d; ++r) os << ",x" << r << "_m" << i;
    os << "\n";
    char buf[32];
    for (double t : times) {
        const long j = std::min(traj.grid.nu(t), long(traj.members.size()) - 1);
        std::snprintf(buf, sizeof(buf), "%.17g", traj.grid.t(j));
        os << buf;
        for (Index i = 0; i < m; ++i)
            for (Index r = 0; r < d; ++r) {
                std::snprintf(buf, sizeof(buf), "%.17g", traj.members[j](r, i));
                os << ',' << buf;
            }
        os << "\n";
    }
}

} // namespace esrf
