#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "esrf/matrix_ops.hpp"
#include "esrf/model.hpp"

namespace esrf {

enum class PerturbationKind { None, Reich, ReichPseudoInverse, QuadraticSolve };

/// Configuration of the deterministic model perturbations used in the
/// forecast step.  kappa_bound is the Frobenius bound on the perturbation
/// second moment; a non-positive value means "derive the default at run
/// start" (see default_kappa).
struct PerturbationSpec {
    PerturbationKind kind = PerturbationKind::Reich;
    double kappa_bound = 0.0;
    double rank_tol = 1e-10;
};

inline const char* to_string(PerturbationKind k) {
    switch (k) {
        case PerturbationKind::None: return "none";
        case PerturbationKind::Reich: return "reich";
        case PerturbationKind::ReichPseudoInverse: return "reich-pinv";
        case PerturbationKind::QuadraticSolve: return "quadratic";
    }
    return "?";
}

/// W^(i) = (1/2) Q^{1/2} (P^a)^{-1} (X^(i) - xbar) for an analysis ensemble
/// with invertible covariance.  Columns are centered and the cross-moment
/// (1/(M-1)) sum (X - xbar) W^T Q^{1/2} equals Q/2.
inline Matrix perturb_reich(const Ensemble& analysis, const PsdMatrix& q) {
    if (q.size() != analysis.dim())
        throw DimensionError("perturb_reich: Q has wrong dimensions");
    const Matrix dev = analysis.deviations();
    const Matrix pa = analysis.covariance();
    Eigen::LLT<Matrix> llt(pa);
    const double lmin = detail::sym_eigen(pa).values.minCoeff();
    const double lmax = detail::sym_eigen(pa).values.maxCoeff();
    if (llt.info() != Eigen::Success || lmin <= 1e-12 * std::max(lmax, 1e-300))
        throw DegenerateEnsembleError(
            "perturb_reich: analysis covariance is singular; use the pseudo-inverse variant");
    return 0.5 * detail::sym_sqrt(q.matrix()) * llt.solve(dev);
}

/// Pseudo-inverse variant for rank-deficient analysis covariances (M <= d).
/// The cross-moment becomes the projection of Q/2 onto the deviation span.
inline Matrix perturb_reich_pinv(const Ensemble& analysis, const PsdMatrix& q,
                                 double rank_tol = 1e-10) {
    if (q.size() != analysis.dim())
        throw DimensionError("perturb_reich_pinv: Q has wrong dimensions");
    const Matrix dev = analysis.deviations();
    const Matrix pinv = detail::sym_pinv(analysis.covariance(), rank_tol);
    return 0.5 * detail::sym_sqrt(q.matrix()) * pinv * dev;
}

/// Continuous-time counterpart W_t^(i) = (1/2) Q^{1/2} P_t^{-1} (X^(i) - xbar).
inline Matrix perturb_continuous(const Ensemble& ensemble, const PsdMatrix& q,
                                 const PsdMatrix& p_t) {
    if (q.size() != ensemble.dim() || p_t.size() != ensemble.dim())
        throw DimensionError("perturb_continuous: dimension mismatch");
    Eigen::LLT<Matrix> llt(p_t.matrix());
    const Vector eigs = detail::sym_eigen(p_t.matrix()).values;
    if (llt.info() != Eigen::Success ||
        eigs.minCoeff() <= 1e-14 * std::max(eigs.maxCoeff(), 1e-300))
        throw SingularMatrixError("perturb_continuous: P_t is singular");
    return 0.5 * detail::sym_sqrt(q.matrix()) * llt.solve(ensemble.deviations());
}

namespace detail {

/// Rows of a d x M matrix U with orthonormal rows, each orthogonal to the
/// all-ones vector, whose leading rows span the row space of etilde.  The
/// completion uses Helmert candidates and is fully deterministic.
inline Matrix ones_orthogonal_frame(const Matrix& etilde, Index d, Index m, double rank_tol) {
    if (m < d + 1)
        throw DegenerateEnsembleError(
            "quadratic perturbation needs ensemble size M >= d + 1");
    std::vector<Vector> rows;
    rows.reserve(d);

    const Matrix b = etilde * etilde.transpose();
    const SymEigen es = sym_eigen(b);
    const double lmax = es.values.size() ? es.values.maxCoeff() : 0.0;
    for (Index j = es.values.size() - 1; j >= 0; --j) {
        if (Index(rows.size()) >= d) break;
        if (es.values(j) > rank_tol * std::max(lmax, 1e-300)) {
            Vector u = (es.vectors.col(j).transpose() * etilde).transpose() /
                       std::sqrt(es.values(j));
            rows.push_back(u);
        }
    }
    // Helmert vectors h_k = (1,...,1,-k,0,...,0)/sqrt(k(k+1)), all orthogonal to 1
    for (Index k = 1; k < m && Index(rows.size()) < d; ++k) {
        Vector cand = Vector::Zero(m);
        cand.head(k).setOnes();
        cand(k) = -double(k);
        cand /= std::sqrt(double(k) * double(k + 1));
        for (const Vector& r : rows) cand -= r.dot(cand) * r;
        const double norm = cand.norm();
        if (norm > 0.5) rows.push_back(cand / norm);
    }
    if (Index(rows.size()) < d)
        throw DegenerateEnsembleError("could not complete an orthonormal frame in 1^perp");
    Matrix u(d, m);
    for (Index i = 0; i < d; ++i) u.row(i) = rows[i].transpose();
    return u;
}

} // namespace detail

/// Pieces of the quadratic-matrix-equation perturbation, kept separate so the
/// defining residuals can be tested directly.
struct QuadraticPerturbation {
    Matrix w_hat;    // d x M perturbation matrix in the hQ^{1/2}W convention
    Matrix w_scaled; // script-W = Q^{1/2} [W - wbar] / sqrt(M-1)
    Matrix j;        // d x M factor with J J^T = (Id+hA) P^a (Id+hA)^T / h^2 + Q/h
    Matrix etilde;   // (Id+hA) [deviations] / sqrt(M-1)
};

/// Solves  Et W^T + W Et^T + h W W^T = Q  for the scaled perturbation matrix
/// W = -Et/h + J, where J J^T = Et Et^T / h^2 + Q/h is built from the
/// symmetric PSD root and a deterministic frame orthogonal to the ones
/// vector (so the perturbations stay centered).  The + sign keeps W bounded
/// as h -> 0; the frame is aligned with the polar factor of Et so the
/// leading terms cancel.  Requires M >= d+1 and strictly PD Q.
inline QuadraticPerturbation quadratic_perturbation_parts(const Ensemble& analysis,
                                                          const StateSpaceModel& model,
                                                          double h, double rank_tol = 1e-10) {
    if (h <= 0.0) throw ConfigError("quadratic perturbation: h must be positive");
    if (!model.is_linear()) throw ModelError("quadratic perturbation requires a linear drift");
    const Index d = analysis.dim();
    const Index m = analysis.size();
    const Matrix prop = Matrix::Identity(d, d) + h * model.A();

    QuadraticPerturbation out;
    out.etilde = prop * analysis.deviations() / std::sqrt(double(m - 1));
    const Matrix rhs =
        (out.etilde * out.etilde.transpose()) / (h * h) + model.Q() / h;
    const Matrix root = detail::sym_sqrt(rhs);
    const Matrix frame = detail::ones_orthogonal_frame(out.etilde, d, m, rank_tol);
    out.j = root * frame;
    out.w_scaled = -out.etilde / h + out.j;
    out.w_hat = std::sqrt(double(m - 1)) * detail::sym_inv_sqrt(model.Q()) * out.w_scaled;
    return out;
}

inline Matrix solve_quadratic_perturbation(const Ensemble& analysis,
                                           const StateSpaceModel& model, double h,
                                           double rank_tol = 1e-10) {
    return quadratic_perturbation_parts(analysis, model, h, rank_tol).w_hat;
}

/// Report of the three perturbation conditions: (a) cross-moment equals Q/2,
/// (b) Frobenius norm of the second moment bounded by kappa, (c) centering.
/// The projected cross residual compares against Pi Q/2 with Pi the
/// projector onto the deviation span (informative for the pseudo-inverse
/// variant; not asserted).
struct Assumption1Report {
    double cross_residual = 0.0;           // ||cross - Q/2||_F
    double projected_cross_residual = 0.0; // ||cross - Pi Q/2||_F
    double second_moment_norm = 0.0;       // ||(1/(M-1)) Qh Wc Wc^T Qh||_F
    double center_residual = 0.0;          // ||column mean||
    bool cross_ok = false;
    bool second_ok = false;
    bool center_ok = false;
    bool pass() const { return cross_ok && second_ok && center_ok; }
};

inline Assumption1Report check_assumption1(const Matrix& perturbation, const Ensemble& analysis,
                                           const PsdMatrix& q, double kappa) {
    if (perturbation.rows() != analysis.dim() || perturbation.cols() != analysis.size())
        throw DimensionError("check_assumption1: perturbation has wrong dimensions");
    const Index m = analysis.size();
    const Matrix qhalf = detail::sym_sqrt(q.matrix());
    const Vector wbar = perturbation.rowwise().mean();
    const Matrix wc = perturbation.colwise() - wbar;
    const Matrix dev = analysis.deviations();

    const Matrix cross = dev * wc.transpose() * qhalf / double(m - 1);
    const Matrix half_q = 0.5 * q.matrix();
    const Matrix proj = analysis.covariance() *
                        detail::sym_pinv(analysis.covariance(), 1e-10);

    Assumption1Report rep;
    rep.cross_residual = (cross - half_q).norm();
    rep.projected_cross_residual = (cross - proj * half_q).norm();
    rep.second_moment_norm = (qhalf * wc * wc.transpose() * qhalf / double(m - 1)).norm();
    rep.center_residual = wbar.norm();
    rep.cross_ok = rep.cross_residual <= 1e-9 * std::max(1.0, half_q.norm());
    rep.second_ok = rep.second_moment_norm <= kappa * (1.0 + 1e-12);
    rep.center_ok = rep.center_residual <= 1e-9 * std::max(1.0, perturbation.norm());
    return rep;
}

/// Sample for the perturbation-approximation condition: the squared distance
/// between discrete and continuous perturbations against (h^2, member gap).
/// The proportionality constant is fitted across runs, never asserted.
struct Assumption3Sample {
    double lhs = 0.0;        // sum_i ||dW^(i)||^2
    double h_squared = 0.0;
    double member_gap = 0.0; // sum_i ||dX^(i)||^2
};

inline Assumption3Sample check_assumption3(const Matrix& discrete_pert,
                                           const Matrix& continuous_pert,
                                           const Ensemble& discrete_ens,
                                           const Ensemble& continuous_ens, double h) {
    if (discrete_pert.rows() != continuous_pert.rows() ||
        discrete_pert.cols() != continuous_pert.cols() ||
        discrete_ens.dim() != continuous_ens.dim() ||
        discrete_ens.size() != continuous_ens.size())
        throw DimensionError("check_assumption3: dimension mismatch");
    Assumption3Sample s;
    s.lhs = (discrete_pert - continuous_pert).squaredNorm();
    s.h_squared = h * h;
    s.member_gap = (discrete_ens.members() - continuous_ens.members()).squaredNorm();
    return s;
}

// ---------------------------------------------------------------------------
// Stability constants
// ---------------------------------------------------------------------------

/// Gronwall bound on ||P_k^f|| along a run with perturbation second moment
/// bounded by kappa:  p*_f = e^{T(2|A| + h|A|^2)} (||P_0^a|| + T(1+h|A|)|Q| + T h kappa).
inline double forecast_cov_bound(const StateSpaceModel& model, double norm_p0a, double kappa,
                                 double h) {
    const double na = model.lipschitz_bound();
    const double nq = detail::spectral_norm_sym(model.Q());
    const double growth = std::exp(model.horizon() * (2.0 * na + h * na * na));
    return growth * (norm_p0a + model.horizon() * ((1.0 + h * na) * nq + h * kappa));
}

/// Step-size threshold and growth constant for the one-step filter with
/// Reich perturbations:
///     h* = sqrt(lmin(Q)/lmax(Q)) / |A|,
///     alpha_T = exp(2 T |A| / (1 - h* |A|))   (infinite when h*|A| = 1),
///     ||(P_k^a)^{-1}|| <= alpha_T ||(P_0^a)^{-1}|| + T alpha_T |G|^2 lmax(C^{-1}).
struct ModifiedFilterBounds {
    double h_star = 0.0;
    double alpha_T = 0.0;
    double horizon = 0.0;
    double obs_norm_sq = 0.0;   // |G|^2
    double cinv_lambda_max = 0.0;

    double inv_analysis_cov_bound(double inv_p0_norm) const {
        return alpha_T * inv_p0_norm + horizon * alpha_T * obs_norm_sq * cinv_lambda_max;
    }
};

inline ModifiedFilterBounds modified_filter_bounds(const StateSpaceModel& model) {
    ModifiedFilterBounds b;
    const double na = model.lipschitz_bound();
    const Vector eq = detail::sym_eigen(model.Q()).values;
    const double ratio = std::sqrt(eq.minCoeff() / eq.maxCoeff());
    b.h_star = na > 0.0 ? ratio / na : std::numeric_limits<double>::infinity();
    const double denom = 1.0 - ratio; // = 1 - h* |A|
    b.alpha_T = denom > 0.0 ? std::exp(2.0 * model.horizon() * na / denom)
                            : std::numeric_limits<double>::infinity();
    b.horizon = model.horizon();
    const double gnorm = model.G().jacobiSvd().singularValues()(0);
    b.obs_norm_sq = gnorm * gnorm;
    b.cinv_lambda_max = detail::sym_eigen(model.inv_C()).values.maxCoeff();
    return b;
}

/// Default Frobenius bound for the Reich perturbation second moment
/// (1/4) Q (P^a)^{-1} Q, given a uniform bound on ||(P^a)^{-1}||.
inline double default_kappa(const StateSpaceModel& model, double p_star_a) {
    const double qf = model.Q().norm();
    return 0.25 * qf * qf * p_star_a;
}

} // namespace esrf
