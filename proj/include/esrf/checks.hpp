#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "esrf/filters.hpp"
#include "esrf/kalman.hpp"
#include "esrf/matrix_ops.hpp"
#include "esrf/model.hpp"
#include "esrf/perturbations.hpp"
#include "esrf/random.hpp"

namespace esrf {

/// Result of one randomized identity/bound check.
struct CheckResult {
    std::string name;
    int trials = 0;
    int violations = 0;
    double max_residual = 0.0; // worst residual relative to its tolerance scale
    bool pass = false;
    std::string detail;
};

namespace detail {

inline double uniform(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return dist(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {
    std::uniform_int_distribution<int> dist(lo, hi);
    return dist(rng);
}

inline Matrix random_spd(Rng& rng, Index n, double shift = 0.3) {
    Matrix b = standard_normal(rng, n, n);
    Matrix m = b * b.transpose() / double(n) + shift * Matrix::Identity(n, n);
    return 0.5 * (m + m.transpose());
}

/// SPD matrix with eigenvalues log-spaced across a given condition number.
inline Matrix random_spd_with_cond(Rng& rng, Index n, double cond) {
    Vector eigs(n);
    for (Index i = 0; i < n; ++i) {
        const double t = n > 1 ? double(i) / double(n - 1) : 0.5;
        eigs(i) = std::pow(cond, t - 0.5); // within [cond^-1/2, cond^1/2]
    }
    // random orthogonal factor from a QR of a Gaussian matrix
    Eigen::HouseholderQR<Matrix> qr(standard_normal(rng, n, n));
    Matrix qfac = qr.householderQ();
    Matrix m = qfac * eigs.asDiagonal() * qfac.transpose();
    return 0.5 * (m + m.transpose());
}

struct TestInstance {
    StateSpaceModel model;
    Ensemble forecast;
    double h;
};

inline TestInstance random_instance(Rng& rng, int d_max = 4, int p_max = 3) {
    const Index d = uniform_int(rng, 1, d_max);
    const Index p = uniform_int(rng, 1, p_max);
    const Index m = (uniform_int(rng, 0, 1) == 0) ? d + 2 : std::max<Index>(2, 2 * d);
    Matrix a = standard_normal(rng, d, d);
    Matrix g = standard_normal(rng, p, d);
    const double h_choices[] = {0.0, 0.1, 0.5};
    const double h = h_choices[uniform_int(rng, 0, 2)];
    StateSpaceModel model(d, p, LinearDrift{a}, g, random_spd(rng, d), random_spd(rng, p), 1.0);
    Ensemble ens(standard_normal(rng, d, m));
    return {std::move(model), std::move(ens), h};
}

inline double op_norm(const Matrix& m) {
    return m.jacobiSvd().singularValues()(0);
}

} // namespace detail

/// A_k E^f = E^f T_k over random instances.
inline CheckResult check_adjointness(int trials, std::uint64_t seed) {
    Rng rng(seed);
    CheckResult res{"eakf/etkf adjointness", trials};
    for (int t = 0; t < trials; ++t) {
        const detail::TestInstance inst = detail::random_instance(rng);
        const Matrix dev = inst.forecast.deviations();
        const Matrix lhs = eakf_transform(inst.forecast, inst.model, inst.h) * dev;
        const Matrix rhs = dev * etkf_transform(inst.forecast, inst.model, inst.h);
        const double tol = 1e-9 * (1.0 + dev.norm());
        const double resid = (lhs - rhs).norm() / tol;
        res.max_residual = std::max(res.max_residual, resid);
        if (resid > 1.0) ++res.violations;
    }
    res.pass = res.violations == 0;
    return res;
}

/// P^a = (Id - h K G) P^f for the three deterministic square-root updates.
inline CheckResult check_covariance_law(int trials, std::uint64_t seed) {
    Rng rng(seed);
    CheckResult res{"exact analysis covariance", trials};
    const FilterKind kinds[] = {FilterKind::Eakf, FilterKind::Etkf, FilterKind::WhitakerHamill};
    for (int t = 0; t < trials; ++t) {
        const detail::TestInstance inst = detail::random_instance(rng);
        const Matrix pf = inst.forecast.covariance();
        const Matrix gain = kalman_gain(pf, inst.model, inst.h);
        const Matrix target =
            (Matrix::Identity(pf.rows(), pf.rows()) - inst.h * gain * inst.model.G()) * pf;
        const Vector dy = detail::standard_normal(rng, inst.model.dim_obs());
        const double tol = 1e-9 * (1.0 + pf.norm());
        for (FilterKind kind : kinds) {
            EsrfVariant variant;
            variant.kind = kind;
            variant.perturbation.kind = PerturbationKind::None;
            const Ensemble analysis =
                analysis_step(inst.forecast, variant, inst.model, inst.h, dy);
            const double resid = (analysis.covariance() - target).norm() / tol;
            res.max_residual = std::max(res.max_residual, resid);
            if (resid > 1.0) ++res.violations;
        }
    }
    res.pass = res.violations == 0;
    return res;
}

/// (Id - h K~ G) P^f (Id - h K~ G)^T = (Id - h K G) P^f.
inline CheckResult check_whitaker_ansatz(int trials, std::uint64_t seed) {
    Rng rng(seed);
    CheckResult res{"deviation-gain quadratic ansatz", trials};
    for (int t = 0; t < trials; ++t) {
        const detail::TestInstance inst = detail::random_instance(rng);
        const Matrix pf = inst.forecast.covariance();
        const Index d = pf.rows();
        const Matrix ktilde = whitaker_gain(pf, inst.model, inst.h);
        const Matrix gain = kalman_gain(pf, inst.model, inst.h);
        const Matrix left = Matrix::Identity(d, d) - inst.h * ktilde * inst.model.G();
        const Matrix resid_m =
            left * pf * left.transpose() -
            (Matrix::Identity(d, d) - inst.h * gain * inst.model.G()) * pf;
        const double tol = 1e-9 * (1.0 + pf.norm());
        const double resid = resid_m.norm() / tol;
        res.max_residual = std::max(res.max_residual, resid);
        if (resid > 1.0) ++res.violations;
    }
    res.pass = res.violations == 0;
    return res;
}

/// Cross-moment Q/2, centering, and second moment (1/4) Q (P^a)^{-1} Q for
/// the inverse-covariance perturbations on full-rank ensembles.
inline CheckResult check_reich_moments(int trials, std::uint64_t seed) {
    Rng rng(seed);
    CheckResult res{"perturbation moment identities", trials};
    for (int t = 0; t < trials; ++t) {
        const Index d = detail::uniform_int(rng, 1, 4);
        const Index m = d + 1 + detail::uniform_int(rng, 1, 8);
        const Ensemble ens(detail::standard_normal(rng, d, m));
        const Matrix q = detail::random_spd(rng, d);
        const PsdMatrix q_psd(q);
        const Matrix w = perturb_reich(ens, q_psd);

        const Matrix dev = ens.deviations();
        const Matrix pa = ens.covariance();
        const Matrix qhalf = detail::sym_sqrt(q);
        const Matrix cross = dev * w.transpose() * qhalf / double(m - 1);
        const Matrix second = qhalf * w * w.transpose() * qhalf / double(m - 1);
        const Matrix second_target =
            0.25 * q * Eigen::LLT<Matrix>(pa).solve(q);

        const double r1 = (cross - 0.5 * q).norm() / (1e-10 * (1.0 + 0.5 * q.norm()));
        const double r2 = w.rowwise().mean().norm() / (1e-10 * (1.0 + w.norm()));
        const double r3 =
            (second - second_target).norm() / (1e-10 * (1.0 + second_target.norm()));
        const double worst = std::max({r1, r2, r3});
        res.max_residual = std::max(res.max_residual, worst);
        if (worst > 1.0) ++res.violations;
    }
    res.pass = res.violations == 0;
    return res;
}

/// Remainder of the first-order transform expansion stays below
/// (3 h^2 / 8) |P^f|^2 |G^T C^{-1} G|^2 |E^f| in operator norm.
inline CheckResult check_remainder_bound(int trials, std::uint64_t seed) {
    Rng rng(seed);
    CheckResult res{"transform expansion remainder bound", trials};
    for (int t = 0; t < trials; ++t) {
        detail::TestInstance inst = detail::random_instance(rng);
        const double h = detail::uniform(rng, 0.01, 0.5);
        const TransformExpansion exp = integral_transform_expansion(inst.forecast, inst.model, h);
        const double lhs = detail::op_norm(exp.remainder);
        const double rhs = exp.remainder_bound * detail::op_norm(inst.forecast.deviations());
        const double ratio = lhs / (rhs + 1e-300);
        res.max_residual = std::max(res.max_residual, ratio);
        if (lhs > rhs * (1.0 + 1e-9) + 1e-12) ++res.violations;
    }
    res.pass = res.violations == 0;
    return res;
}

/// |K^| <= (1/2) |P^f| |G| |C^{-1}| for both the half-gain of the
/// transform filters and the deviation gain of the unperturbed one.
inline CheckResult check_half_gain_bound(int trials, std::uint64_t seed) {
    Rng rng(seed);
    CheckResult res{"half-gain operator bound", trials};
    for (int t = 0; t < trials; ++t) {
        const detail::TestInstance inst = detail::random_instance(rng);
        const double h = detail::uniform(rng, 0.0, 0.5);
        const Matrix pf = inst.forecast.covariance();
        const double rhs = 0.5 * detail::spectral_norm_sym(pf) *
                           detail::op_norm(inst.model.G()) *
                           detail::spectral_norm_sym(inst.model.inv_C());
        for (FilterKind kind : {FilterKind::Eakf, FilterKind::WhitakerHamill}) {
            const GainSet g = gain_set(pf, inst.model, h, kind);
            const double lhs = detail::op_norm(g.half_gain);
            res.max_residual = std::max(res.max_residual, lhs / (rhs + 1e-300));
            if (lhs > rhs * (1.0 + 1e-9) + 1e-12) ++res.violations;
        }
    }
    res.pass = res.violations == 0;
    return res;
}

/// |K - P^f G^T C^{-1}| <= h |P^f|^2 |G|^3 |C^{-1}|^2.
inline CheckResult check_gain_consistency(int trials, std::uint64_t seed) {
    Rng rng(seed);
    CheckResult res{"small-h gain consistency bound", trials};
    for (int t = 0; t < trials; ++t) {
        const detail::TestInstance inst = detail::random_instance(rng);
        const double h = detail::uniform(rng, 0.0, 0.5);
        const Matrix pf = inst.forecast.covariance();
        const Matrix gain = kalman_gain(pf, inst.model, h);
        const Matrix limit_gain = pf * inst.model.G().transpose() * inst.model.inv_C();
        const double lhs = detail::op_norm(Matrix(gain - limit_gain));
        const double npf = detail::spectral_norm_sym(pf);
        const double ng = detail::op_norm(inst.model.G());
        const double nc = detail::spectral_norm_sym(inst.model.inv_C());
        const double rhs = h * npf * npf * ng * ng * ng * nc * nc;
        res.max_residual = std::max(res.max_residual, lhs / (rhs + 1e-300));
        if (lhs > rhs * (1.0 + 1e-9) + 1e-12) ++res.violations;
    }
    res.pass = res.violations == 0;
    return res;
}

/// |C^{-1} - (h G P G^T + C)^{-1}| <= h |C^{-1}|^2 |G|^2 |P|.
inline CheckResult check_woodbury_bound(int trials, std::uint64_t seed) {
    Rng rng(seed);
    CheckResult res{"resolvent difference bound", trials};
    for (int t = 0; t < trials; ++t) {
        const detail::TestInstance inst = detail::random_instance(rng);
        const double h = detail::uniform(rng, 0.0, 0.5);
        const Matrix pf = inst.forecast.covariance();
        const Matrix s = inst.model.C() +
                         h * (inst.model.G() * pf * inst.model.G().transpose());
        const Matrix s_inv = Eigen::LLT<Matrix>(0.5 * (s + s.transpose()))
                                 .solve(Matrix::Identity(s.rows(), s.rows()));
        const double lhs = detail::op_norm(Matrix(inst.model.inv_C() - s_inv));
        const double nc = detail::spectral_norm_sym(inst.model.inv_C());
        const double ng = detail::op_norm(inst.model.G());
        const double rhs = h * nc * nc * ng * ng * detail::spectral_norm_sym(pf);
        res.max_residual = std::max(res.max_residual, lhs / (rhs + 1e-300));
        if (lhs > rhs * (1.0 + 1e-9) + 1e-12) ++res.violations;
    }
    res.pass = res.violations == 0;
    return res;
}

/// |(C + h G P G^T)^{1/2} - C^{1/2}| <= h |G P G^T| / (2 sqrt(lmin(C))).
inline CheckResult check_root_difference_bound(int trials, std::uint64_t seed) {
    Rng rng(seed);
    CheckResult res{"matrix root difference bound", trials};
    for (int t = 0; t < trials; ++t) {
        const detail::TestInstance inst = detail::random_instance(rng);
        const double h = detail::uniform(rng, 0.0, 0.5);
        const Matrix pf = inst.forecast.covariance();
        const Matrix b = inst.model.G() * pf * inst.model.G().transpose();
        const Matrix lhs_m = detail::sym_sqrt(inst.model.C() + h * b) -
                             detail::sym_sqrt(inst.model.C());
        const double lmin = detail::sym_eigen(inst.model.C()).values.minCoeff();
        const double rhs = h * detail::spectral_norm_sym(0.5 * (b + b.transpose())) /
                           (2.0 * std::sqrt(lmin));
        const double lhs = detail::spectral_norm_sym(lhs_m);
        res.max_residual = std::max(res.max_residual, lhs / (rhs + 1e-300));
        if (lhs > rhs * (1.0 + 1e-9) + 1e-12) ++res.violations;
    }
    res.pass = res.violations == 0;
    return res;
}

/// All four Penrose identities for the PSD pseudo-inverse on rank-deficient
/// inputs.
inline CheckResult check_penrose(int trials, std::uint64_t seed) {
    Rng rng(seed);
    CheckResult res{"pseudo-inverse identities", trials};
    for (int t = 0; t < trials; ++t) {
        const Index n = detail::uniform_int(rng, 2, 5);
        const Index rank = detail::uniform_int(rng, 1, int(n));
        const Matrix b = detail::standard_normal(rng, n, rank);
        const PsdMatrix p(Matrix(b * b.transpose()));
        const Matrix pd = pinv_psd(p, 1e-12).matrix();
        const Matrix& pm = p.matrix();
        const double scale = 1e-9 * (1.0 + pm.norm() + pd.norm());
        const double r1 = (pm * pd * pm - pm).norm();
        const double r2 = (pd * pm * pd - pd).norm();
        const double r3 = (pm * pd - (pm * pd).transpose()).norm();
        const double r4 = (pd * pm - (pd * pm).transpose()).norm();
        const double worst = std::max({r1, r2, r3, r4}) / scale;
        res.max_residual = std::max(res.max_residual, worst);
        if (worst > 1.0) ++res.violations;
    }
    res.pass = res.violations == 0;
    return res;
}

/// Quadrature route for P^{-1/2} against the eigendecomposition route.
inline CheckResult check_integral_representation(int trials, std::uint64_t seed,
                                                 double cond_max = 1e4, int quad_nodes = 384,
                                                 double tol = 1e-6) {
    Rng rng(seed);
    CheckResult res{"inverse-root integral representation", trials};
    for (int t = 0; t < trials; ++t) {
        const Index n = detail::uniform_int(rng, 1, 4);
        const double cond = std::pow(cond_max, detail::uniform(rng, 0.0, 1.0));
        const double scale = std::exp(detail::uniform(rng, -2.0, 2.0));
        const PsdMatrix p(Matrix(scale * detail::random_spd_with_cond(rng, n, cond)));
        const Matrix via_quad = sqrt_inv_integral(p, quad_nodes);
        const detail::SymEigen es = detail::sym_eigen(p.matrix());
        const Matrix via_eig = es.vectors * es.values.cwiseSqrt().cwiseInverse().asDiagonal() *
                               es.vectors.transpose();
        const double resid = (via_quad - via_eig).norm() / (tol * via_eig.norm());
        res.max_residual = std::max(res.max_residual, resid);
        if (resid > 1.0) ++res.violations;
    }
    res.pass = res.violations == 0;
    return res;
}

/// Defining residual of the quadratic perturbation equation
/// Et W^T + W Et^T + h W W^T = Q.
inline CheckResult check_quadratic_residual(int trials, std::uint64_t seed) {
    Rng rng(seed);
    CheckResult res{"quadratic perturbation residual", trials};
    for (int t = 0; t < trials; ++t) {
        const Index d = detail::uniform_int(rng, 1, 3);
        const Index m = d + 1 + detail::uniform_int(rng, 1, 6);
        const double h = detail::uniform(rng, 0.02, 0.5);
        StateSpaceModel model(d, 1, LinearDrift{detail::standard_normal(rng, d, d)},
                              detail::standard_normal(rng, 1, d), detail::random_spd(rng, d),
                              detail::random_spd(rng, 1), 1.0);
        const Ensemble ens(detail::standard_normal(rng, d, m));
        const QuadraticPerturbation qp = quadratic_perturbation_parts(ens, model, h);
        const Matrix resid_m = qp.etilde * qp.w_scaled.transpose() +
                               qp.w_scaled * qp.etilde.transpose() +
                               h * (qp.w_scaled * qp.w_scaled.transpose()) - model.Q();
        const double resid = resid_m.norm() / (1e-8 * model.Q().norm());
        res.max_residual = std::max(res.max_residual, resid);
        if (resid > 1.0) ++res.violations;
    }
    res.pass = res.violations == 0;
    return res;
}

/// sqrt scaling sqrt(c^2 P) = c sqrt(P) and the quadrature/eigen root
/// consistency sqrt_inv_integral(P) * sqrt_psd(P) = Id.
inline CheckResult check_root_consistency(int trials, std::uint64_t seed) {
    Rng rng(seed);
    CheckResult res{"root scaling & inverse consistency", trials};
    for (int t = 0; t < trials; ++t) {
        const Index n = detail::uniform_int(rng, 1, 4);
        const PsdMatrix p(detail::random_spd(rng, n));
        const double c = std::exp(detail::uniform(rng, -2.0, 2.0));
        const Matrix s1 = detail::sym_sqrt(Matrix(c * c * p.matrix()));
        const Matrix s2 = c * detail::sym_sqrt(p.matrix());
        const double r1 = (s1 - s2).norm() / (1e-12 * (1.0 + s2.norm()));
        const Matrix prod = sqrt_inv_integral(p, 384) * detail::sym_sqrt(p.matrix());
        const double r2 =
            (prod - Matrix::Identity(n, n)).norm() / (1e-6 * std::sqrt(double(n)));
        const double worst = std::max(r1, r2);
        res.max_residual = std::max(res.max_residual, worst);
        if (worst > 1.0) ++res.violations;
    }
    res.pass = res.violations == 0;
    return res;
}

/// The full identity suite at a given trial scale.
inline std::vector<CheckResult> run_identity_checks(std::uint64_t seed, int scale = 1) {
    std::vector<CheckResult> out;
    out.push_back(check_adjointness(500 * scale, detail::mix_seed(seed, 1)));
    out.push_back(check_covariance_law(500 * scale, detail::mix_seed(seed, 2)));
    out.push_back(check_whitaker_ansatz(500 * scale, detail::mix_seed(seed, 3)));
    out.push_back(check_reich_moments(500 * scale, detail::mix_seed(seed, 4)));
    out.push_back(check_remainder_bound(1000 * scale, detail::mix_seed(seed, 5)));
    out.push_back(check_half_gain_bound(200 * scale, detail::mix_seed(seed, 13)));
    out.push_back(check_gain_consistency(200 * scale, detail::mix_seed(seed, 6)));
    out.push_back(check_woodbury_bound(200 * scale, detail::mix_seed(seed, 7)));
    out.push_back(check_root_difference_bound(200 * scale, detail::mix_seed(seed, 8)));
    out.push_back(check_penrose(100 * scale, detail::mix_seed(seed, 9)));
    out.push_back(check_integral_representation(200 * scale, detail::mix_seed(seed, 10)));
    out.push_back(check_quadratic_residual(200 * scale, detail::mix_seed(seed, 11)));
    out.push_back(check_root_consistency(100 * scale, detail::mix_seed(seed, 12)));
    return out;
}

} // namespace esrf
