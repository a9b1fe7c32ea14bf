#pragma once

#include <cmath>
#include <map>
#include <mutex>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include "esrf/errors.hpp"

namespace esrf {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

namespace detail {

constexpr double kSymmetryTol = 1e-12;

inline void require_symmetric(const Matrix& m, const char* what) {
    if (m.rows() != m.cols())
        throw DimensionError(std::string(what) + ": matrix is not square");
    const double scale = std::max(1.0, m.norm());
    if ((m - m.transpose()).norm() > kSymmetryTol * scale)
        throw NotPsdError(std::string(what) + ": symmetry defect exceeds tolerance");
}

struct SymEigen {
    Vector values;
    Matrix vectors;
};

inline SymEigen sym_eigen(const Matrix& m) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(m);
    if (es.info() != Eigen::Success)
        throw Error("symmetric eigendecomposition failed");
    return {es.eigenvalues(), es.eigenvectors()};
}

/// Symmetric PSD square root, negative eigenvalues clamped to zero.
/// Fast path without input validation; callers guarantee near-symmetry.
inline Matrix sym_sqrt(const Matrix& m) {
    SymEigen es = sym_eigen(0.5 * (m + m.transpose()));
    Vector r = es.values.cwiseMax(0.0).cwiseSqrt();
    return es.vectors * r.asDiagonal() * es.vectors.transpose();
}

/// Symmetrize and clamp negative eigenvalues to zero.
inline Matrix clamp_psd(const Matrix& m) {
    SymEigen es = sym_eigen(0.5 * (m + m.transpose()));
    Vector v = es.values.cwiseMax(0.0);
    return es.vectors * v.asDiagonal() * es.vectors.transpose();
}

/// Inverse symmetric square root of a strictly positive definite matrix.
inline Matrix sym_inv_sqrt(const Matrix& m) {
    SymEigen es = sym_eigen(0.5 * (m + m.transpose()));
    if (es.values.minCoeff() <= 0.0)
        throw SingularMatrixError("inverse square root of a non-PD matrix");
    Vector r = es.values.cwiseSqrt().cwiseInverse();
    return es.vectors * r.asDiagonal() * es.vectors.transpose();
}

/// Moore-Penrose pseudo-inverse of a symmetric PSD matrix with a spectral
/// cutoff at rank_tol * max eigenvalue.
inline Matrix sym_pinv(const Matrix& m, double rank_tol) {
    SymEigen es = sym_eigen(0.5 * (m + m.transpose()));
    const double lmax = es.values.cwiseAbs().maxCoeff();
    const double cutoff = rank_tol * std::max(lmax, 1e-300);
    Vector inv = es.values;
    for (Index i = 0; i < inv.size(); ++i)
        inv(i) = (es.values(i) > cutoff) ? 1.0 / es.values(i) : 0.0;
    return es.vectors * inv.asDiagonal() * es.vectors.transpose();
}

/// Spectral norm of a symmetric matrix; closed form for n <= 2.
inline double spectral_norm_sym(const Matrix& m) {
    const Index n = m.rows();
    if (n == 1) return std::abs(m(0, 0));
    if (n == 2) {
        const double a = m(0, 0), b = m(0, 1), c = m(1, 1);
        const double mid = 0.5 * (a + c);
        const double rad = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
        return std::max(std::abs(mid + rad), std::abs(mid - rad));
    }
    return sym_eigen(m).values.cwiseAbs().maxCoeff();
}

/// Largest eigenvalue estimate of a symmetric PSD matrix by power iteration.
inline double power_lambda_max(const Matrix& m, int iters = 100) {
    Vector v = Vector::Ones(m.rows()).normalized();
    double lam = 0.0;
    for (int i = 0; i < iters; ++i) {
        Vector w = m * v;
        lam = w.norm();
        if (lam == 0.0) return 0.0;
        v = w / lam;
    }
    return v.dot(m * v);
}

/// Smallest eigenvalue estimate of a symmetric PD matrix by inverse power
/// iteration.  Returns 0 when the Cholesky factorization fails.
inline double power_lambda_min(const Matrix& m, int iters = 100) {
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success) return 0.0;
    Vector v = Vector::Ones(m.rows()).normalized();
    for (int i = 0; i < iters; ++i) {
        Vector w = llt.solve(v);
        const double norm = w.norm();
        if (!(norm > 0.0) || !std::isfinite(norm)) return 0.0;
        v = w / norm;
    }
    return v.dot(m * v);
}

} // namespace detail

/// Validated symmetric positive semidefinite matrix.
///
/// Construction symmetrizes the input, checks the relative symmetry defect,
/// and clamps eigenvalues in [-eigen_floor, 0) to zero; an eigenvalue below
/// -eigen_floor raises NotPsdError.  Default floor: 1e-12 * max(lambda_max, 1).
class PsdMatrix {
public:
    explicit PsdMatrix(Matrix data, double eigen_floor = -1.0) {
        detail::require_symmetric(data, "PsdMatrix");
        mat_ = 0.5 * (data + data.transpose());
        detail::SymEigen es = detail::sym_eigen(mat_);
        const double lmax = es.values.size() ? es.values.maxCoeff() : 0.0;
        floor_ = eigen_floor >= 0.0 ? eigen_floor : 1e-12 * std::max(lmax, 1.0);
        const double lmin = es.values.size() ? es.values.minCoeff() : 0.0;
        if (lmin < -floor_)
            throw NotPsdError("PsdMatrix: eigenvalue " + std::to_string(lmin) +
                              " below -eigen_floor");
        if (lmin < 0.0) {
            Vector clamped = es.values.cwiseMax(0.0);
            mat_ = es.vectors * clamped.asDiagonal() * es.vectors.transpose();
        }
    }

    const Matrix& matrix() const { return mat_; }
    double eigen_floor() const { return floor_; }
    Index size() const { return mat_.rows(); }

private:
    Matrix mat_;
    double floor_;
};

/// Symmetric PSD square root: S with S*S = P.
inline PsdMatrix sqrt_psd(const PsdMatrix& p) {
    return PsdMatrix(detail::sym_sqrt(p.matrix()));
}

/// Moore-Penrose pseudo-inverse of a PSD matrix.  Eigenvalues at or below
/// rank_tol * lambda_max are treated as zero.
inline PsdMatrix pinv_psd(const PsdMatrix& p, double rank_tol = 1e-10) {
    if (rank_tol <= 0.0) throw ConfigError("pinv_psd: rank_tol must be positive");
    return PsdMatrix(detail::sym_pinv(p.matrix(), rank_tol));
}

namespace detail {

struct QuadRule {
    Vector nodes;          // t_i
    Vector scaled_weights; // w_i * exp(t_i)
};

/// Generalized Gauss-Laguerre rule for weight t^{-1/2} e^{-t}, with weights
/// returned in scaled form w_i e^{t_i}.  Nodes come from the Golub-Welsch
/// Jacobi matrix; the scaled weight is 1 / sum_k phi_k(t_i)^2 where
/// phi_k = p_k e^{-t/2} are the weighted orthonormal polynomials, evaluated
/// with a shift-tracked recurrence so large nodes do not underflow.
inline QuadRule make_gauss_laguerre_half(int n) {
    const double alpha = -0.5;
    Matrix jacobi = Matrix::Zero(n, n);
    for (int k = 0; k < n; ++k) {
        jacobi(k, k) = 2.0 * k + alpha + 1.0;
        if (k > 0) {
            const double b = std::sqrt(k * (k + alpha));
            jacobi(k, k - 1) = b;
            jacobi(k - 1, k) = b;
        }
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(jacobi);
    QuadRule rule;
    rule.nodes = es.eigenvalues();
    rule.scaled_weights.resize(n);

    const double log_mu0 = 0.5 * std::log(M_PI); // log Gamma(1/2)
    for (int i = 0; i < n; ++i) {
        const double t = rule.nodes(i);
        // phi_0(t) = e^{-t/2} / sqrt(mu0); track u_k = phi_k * e^{S}
        double shift = 0.5 * t + 0.5 * log_mu0;
        double u_prev = 0.0;
        double u = 1.0;
        double total = 0.0;
        double contrib_scale = (shift < 350.0) ? std::exp(-2.0 * shift) : 0.0;
        total += u * u * contrib_scale;
        for (int k = 0; k + 1 < n; ++k) {
            const double ak = 2.0 * k + alpha + 1.0;
            const double bk = (k > 0) ? std::sqrt(k * (k + alpha)) : 0.0;
            const double bk1 = std::sqrt((k + 1.0) * (k + 1.0 + alpha));
            const double u_next = ((t - ak) * u - bk * u_prev) / bk1;
            u_prev = u;
            u = u_next;
            const double mag = std::max(std::abs(u_prev), std::abs(u));
            if (mag > 1e100) {
                u_prev *= 1e-100;
                u *= 1e-100;
                shift -= std::log(1e100);
                contrib_scale = (shift < 350.0) ? std::exp(-2.0 * shift) : 0.0;
            }
            total += u * u * contrib_scale;
        }
        rule.scaled_weights(i) = 1.0 / total;
    }
    return rule;
}

inline const QuadRule& gauss_laguerre_half(int n) {
    static std::mutex mu;
    static std::map<int, QuadRule> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, make_gauss_laguerre_half(n)).first;
    return it->second;
}

} // namespace detail

/// P^{-1/2} evaluated through the integral representation
///     P^{-1/2} = (1/sqrt(pi)) * Integral_0^inf t^{-1/2} e^{-tP} dt,
/// discretized by generalized Gauss-Laguerre quadrature after rescaling P by
/// the geometric mean of its extreme eigenvalues (estimated by power
/// iteration).  The matrix exponentials use scaling-and-squaring, so the
/// result is independent of the eigendecomposition route and serves as a
/// cross-check for it.  Accuracy ~1e-6 relative needs quad_nodes >= 384 for
/// condition numbers up to 1e4; error grows with conditioning beyond that.
inline Matrix sqrt_inv_integral(const PsdMatrix& p, int quad_nodes = 384) {
    if (quad_nodes < 16) throw ConfigError("sqrt_inv_integral: quad_nodes must be >= 16");
    const Matrix& m = p.matrix();
    const Index n = m.rows();

    const double lmax = detail::power_lambda_max(m);
    if (lmax <= 0.0) throw SingularMatrixError("sqrt_inv_integral: matrix is singular");
    const double lmin = detail::power_lambda_min(m);
    if (lmin <= 1e-14 * lmax)
        throw SingularMatrixError("sqrt_inv_integral: matrix is numerically singular");

    const double scale = std::sqrt(lmin * lmax);
    const Matrix ms = m / scale;

    const detail::QuadRule& rule = detail::gauss_laguerre_half(quad_nodes);
    Matrix acc = Matrix::Zero(n, n);
    for (int i = 0; i < quad_nodes; ++i) {
        // w_i e^{-t_i (P_s - Id)} = scaled_w_i * e^{-t_i P_s}
        Matrix term = (-rule.nodes(i) * ms).exp();
        acc.noalias() += rule.scaled_weights(i) * term;
    }
    acc /= std::sqrt(M_PI);
    return acc / std::sqrt(scale); // undo the substitution t -> t/scale
}

/// (C+B)^{-1/2} * ((C+B)^{1/2} + C^{1/2})^{-1} for C strictly PD, B PSD.
/// For B = 0 this equals C^{-1}/2.
inline Matrix half_gain_inverse(const PsdMatrix& c, const PsdMatrix& b) {
    if (c.size() != b.size())
        throw DimensionError("half_gain_inverse: size mismatch");
    const Matrix s_sum = detail::sym_sqrt(c.matrix() + b.matrix());
    const Matrix s_c = detail::sym_sqrt(c.matrix());
    // X = s_sum^{-1} (s_sum + s_c)^{-1} = ((s_sum + s_c) s_sum)^{-1}
    const Matrix prod = (s_sum + s_c) * s_sum;
    Eigen::PartialPivLU<Matrix> lu(prod);
    if (std::abs(lu.determinant()) < 1e-300)
        throw SingularMatrixError("half_gain_inverse: singular sum");
    return lu.solve(Matrix::Identity(c.size(), c.size()));
}

} // namespace esrf
