#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <variant>

#include <Eigen/Dense>

#include "esrf/errors.hpp"
#include "esrf/matrix_ops.hpp"
#include "esrf/random.hpp"

namespace esrf {

struct LinearDrift {
    Matrix A; // d x d
};

struct LipschitzDrift {
    std::function<Vector(const Vector&)> f;
    double lipschitz_bound = 0.0;
};

using Drift = std::variant<LinearDrift, LipschitzDrift>;

/// Linear or Lipschitz signal model with linear observations:
///
///     dX = drift(X) dt + Q^{1/2} dW,      X in R^d
///     dY = G X dt     + C^{1/2} dV,      Y in R^p
///
/// Q and C must be symmetric positive definite.  The initial law is Gaussian
/// N(init_mean, init_cov); defaults are zero mean and identity covariance.
class StateSpaceModel {
public:
    StateSpaceModel(Index dim_state, Index dim_obs, Drift drift, Matrix obs_matrix,
                    Matrix model_noise_cov, Matrix obs_noise_cov, double horizon,
                    Vector init_mean = Vector(), Matrix init_cov = Matrix())
        : d_(dim_state),
          p_(dim_obs),
          drift_(std::move(drift)),
          G_(std::move(obs_matrix)),
          Q_(std::move(model_noise_cov)),
          C_(std::move(obs_noise_cov)),
          T_(horizon),
          m0_(init_mean.size() ? std::move(init_mean) : Vector::Zero(dim_state)),
          P0_(init_cov.size() ? std::move(init_cov) : Matrix::Identity(dim_state, dim_state)) {
        validate();
        qhalf_ = detail::sym_sqrt(Q_);
        chalf_ = detail::sym_sqrt(C_);
        const detail::SymEigen ce = detail::sym_eigen(C_);
        cinv_ = ce.vectors * ce.values.cwiseInverse().asDiagonal() * ce.vectors.transpose();
        theta_ = G_.transpose() * cinv_ * G_;
        p0half_ = detail::sym_sqrt(P0_);
    }

    Index dim_state() const { return d_; }
    Index dim_obs() const { return p_; }
    double horizon() const { return T_; }

    bool is_linear() const { return std::holds_alternative<LinearDrift>(drift_); }

    const Matrix& A() const {
        if (!is_linear()) throw ModelError("model drift is not linear");
        return std::get<LinearDrift>(drift_).A;
    }

    double lipschitz_bound() const {
        if (is_linear()) return A().jacobiSvd().singularValues()(0);
        return std::get<LipschitzDrift>(drift_).lipschitz_bound;
    }

    Vector drift(const Vector& x) const {
        if (is_linear()) return A() * x;
        return std::get<LipschitzDrift>(drift_).f(x);
    }

    /// Drift applied to each column of a d x M matrix.
    Matrix drift_columns(const Matrix& x) const {
        if (is_linear()) return A() * x;
        Matrix out(x.rows(), x.cols());
        const auto& f = std::get<LipschitzDrift>(drift_).f;
        for (Index j = 0; j < x.cols(); ++j) out.col(j) = f(x.col(j));
        return out;
    }

    const Matrix& G() const { return G_; }
    const Matrix& Q() const { return Q_; }
    const Matrix& C() const { return C_; }
    const Vector& init_mean() const { return m0_; }
    const Matrix& init_cov() const { return P0_; }

    // cached derived matrices
    const Matrix& sqrt_Q() const { return qhalf_; }
    const Matrix& sqrt_C() const { return chalf_; }
    const Matrix& inv_C() const { return cinv_; }
    const Matrix& sqrt_init_cov() const { return p0half_; }
    /// G^T C^{-1} G
    const Matrix& theta() const { return theta_; }

private:
    void validate() const {
        if (d_ < 1 || p_ < 1) throw ModelError("model dimensions must be >= 1");
        if (T_ <= 0.0) throw ModelError("horizon must be positive");
        if (G_.rows() != p_ || G_.cols() != d_)
            throw ModelError("obs_matrix must be p x d");
        if (is_linear()) {
            const Matrix& a = std::get<LinearDrift>(drift_).A;
            if (a.rows() != d_ || a.cols() != d_) throw ModelError("drift matrix must be d x d");
        } else {
            const auto& ld = std::get<LipschitzDrift>(drift_);
            if (!ld.f) throw ModelError("Lipschitz drift function is empty");
            if (!(ld.lipschitz_bound > 0.0) || !std::isfinite(ld.lipschitz_bound))
                throw ModelError("Lipschitz drift needs a finite positive bound");
            spot_check_lipschitz(ld);
        }
        require_spd(Q_, d_, "model_noise_cov Q");
        require_spd(C_, p_, "obs_noise_cov C");
        if (m0_.size() != d_) throw ModelError("init_mean must have length d");
        if (P0_.rows() != d_ || P0_.cols() != d_) throw ModelError("init_cov must be d x d");
        detail::require_symmetric(P0_, "init_cov");
        if (detail::sym_eigen(P0_).values.minCoeff() < -1e-12 * std::max(1.0, P0_.norm()))
            throw ModelError("init_cov must be positive semidefinite");
    }

    static void require_spd(const Matrix& m, Index n, const char* what) {
        if (m.rows() != n || m.cols() != n)
            throw ModelError(std::string(what) + ": wrong dimensions");
        try {
            detail::require_symmetric(m, what);
        } catch (const NotPsdError& e) {
            throw ModelError(e.what());
        }
        if (detail::sym_eigen(m).values.minCoeff() <= 0.0)
            throw ModelError(std::string(what) + ": not positive definite");
    }

    void spot_check_lipschitz(const LipschitzDrift& ld) const {
        Rng rng(0x11d5c0de);
        for (int trial = 0; trial < 32; ++trial) {
            Vector x = detail::standard_normal(rng, d_);
            Vector y = detail::standard_normal(rng, d_);
            const double dxy = (x - y).norm();
            if (dxy == 0.0) continue;
            const double dfy = (ld.f(x) - ld.f(y)).norm();
            if (dfy > ld.lipschitz_bound * dxy * (1.0 + 1e-9))
                throw ModelError("drift violates the declared Lipschitz bound on sampled pairs");
        }
    }

    Index d_, p_;
    Drift drift_;
    Matrix G_, Q_, C_;
    double T_;
    Vector m0_;
    Matrix P0_;
    Matrix qhalf_, chalf_, cinv_, theta_, p0half_;
};

/// Ensemble of M >= 2 state vectors, stored as the columns of a d x M matrix.
class Ensemble {
public:
    explicit Ensemble(Matrix members) : members_(std::move(members)) {
        if (members_.cols() < 2)
            throw DegenerateEnsembleError("ensemble needs at least 2 members");
        if (members_.rows() < 1) throw DimensionError("ensemble has zero state dimension");
    }

    const Matrix& members() const { return members_; }
    Index dim() const { return members_.rows(); }
    Index size() const { return members_.cols(); }

    Vector mean() const { return members_.rowwise().mean(); }

    Matrix deviations() const {
        return members_.colwise() - Vector(members_.rowwise().mean());
    }

    Matrix covariance() const {
        const Matrix dev = deviations();
        Matrix p = dev * dev.transpose() / double(size() - 1);
        return 0.5 * (p + p.transpose());
    }

    double spread() const { return covariance().trace(); }

private:
    Matrix members_;
};

struct EnsembleStats {
    Vector mean;
    Matrix deviations;
    Matrix covariance;
    double spread = 0.0;
};

inline EnsembleStats ensemble_stats(const Ensemble& e) {
    EnsembleStats s;
    s.mean = e.mean();
    s.deviations = e.members().colwise() - s.mean;
    s.covariance = s.deviations * s.deviations.transpose() / double(e.size() - 1);
    s.covariance = 0.5 * (s.covariance + s.covariance.transpose());
    s.spread = s.covariance.trace();
    return s;
}

/// Uniform time grid t_k = k*h, k = 0..steps, with an optional refinement
/// factor giving the fine step h / refinement.
class TimeGrid {
public:
    TimeGrid(double h, long steps, long refinement = 1)
        : h_(h), steps_(steps), refinement_(refinement) {
        if (!(h > 0.0)) throw ConfigError("TimeGrid: step must be positive");
        if (steps < 0) throw ConfigError("TimeGrid: negative step count");
        if (refinement < 1) throw ConfigError("TimeGrid: refinement must be >= 1");
    }

    double h() const { return h_; }
    long steps() const { return steps_; }
    long refinement() const { return refinement_; }
    double fine_step() const { return h_ / double(refinement_); }
    long fine_steps() const { return steps_ * refinement_; }
    double horizon() const { return h_ * double(steps_); }

    double t(long k) const { return h_ * double(k); }

    /// Largest grid point <= t (index form: nu).  eta(t) <= t < eta_plus(t).
    long nu(double time) const {
        long k = static_cast<long>(std::floor(time / h_ + 1e-9));
        if (k < 0) k = 0;
        if (k > steps_) k = steps_;
        return k;
    }
    double eta(double time) const { return t(nu(time)); }
    long nu_plus(double time) const { return nu(time) + 1; }
    double eta_plus(double time) const { return eta(time) + h_; }

private:
    double h_;
    long steps_;
    long refinement_;
};

} // namespace esrf
