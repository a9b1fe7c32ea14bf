#include <catch2/catch_amalgamated.hpp>

#include "esrf/checks.hpp"
#include "esrf/filters.hpp"
#include "esrf/perturbations.hpp"

using namespace esrf;

namespace {

StateSpaceModel scalar_model(double a, double q, double g, double c, double horizon) {
    return StateSpaceModel(1, 1, LinearDrift{Matrix::Constant(1, 1, a)},
                           Matrix::Constant(1, 1, g), Matrix::Constant(1, 1, q),
                           Matrix::Constant(1, 1, c), horizon);
}

/// Ensemble whose empirical covariance is exactly the identity.
Ensemble unit_cov_ensemble(Index d, Index m) {
    const Matrix frame = detail::ones_orthogonal_frame(Matrix::Zero(d, m), d, m, 1e-12);
    return Ensemble(std::sqrt(double(m - 1)) * frame);
}

} // namespace

TEST_CASE("inverse-covariance perturbation") {
    SECTION("scalar hand computation") {
        Matrix members(1, 3);
        members << -1.0, 0.0, 1.0; // P^a = 1
        const Ensemble ens(members);
        const Matrix w = perturb_reich(ens, PsdMatrix(Matrix::Identity(1, 1)));
        REQUIRE(w(0, 0) == Catch::Approx(-0.5));
        REQUIRE(w(0, 1) == Catch::Approx(0.0).margin(1e-15));
        REQUIRE(w(0, 2) == Catch::Approx(0.5));
        // cross moment = Q/2
        const double cross = (ens.deviations() * w.transpose())(0, 0) / 2.0;
        REQUIRE(cross == Catch::Approx(0.5));
    }
    SECTION("identity covariance halves the deviations") {
        const Ensemble ens = unit_cov_ensemble(2, 6);
        REQUIRE((ens.covariance() - Matrix::Identity(2, 2)).norm() < 1e-12);
        const Matrix w = perturb_reich(ens, PsdMatrix(Matrix::Identity(2, 2)));
        REQUIRE((w - 0.5 * ens.deviations()).norm() < 1e-12);
    }
    SECTION("second moment identity on random ensembles") {
        const CheckResult res = check_reich_moments(100, 991);
        INFO(res.name << " worst " << res.max_residual);
        REQUIRE(res.pass);
    }
    SECTION("rejects singular covariance") {
        Matrix members(2, 3); // deviations along e1 only
        members << -1.0, 0.0, 1.0, 2.0, 2.0, 2.0;
        REQUIRE_THROWS_AS(perturb_reich(Ensemble(members), PsdMatrix(Matrix::Identity(2, 2))),
                          DegenerateEnsembleError);
    }
}

TEST_CASE("pseudo-inverse perturbation") {
    SECTION("matches the inverse on full-rank ensembles") {
        Rng rng(17);
        const Ensemble ens(detail::standard_normal(rng, 2, 8));
        const PsdMatrix q(detail::random_spd(rng, 2));
        REQUIRE((perturb_reich(ens, q) - perturb_reich_pinv(ens, q)).norm() < 1e-10);
    }
    SECTION("rank-1 covariance keeps perturbations in the deviation span") {
        Matrix members(2, 3);
        members << -2.0, 0.0, 2.0, 1.0, 1.0, 1.0; // deviations in span{e1}
        const Matrix w =
            perturb_reich_pinv(Ensemble(members), PsdMatrix(Matrix::Identity(2, 2)));
        REQUIRE(w.row(1).norm() < 1e-13);
        REQUIRE(w.row(0).norm() > 0.0);
    }
    SECTION("zero deviations give zero perturbations") {
        const Matrix w = perturb_reich_pinv(Ensemble(Matrix::Constant(2, 4, 3.0)),
                                            PsdMatrix(Matrix::Identity(2, 2)));
        REQUIRE(w.norm() == 0.0);
    }
}

TEST_CASE("continuous-time perturbation") {
    SECTION("identity pair halves the deviations") {
        const Ensemble ens = unit_cov_ensemble(2, 5);
        const Matrix w = perturb_continuous(ens, PsdMatrix(Matrix::Identity(2, 2)),
                                            PsdMatrix(Matrix::Identity(2, 2)));
        REQUIRE((w - 0.5 * ens.deviations()).norm() < 1e-12);
    }
    SECTION("scalar formula") {
        Matrix members(1, 2);
        members << -3.0, 3.0; // deviations -3, 3
        const Matrix w = perturb_continuous(Ensemble(members),
                                            PsdMatrix(Matrix::Constant(1, 1, 4.0)),
                                            PsdMatrix(Matrix::Constant(1, 1, 2.0)));
        REQUIRE(w(0, 1) == Catch::Approx(1.5)); // (1/2) * 2 * (1/2) * 3
    }
    SECTION("cross moment equals Q/2 on random instances") {
        Rng rng(23);
        for (int t = 0; t < 20; ++t) {
            const Index d = detail::uniform_int(rng, 1, 3);
            const Index m = d + 2 + detail::uniform_int(rng, 0, 5);
            const Ensemble ens(detail::standard_normal(rng, d, m));
            const Matrix q = detail::random_spd(rng, d);
            const Matrix w = perturb_continuous(ens, PsdMatrix(q), PsdMatrix(ens.covariance()));
            const Matrix cross = ens.deviations() * w.transpose() *
                                 detail::sym_sqrt(q) / double(m - 1);
            REQUIRE((cross - 0.5 * q).norm() <= 1e-10 * (1.0 + q.norm()));
        }
    }
    SECTION("rejects singular P_t") {
        const Ensemble ens = unit_cov_ensemble(2, 5);
        Matrix p = Matrix::Zero(2, 2);
        p(0, 0) = 1.0;
        REQUIRE_THROWS_AS(perturb_continuous(ens, PsdMatrix(Matrix::Identity(2, 2)),
                                             PsdMatrix(p)),
                          SingularMatrixError);
    }
}

TEST_CASE("quadratic perturbation solve") {
    SECTION("defining residual on random instances") {
        const CheckResult res = check_quadratic_residual(100, 321);
        INFO(res.name << " worst " << res.max_residual);
        REQUIRE(res.pass);
    }
    SECTION("deviation-free reduction") {
        StateSpaceModel m(2, 1, LinearDrift{Matrix::Zero(2, 2)}, Matrix::Ones(1, 2),
                          Matrix::Identity(2, 2), Matrix::Identity(1, 1), 1.0);
        const Ensemble ens(Matrix::Constant(2, 4, 1.0)); // zero deviations
        const QuadraticPerturbation qp = quadratic_perturbation_parts(ens, m, 1.0);
        REQUIRE((qp.j * qp.j.transpose() - Matrix::Identity(2, 2)).norm() < 1e-10);
        REQUIRE((qp.w_scaled - qp.j).norm() < 1e-12);
    }
    SECTION("scalar root value") {
        StateSpaceModel m = scalar_model(0.0, 1.0, 1.0, 1.0, 1.0);
        Matrix members(1, 3);
        members << -1.0, 0.0, 1.0; // P^a = 1
        const QuadraticPerturbation qp =
            quadratic_perturbation_parts(Ensemble(members), m, 0.1);
        REQUIRE((qp.j * qp.j.transpose())(0, 0) == Catch::Approx(110.0).epsilon(1e-10));
    }
    SECTION("perturbations are centered") {
        Rng rng(8);
        StateSpaceModel m(2, 1, LinearDrift{detail::standard_normal(rng, 2, 2)},
                          detail::standard_normal(rng, 1, 2), detail::random_spd(rng, 2),
                          detail::random_spd(rng, 1), 1.0);
        const Ensemble ens(detail::standard_normal(rng, 2, 6));
        const Matrix w = solve_quadratic_perturbation(ens, m, 0.05);
        REQUIRE(w.rowwise().mean().norm() <= 1e-9 * (1.0 + w.norm()));
    }
    SECTION("rejects bad arguments") {
        StateSpaceModel m = scalar_model(0.0, 1.0, 1.0, 1.0, 1.0);
        Matrix members(1, 3);
        members << -1.0, 0.0, 1.0;
        REQUIRE_THROWS_AS(quadratic_perturbation_parts(Ensemble(members), m, 0.0), ConfigError);
        // M >= d + 1 needed for a centered frame
        StateSpaceModel m2(2, 1, LinearDrift{Matrix::Zero(2, 2)}, Matrix::Ones(1, 2),
                           Matrix::Identity(2, 2), Matrix::Identity(1, 1), 1.0);
        REQUIRE_THROWS_AS(quadratic_perturbation_parts(Ensemble(Matrix::Ones(2, 2)), m2, 0.1),
                          DegenerateEnsembleError);
    }
}

TEST_CASE("assumption checks") {
    Rng rng(55);
    const Ensemble ens(detail::standard_normal(rng, 2, 7));
    const PsdMatrix q(detail::random_spd(rng, 2));
    const double kappa = 1e6;

    SECTION("inverse-covariance perturbations pass all three conditions") {
        const Matrix w = perturb_reich(ens, q);
        const Assumption1Report rep = check_assumption1(w, ens, q, kappa);
        REQUIRE(rep.cross_ok);
        REQUIRE(rep.second_ok);
        REQUIRE(rep.center_ok);
        REQUIRE(rep.pass());
    }
    SECTION("zero perturbations fail the cross-moment only") {
        const Matrix w = Matrix::Zero(2, 7);
        const Assumption1Report rep = check_assumption1(w, ens, q, kappa);
        REQUIRE_FALSE(rep.cross_ok);
        REQUIRE(rep.cross_residual == Catch::Approx((0.5 * q.matrix()).norm()));
        REQUIRE(rep.center_ok);
    }
    SECTION("a constant column offset fails the centering") {
        Matrix w = perturb_reich(ens, q);
        w.colwise() += Vector::Constant(2, 0.7);
        const Assumption1Report rep = check_assumption1(w, ens, q, kappa);
        REQUIRE_FALSE(rep.center_ok);
        // centered moments are unchanged
        REQUIRE(rep.cross_ok);
    }
    SECTION("pseudo-inverse kind satisfies the projected cross moment") {
        Matrix members(2, 3);
        members << -2.0, 0.0, 2.0, 1.0, 1.0, 1.0; // rank-1 deviations
        const Ensemble low(members);
        const Matrix w = perturb_reich_pinv(low, q);
        const Assumption1Report rep = check_assumption1(w, low, q, kappa);
        REQUIRE_FALSE(rep.cross_ok); // full cross moment does not hold
        REQUIRE(rep.projected_cross_residual <= 1e-9 * (1.0 + q.matrix().norm()));
    }
}

TEST_CASE("discrete/continuous perturbation distance") {
    Rng rng(66);
    const Ensemble a(detail::standard_normal(rng, 2, 5));
    const Matrix w = detail::standard_normal(rng, 2, 5);

    SECTION("identical inputs give zero distance") {
        const Assumption3Sample s = check_assumption3(w, w, a, a, 0.1);
        REQUIRE(s.lhs == 0.0);
        REQUIRE(s.h_squared == Catch::Approx(0.01));
        REQUIRE(s.member_gap == 0.0);
    }
    SECTION("constant per-column offset") {
        Matrix w2 = w;
        w2.colwise() += Vector::Constant(2, 0.3);
        const Assumption3Sample s = check_assumption3(w, w2, a, a, 0.1);
        REQUIRE(s.lhs == Catch::Approx(5.0 * 0.09 * 2.0)); // M * ||c||^2, c = (0.3, 0.3)
    }
}

TEST_CASE("perturbation energy bound") {
    // sum_i |Q^{1/2} W^(i)|^2 <= sqrt(M) (M-1) kappa with kappa the measured
    // second-moment norm
    Rng rng(77);
    for (int t = 0; t < 20; ++t) {
        const Index d = detail::uniform_int(rng, 1, 3);
        const Index m = d + 2 + detail::uniform_int(rng, 0, 6);
        const Ensemble ens(detail::standard_normal(rng, d, m));
        const Matrix q = detail::random_spd(rng, d);
        const Matrix w = perturb_reich(ens, PsdMatrix(q));
        const Matrix qhalf = detail::sym_sqrt(q);
        const double energy = (qhalf * w).squaredNorm();
        const double kappa = (qhalf * w * w.transpose() * qhalf / double(m - 1)).norm();
        REQUIRE(energy <= std::sqrt(double(m)) * double(m - 1) * kappa * (1.0 + 1e-12));
    }
}

TEST_CASE("forecast covariance recursion residual is O(h^2)") {
    StateSpaceModel m = scalar_model(-0.5, 1.0, 1.0, 1.0, 1.0);
    Rng rng(88);
    const Ensemble analysis0(detail::standard_normal(rng, 1, 9));

    auto recursion_residual = [&](double h) {
        // one ESRF cycle: forecast from the fixed analysis, update, forecast again
        const PerturbationSpec pert{PerturbationKind::Reich, 1e9, 1e-10};
        const ForecastResult f0 = forecast_step(analysis0, m, h, pert);
        const Matrix pf0 = f0.ensemble.covariance();
        EsrfVariant variant;
        variant.kind = FilterKind::Etkf;
        variant.perturbation = pert;
        const Ensemble a1 =
            analysis_step(f0.ensemble, variant, m, h, Vector::Constant(1, 0.1 * h));
        const ForecastResult f1 = forecast_step(a1, m, h, pert);
        const Matrix pf1 = f1.ensemble.covariance();
        const Matrix gain = kalman_gain(pf0, m, h);
        const Matrix rhs = m.A() * pf0 + pf0 * m.A().transpose() + m.Q() -
                           gain * (m.G() * pf0);
        return (pf1 - pf0 - h * rhs).norm();
    };

    const double r1 = recursion_residual(0.1);
    const double r2 = recursion_residual(0.05);
    const double r3 = recursion_residual(0.025);
    // residual / h^2 stable across h (within a factor of 2)
    const double c1 = r1 / 0.01, c2 = r2 / 0.0025, c3 = r3 / 0.000625;
    INFO("c(h) = " << c1 << " " << c2 << " " << c3);
    REQUIRE(c2 / c1 < 2.0);
    REQUIRE(c1 / c2 < 2.0);
    REQUIRE(c3 / c2 < 2.0);
    REQUIRE(c2 / c3 < 2.0);
}

TEST_CASE("forecast covariance gronwall bound along a run") {
    StateSpaceModel m = scalar_model(-0.5, 1.0, 1.0, 1.0, 2.0);
    const double h = 2.0 / 64.0;
    const ObservationPath path = simulate_reference(m, TimeGrid(h, 64), 314);
    Rng rng(314);
    const Ensemble init(detail::standard_normal(rng, 1, 12));

    EsrfVariant variant;
    variant.kind = FilterKind::Eakf;
    variant.perturbation.kind = PerturbationKind::Reich;
    const FilterTrajectory traj = run_filter(variant, m, path, h, init);

    double kappa = 0.0;
    for (const StepDiagnostics& d : traj.diagnostics)
        kappa = std::max(kappa, d.a1_second_norm);
    const double p_star =
        forecast_cov_bound(m, detail::spectral_norm_sym(init.covariance()), kappa, h);
    for (const StepDiagnostics& d : traj.diagnostics) REQUIRE(d.pf_norm <= p_star);
}

TEST_CASE("stability constants") {
    SECTION("threshold and growth constant for anisotropic noise") {
        Matrix q = Matrix::Zero(2, 2);
        q(0, 0) = 1.0;
        q(1, 1) = 4.0;
        Matrix a(2, 2);
        a << 0.0, 1.0, -1.0, -0.5;
        StateSpaceModel m(2, 2, LinearDrift{a}, Matrix::Identity(2, 2), q,
                          Matrix::Identity(2, 2), 2.0);
        const ModifiedFilterBounds b = modified_filter_bounds(m);
        const double na = m.lipschitz_bound();
        REQUIRE(b.h_star == Catch::Approx(0.5 / na)); // sqrt(1/4) / |A|
        REQUIRE(std::isfinite(b.alpha_T));
        REQUIRE(b.alpha_T == Catch::Approx(std::exp(2.0 * 2.0 * na / (1.0 - 0.5))));
        REQUIRE(b.inv_analysis_cov_bound(1.0) > b.alpha_T);
    }
    SECTION("isotropic noise degenerates the growth constant") {
        StateSpaceModel m = scalar_model(-0.5, 1.0, 1.0, 1.0, 2.0);
        const ModifiedFilterBounds b = modified_filter_bounds(m);
        REQUIRE(b.h_star == Catch::Approx(2.0));
        REQUIRE(std::isinf(b.alpha_T));
    }
    SECTION("default kappa formula") {
        StateSpaceModel m = scalar_model(0.0, 3.0, 1.0, 1.0, 1.0);
        REQUIRE(default_kappa(m, 2.0) == Catch::Approx(0.25 * 9.0 * 2.0));
    }
}
