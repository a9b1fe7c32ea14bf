#include <catch2/catch_amalgamated.hpp>

#include "esrf/model.hpp"
#include "esrf/observation.hpp"

using namespace esrf;

namespace {

StateSpaceModel scalar_model(double a, double q, double g, double c, double horizon,
                             Vector m0 = Vector(), Matrix p0 = Matrix()) {
    return StateSpaceModel(1, 1, LinearDrift{Matrix::Constant(1, 1, a)},
                           Matrix::Constant(1, 1, g), Matrix::Constant(1, 1, q),
                           Matrix::Constant(1, 1, c), horizon, std::move(m0), std::move(p0));
}

} // namespace

TEST_CASE("model validation") {
    SECTION("rejects non-PD noise") {
        REQUIRE_THROWS_AS(scalar_model(0.0, 0.0, 1.0, 1.0, 1.0), ModelError);
        REQUIRE_THROWS_AS(scalar_model(0.0, 1.0, 1.0, -2.0, 1.0), ModelError);
    }
    SECTION("rejects asymmetric noise") {
        Matrix q(2, 2);
        q << 1.0, 0.3, 0.0, 1.0;
        REQUIRE_THROWS_AS(StateSpaceModel(2, 1, LinearDrift{Matrix::Zero(2, 2)},
                                          Matrix::Ones(1, 2), q, Matrix::Identity(1, 1), 1.0),
                          ModelError);
    }
    SECTION("rejects a violated Lipschitz declaration") {
        LipschitzDrift bad{[](const Vector& x) { return Vector(2.0 * x); }, 1.0};
        REQUIRE_THROWS_AS(StateSpaceModel(1, 1, bad, Matrix::Identity(1, 1),
                                          Matrix::Identity(1, 1), Matrix::Identity(1, 1), 1.0),
                          ModelError);
    }
    SECTION("accepts a valid nonlinear drift") {
        LipschitzDrift f{[](const Vector& x) { return Vector(-x + x.array().tanh().matrix()); },
                         1.0};
        StateSpaceModel m(1, 1, f, Matrix::Identity(1, 1), Matrix::Identity(1, 1),
                          Matrix::Identity(1, 1), 1.0);
        REQUIRE_FALSE(m.is_linear());
        REQUIRE_THROWS_AS(m.A(), ModelError);
        REQUIRE(m.lipschitz_bound() == 1.0);
    }
}

TEST_CASE("ensemble statistics") {
    SECTION("needs at least two members") {
        REQUIRE_THROWS_AS(Ensemble(Matrix::Ones(2, 1)), DegenerateEnsembleError);
    }
    SECTION("identical members have zero covariance and spread") {
        Ensemble e(Matrix::Constant(3, 5, 2.5));
        const EnsembleStats s = ensemble_stats(e);
        REQUIRE(s.covariance.norm() == 0.0);
        REQUIRE(s.spread == 0.0);
    }
    SECTION("two-member hand computation") {
        Matrix members(1, 2);
        members << 3.0, -3.0;
        const EnsembleStats s = ensemble_stats(Ensemble(members));
        REQUIRE(s.mean(0) == 0.0);
        REQUIRE(s.covariance(0, 0) == Catch::Approx(18.0));
        REQUIRE(s.spread == Catch::Approx(18.0));
    }
    SECTION("matches the brute-force double loop on a random ensemble") {
        Rng rng(5);
        const Matrix members = detail::standard_normal(rng, 3, 5);
        const Ensemble e(members);
        const EnsembleStats s = ensemble_stats(e);

        // independent oracle: elementwise double loop
        Vector mean = Vector::Zero(3);
        for (int i = 0; i < 5; ++i) mean += members.col(i);
        mean /= 5.0;
        Matrix cov = Matrix::Zero(3, 3);
        double sq = 0.0;
        for (int i = 0; i < 5; ++i) {
            const Vector d = members.col(i) - mean;
            cov += d * d.transpose();
            sq += d.squaredNorm();
        }
        cov /= 4.0;
        sq /= 4.0;

        REQUIRE((s.mean - mean).norm() < 1e-14);
        REQUIRE((s.covariance - cov).norm() < 1e-13);
        REQUIRE(s.spread == Catch::Approx(sq).epsilon(1e-12));
        REQUIRE(detail::sym_eigen(s.covariance).values.minCoeff() > -1e-12);
        // deviations sum to zero
        REQUIRE((s.deviations * Vector::Ones(5)).norm() <= 1e-12 * (1.0 + s.deviations.norm()));
    }
}

TEST_CASE("time grid") {
    TimeGrid grid(0.25, 8, 4);
    REQUIRE(grid.horizon() == Catch::Approx(2.0));
    REQUIRE(grid.fine_step() == Catch::Approx(0.0625));
    REQUIRE(grid.fine_steps() == 32);
    REQUIRE(grid.t(3) == Catch::Approx(0.75));
    // eta(t) <= t < eta_plus(t) = eta(t) + h
    for (double t : {0.0, 0.1, 0.25, 0.6, 1.99}) {
        REQUIRE(grid.eta(t) <= t + 1e-12);
        REQUIRE(t < grid.eta_plus(t));
        REQUIRE(grid.eta_plus(t) == Catch::Approx(grid.eta(t) + grid.h()));
    }
    REQUIRE(grid.nu(0.26) == 1);
    REQUIRE(grid.nu_plus(0.26) == 2);
    REQUIRE_THROWS_AS(TimeGrid(-1.0, 4), ConfigError);
    REQUIRE_THROWS_AS(TimeGrid(1.0, 4, 0), ConfigError);
}

TEST_CASE("reference simulation") {
    SECTION("vanishing noise keeps the trajectory at its start") {
        Vector x0 = Vector::Constant(1, 1.5);
        StateSpaceModel m = scalar_model(0.0, 1e-30, 1.0, 1.0, 1.0, x0, Matrix::Zero(1, 1));
        const ObservationPath path = simulate_reference(m, TimeGrid(1e-2, 100), 9);
        for (const Vector& x : path.ref_trajectory)
            REQUIRE(std::abs(x(0) - 1.5) < 1e-10);
    }
    SECTION("same seed gives a bit-identical path") {
        StateSpaceModel m = scalar_model(0.0, 1.0, 1.0, 1.0, 1.0);
        const ObservationPath a = simulate_reference(m, TimeGrid(1e-2, 100), 1234);
        const ObservationPath b = simulate_reference(m, TimeGrid(1e-2, 100), 1234);
        for (std::size_t k = 0; k < a.obs_increments.size(); ++k) {
            REQUIRE(a.obs_increments[k] == b.obs_increments[k]);
            REQUIRE(a.ref_trajectory[k] == b.ref_trajectory[k]);
        }
        const ObservationPath c = simulate_reference(m, TimeGrid(1e-2, 100), 1235);
        REQUIRE(a.obs_increments[0] != c.obs_increments[0]);
    }
    SECTION("increments decompose into drift quadrature plus recorded noise") {
        StateSpaceModel m = scalar_model(-0.3, 1.0, 2.0, 1.5, 1.0);
        const ObservationPath path = simulate_reference(m, TimeGrid(1e-2, 100), 31);
        const double hf = path.fine_grid.h();
        for (std::size_t k = 0; k < path.obs_increments.size(); ++k) {
            const Vector expected =
                hf * (m.G() * path.ref_trajectory[k]) + path.obs_noise_increments[k];
            REQUIRE((path.obs_increments[k] - expected).norm() == 0.0);
        }
    }
    SECTION("records the running second moment") {
        StateSpaceModel m = scalar_model(-1.0, 0.5, 1.0, 1.0, 1.0);
        const ObservationPath path = simulate_reference(m, TimeGrid(1e-2, 100), 77);
        double sup = 0.0;
        for (const Vector& x : path.ref_trajectory) sup = std::max(sup, x.squaredNorm());
        REQUIRE(path.max_ref_second_moment == Catch::Approx(sup));
    }
    SECTION("OU stationary variance over 200 seeds") {
        // dX = -X dt + sqrt(Q) dW has stationary variance Q/2
        const double q = 0.01;
        StateSpaceModel m =
            scalar_model(-1.0, q, 1.0, 1.0, 10.0, Vector::Zero(1), Matrix::Zero(1, 1));
        const TimeGrid grid(1e-3, 10000);
        std::vector<double> xs;
        for (int seed = 0; seed < 200; ++seed)
            xs.push_back(simulate_reference(m, grid, 1000 + seed).ref_trajectory.back()(0));
        double mean = 0.0;
        for (double x : xs) mean += x;
        mean /= double(xs.size());
        double var = 0.0;
        for (double x : xs) var += (x - mean) * (x - mean);
        var /= double(xs.size() - 1);
        const double target = q / 2.0;
        const double se = target * std::sqrt(2.0 / double(xs.size() - 1));
        REQUIRE(std::abs(var - target) <= 3.0 * se);
    }
}

TEST_CASE("increment aggregation") {
    StateSpaceModel m = scalar_model(0.0, 1.0, 1.0, 1.0, 1.0);
    const ObservationPath path = simulate_reference(m, TimeGrid(1.0 / 64.0, 64), 3);

    SECTION("r=1 is the identity") {
        const auto agg = aggregate_increments(path, 1.0 / 64.0);
        REQUIRE(agg.size() == path.obs_increments.size());
        for (std::size_t k = 0; k < agg.size(); ++k)
            REQUIRE(agg[k] == path.obs_increments[k]);
    }
    SECTION("constant fine increments") {
        ObservationPath flat = path;
        for (Vector& v : flat.obs_increments) v = Vector::Constant(1, 0.25);
        const auto agg = aggregate_increments(flat, 4.0 / 64.0);
        for (const Vector& v : agg) REQUIRE(v(0) == Catch::Approx(1.0));
    }
    SECTION("telescoping totals at r=8") {
        const auto agg = aggregate_increments(path, 8.0 / 64.0);
        double total_coarse = 0.0, total_fine = 0.0;
        for (const Vector& v : agg) total_coarse += v(0);
        for (const Vector& v : path.obs_increments) total_fine += v(0);
        REQUIRE(std::abs(total_coarse - total_fine) < 1e-13);
    }
    SECTION("rejects non-integer ratios") {
        REQUIRE_THROWS_AS(aggregate_increments(path, 3.1 / 64.0), ConfigError);
    }
}
