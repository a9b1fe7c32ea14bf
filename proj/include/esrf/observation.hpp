#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "esrf/model.hpp"
#include "esrf/random.hpp"

namespace esrf {

/// Fine-grid reference trajectory and observation increments shared by every
/// filter in a run.  Each fine increment is
///     dY_k = h_fine * G * X^ref_{t_k} + C^{1/2} * dV_k,   dV_k ~ N(0, h_fine Id),
/// (left-endpoint quadrature for the integral part) and the noise part
/// C^{1/2} dV_k is recorded separately.  Identical seeds give bit-identical
/// paths.
struct ObservationPath {
    TimeGrid fine_grid;                         // resolution h_fine
    std::vector<Vector> ref_trajectory;         // length fine steps + 1
    std::vector<Vector> obs_increments;         // length fine steps
    std::vector<Vector> obs_noise_increments;   // length fine steps
    std::uint64_t rng_seed = 0;
    double max_ref_second_moment = 0.0;         // sup_k ||X^ref_k||^2 over the run
};

/// Euler-Maruyama simulation of the signal on the fine grid, plus the
/// observation increments.  X_0^ref ~ N(init_mean, init_cov).
inline ObservationPath simulate_reference(const StateSpaceModel& model, const TimeGrid& grid,
                                          std::uint64_t seed) {
    const Index d = model.dim_state();
    const Index p = model.dim_obs();
    const double hf = grid.fine_step();
    const long steps = grid.fine_steps();
    const double sq_hf = std::sqrt(hf);

    ObservationPath path{TimeGrid(hf, steps), {}, {}, {}, seed, 0.0};
    path.ref_trajectory.reserve(steps + 1);
    path.obs_increments.reserve(steps);
    path.obs_noise_increments.reserve(steps);

    Rng rng(seed);
    Vector x = model.init_mean() + model.sqrt_init_cov() * detail::standard_normal(rng, d);
    path.ref_trajectory.push_back(x);
    path.max_ref_second_moment = x.squaredNorm();

    for (long k = 0; k < steps; ++k) {
        const Vector noise = model.sqrt_C() * (sq_hf * detail::standard_normal(rng, p));
        path.obs_noise_increments.push_back(noise);
        path.obs_increments.push_back(hf * (model.G() * x) + noise);

        const Vector xi = detail::standard_normal(rng, d);
        x += hf * model.drift(x) + sq_hf * (model.sqrt_Q() * xi);
        path.ref_trajectory.push_back(x);
        path.max_ref_second_moment = std::max(path.max_ref_second_moment, x.squaredNorm());
    }
    return path;
}

namespace detail {

/// Integer aggregation ratio h / h_fine, or throws ConfigError.
inline long aggregation_ratio(const ObservationPath& path, double h) {
    const double hf = path.fine_grid.h();
    const double ratio = h / hf;
    const long r = static_cast<long>(std::llround(ratio));
    if (r < 1 || std::abs(ratio - double(r)) > 1e-9 * std::max(1.0, ratio))
        throw ConfigError("coarse step is not an integer multiple of the fine step");
    if (path.fine_grid.steps() % r != 0)
        throw ConfigError("fine grid does not divide evenly into coarse steps");
    return r;
}

} // namespace detail

/// Sums consecutive fine increments into the coarse increments
/// dY_k = Y_{t_k} - Y_{t_{k-1}} for step h.  Exactly telescoping: the sum of
/// the output equals the sum of the fine increments.
inline std::vector<Vector> aggregate_increments(const ObservationPath& path, double h) {
    const long r = detail::aggregation_ratio(path, h);
    const long coarse_steps = path.fine_grid.steps() / r;
    std::vector<Vector> out;
    out.reserve(coarse_steps);
    const Index p = path.obs_increments.empty() ? 0 : path.obs_increments.front().size();
    for (long k = 0; k < coarse_steps; ++k) {
        Vector sum = Vector::Zero(p);
        for (long j = 0; j < r; ++j) sum += path.obs_increments[k * r + j];
        out.push_back(std::move(sum));
    }
    return out;
}

} // namespace esrf
