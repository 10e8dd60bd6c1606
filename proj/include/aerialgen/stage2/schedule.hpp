#pragma once

// Forward diffusion process with a linear beta schedule.

#include <vector>

#include "aerialgen/core/tensor.hpp"

namespace aerialgen::stage2 {

struct NoiseSchedule {
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;

    int steps() const noexcept { return static_cast<int>(betas.size()); }

    static NoiseSchedule linear(int steps = 1000, double beta_start = 1e-4, double beta_end = 2e-2);
};

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps, t per batch item (z0 is [N, ...]).
Tensor add_noise(const Tensor& z0, const std::vector<int>& t, const Tensor& eps, const NoiseSchedule& schedule);

struct NoisedBatch {
    Tensor z_t;
    std::vector<int> t;
    Tensor eps;
};

// Uniform t per item and standard normal eps.
NoisedBatch draw_noised_batch(const Tensor& z0, const NoiseSchedule& schedule, Rng& rng);

// `count` timesteps evenly spread over [0, T), ascending, distinct.
std::vector<int> sampling_timesteps(const NoiseSchedule& schedule, int count);

}  // namespace aerialgen::stage2
