#include "aerialgen/stage2/schedule.hpp"

#include <cmath>
#include <string>

#include "aerialgen/core/error.hpp"

namespace aerialgen::stage2 {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("noise schedule needs at least one step");
    if (!(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end)) {
        throw ConfigError("betas must satisfy 0 < start <= end < 1");
    }
    NoiseSchedule s;
    double bar = 1.0;
    for (int t = 0; t < steps; ++t) {
        const double beta = steps == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (steps - 1);
        bar *= 1.0 - beta;
        s.betas.push_back(beta);
        s.alphas.push_back(1.0 - beta);
        s.alpha_bars.push_back(bar);
    }
    return s;
}

Tensor add_noise(const Tensor& z0, const std::vector<int>& t, const Tensor& eps, const NoiseSchedule& schedule) {
    require_same_shape(z0.shape(), eps.shape(), "add_noise");
    if (z0.rank() < 1 || static_cast<int>(t.size()) != z0.dim(0)) throw ShapeError("add_noise: one t per batch item");
    const std::size_t per = z0.numel() / t.size();
    Tensor out(z0.shape());
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] < 0 || t[i] >= schedule.steps()) {
            throw ConfigError("timestep " + std::to_string(t[i]) + " outside [0, " +
                              std::to_string(schedule.steps()) + ")");
        }
        const auto a = static_cast<float>(std::sqrt(schedule.alpha_bars[static_cast<std::size_t>(t[i])]));
        const auto b = static_cast<float>(std::sqrt(1.0 - schedule.alpha_bars[static_cast<std::size_t>(t[i])]));
        const float* x = z0.data() + i * per;
        const float* e = eps.data() + i * per;
        float* o       = out.data() + i * per;
        for (std::size_t j = 0; j < per; ++j) o[j] = a * x[j] + b * e[j];
    }
    return out;
}

NoisedBatch draw_noised_batch(const Tensor& z0, const NoiseSchedule& schedule, Rng& rng) {
    NoisedBatch b;
    std::uniform_int_distribution<int> pick(0, schedule.steps() - 1);
    for (int i = 0; i < z0.dim(0); ++i) b.t.push_back(pick(rng));
    b.eps = Tensor::randn(z0.shape(), rng);
    b.z_t = add_noise(z0, b.t, b.eps, schedule);
    return b;
}

std::vector<int> sampling_timesteps(const NoiseSchedule& schedule, int count) {
    const int T = schedule.steps();
    if (count < 1 || count > T) throw ConfigError("sampling steps must lie in [1, " + std::to_string(T) + "]");
    std::vector<int> out;
    for (int i = 0; i < count; ++i) {
        const int t = count == 1 ? T - 1 : static_cast<int>(std::lround(static_cast<double>(i) * (T - 1) / (count - 1)));
        out.push_back(t);
    }
    return out;
}

}  // namespace aerialgen::stage2
