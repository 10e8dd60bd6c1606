#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

namespace aerialgen::nn::detail {

// Single-precision exp with range reduction and a degree-6 polynomial
// (about 2 ulp); written branch-free so loops over it vectorize.
inline float exp_approx(float x) {
    x               = std::clamp(x, -87.0f, 88.0f);
    const float n   = std::floor(x * 1.44269504088896341f + 0.5f);
    const float r   = x - n * 0.693359375f + n * 2.12194440e-4f;
    float p         = 1.9875691500e-4f;
    p               = p * r + 1.3981999507e-3f;
    p               = p * r + 8.3334519073e-3f;
    p               = p * r + 4.1665795894e-2f;
    p               = p * r + 1.6666665459e-1f;
    p               = p * r + 5.0000001201e-1f;
    p               = p * r * r + r + 1.0f;
    const auto bits = static_cast<std::uint32_t>(static_cast<std::int32_t>(n) + 127) << 23;
    return p * std::bit_cast<float>(bits);
}

inline float exp_approx_any(float x) { return exp_approx(x); }
inline double exp_approx_any(double x) { return std::exp(x); }

}  // namespace aerialgen::nn::detail
