#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "aerialgen/nn/ops.hpp"
#include "doctest.h"

namespace testing_support {

using aerialgen::Rng;
using aerialgen::Tensor;
using aerialgen::nn::Var;

// Compares autograd gradients against central differences for the scalar
// loss sum(f(inputs) * R) with a fixed random R.
inline void check_gradients(const std::function<Var(const std::vector<Var>&)>& f, std::vector<Tensor> inputs,
                            double tolerance = 2e-2, float step = 1e-2f) {
    Rng rng(1234);
    std::vector<Var> vars;
    for (auto& t : inputs) vars.emplace_back(t, true);
    Var out = f(vars);
    Var projection(Tensor::randn(out.shape(), rng));
    Var loss = aerialgen::nn::sum(aerialgen::nn::mul(out, projection));
    loss.backward();

    auto eval = [&](const std::vector<Tensor>& xs) {
        aerialgen::nn::NoGradGuard guard;
        std::vector<Var> vs;
        for (const auto& t : xs) vs.emplace_back(t);
        Var o      = f(vs);
        double acc = 0.0;
        for (std::size_t i = 0; i < o.value().numel(); ++i) acc += static_cast<double>(o.value()[i]) * projection.value()[i];
        return acc;
    };

    for (std::size_t k = 0; k < inputs.size(); ++k) {
        REQUIRE(vars[k].has_grad());
        const Tensor& analytic = vars[k].grad();
        for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
            auto plus  = inputs;
            auto minus = inputs;
            plus[k][i] += step;
            minus[k][i] -= step;
            const double numeric = (eval(plus) - eval(minus)) / (2.0 * step);
            const double scale   = std::max(1.0, std::abs(numeric));
            INFO("input " << k << " element " << i << " numeric " << numeric << " analytic " << analytic[i]);
            CHECK(std::abs(numeric - analytic[i]) <= tolerance * scale);
        }
    }
}

inline Tensor random_tensor(aerialgen::Shape shape, std::uint64_t seed, float stddev = 1.0f) {
    Rng rng(seed);
    return Tensor::randn(std::move(shape), rng, stddev);
}

}  // namespace testing_support
