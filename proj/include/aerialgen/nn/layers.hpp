#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "aerialgen/nn/ops.hpp"

namespace aerialgen::nn {

// Named, ordered collection of trainable tensors.
class ParamStore {
public:
    Var add(const std::string& name, Tensor init);

    const std::vector<std::pair<std::string, Var>>& entries() const noexcept { return entries_; }
    const Var& at(const std::string& name) const;
    std::size_t parameter_count() const;

    void zero_grad();
    // Copies values (not identity) from a store with identical names and shapes.
    void assign_from(const ParamStore& other);

    // FNV-1a over names, shapes and raw parameter bytes, as 16 hex digits.
    std::string fingerprint() const;

    void save(const std::filesystem::path& path) const;
    void load(const std::filesystem::path& path);

private:
    std::vector<std::pair<std::string, Var>> entries_;
};

struct Conv2d {
    Var weight;
    Var bias;
    Conv2dOptions options;

    Conv2d() = default;
    // Same-size padding for odd kernels unless options say otherwise.
    Conv2d(ParamStore& store, const std::string& name, int in_channels, int out_channels, int kernel, Rng& rng,
           int stride = 1, bool wrap_width = false);
    static Conv2d zero_initialized(ParamStore& store, const std::string& name, int in_channels, int out_channels);

    Var operator()(const Var& x) const { return conv2d(x, weight, bias, options); }
};

struct Linear {
    Var weight;
    Var bias;

    Linear() = default;
    Linear(ParamStore& store, const std::string& name, int in_features, int out_features, Rng& rng);
    static Linear zero_initialized(ParamStore& store, const std::string& name, int in_features, int out_features);

    Var operator()(const Var& x) const { return linear(x, weight, bias); }
};

struct GroupNorm {
    Var gamma;
    Var beta;
    int groups = 1;

    GroupNorm() = default;
    GroupNorm(ParamStore& store, const std::string& name, int channels, int groups);

    Var operator()(const Var& x) const { return group_norm(x, groups, gamma, beta); }
};

struct AdamOptions {
    double learning_rate = 1e-4;
    double beta1         = 0.9;
    double beta2         = 0.999;
    double eps           = 1e-8;
    // Global gradient-norm clip; <= 0 disables.
    double clip_norm = 0.0;
};

class Adam {
public:
    Adam(ParamStore& store, AdamOptions options);

    // Applies one update from accumulated gradients and clears them.
    void step();
    void set_learning_rate(double lr) { options_.learning_rate = lr; }
    std::int64_t steps() const noexcept { return steps_; }
    const AdamOptions& options() const noexcept { return options_; }

private:
    ParamStore* store_;
    AdamOptions options_;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
    std::int64_t steps_ = 0;
};

std::string fnv1a_hex(std::uint64_t hash);
std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 1469598103934665603ULL);

}  // namespace aerialgen::nn
