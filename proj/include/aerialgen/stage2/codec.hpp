#pragma once

// Maps images in [-1, 1] to the space the denoiser works in. The identity
// codec is exact; the learned codec is a small 4x convolutional autoencoder.

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "aerialgen/core/image.hpp"
#include "aerialgen/nn/layers.hpp"

namespace aerialgen::stage2 {

class LatentCodec {
public:
    virtual ~LatentCodec() = default;
    // x [N, 3, S, S] -> z [N, latent_channels, S / factor, S / factor]
    virtual Tensor encode(const Tensor& x) const = 0;
    virtual Tensor decode(const Tensor& z) const = 0;
    virtual int latent_channels() const = 0;
    virtual int factor() const = 0;
    virtual std::string mode() const = 0;
};

class IdentityCodec final : public LatentCodec {
public:
    Tensor encode(const Tensor& x) const override { return x; }
    Tensor decode(const Tensor& z) const override { return z; }
    int latent_channels() const override { return 3; }
    int factor() const override { return 1; }
    std::string mode() const override { return "identity"; }
};

struct CodecTrainOptions {
    int steps         = 1500;
    int batch_size    = 8;
    double learning_rate = 2e-3;
    std::uint64_t seed   = 1;
};

class LearnedCodec final : public LatentCodec {
public:
    explicit LearnedCodec(int latent_channels = 4, int width = 32, std::uint64_t seed = 1);

    Tensor encode(const Tensor& x) const override;
    Tensor decode(const Tensor& z) const override;
    int latent_channels() const override { return latent_channels_; }
    int factor() const override { return 4; }
    std::string mode() const override { return "learned"; }

    // Reconstruction training on images in [-1, 1]; returns the loss curve.
    std::vector<double> train(const std::vector<Tensor>& images, const CodecTrainOptions& options);

    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }
    void save(const std::filesystem::path& path) const;
    void load(const std::filesystem::path& path);

private:
    nn::Var encode_var(const nn::Var& x) const;
    nn::Var decode_var(const nn::Var& z) const;

    int latent_channels_;
    // Latents are divided by this so they have roughly unit variance.
    float latent_scale_ = 1.0f;
    nn::ParamStore store_;
    nn::Conv2d e0_, e1_, e2_, e3_, d0_, d1_, d2_, d3_;
};

// PSNR in dB of two tensors with values in [-1, 1], measured on the [0, 1] scale.
double tensor_psnr(const Tensor& a, const Tensor& b);

}  // namespace aerialgen::stage2
