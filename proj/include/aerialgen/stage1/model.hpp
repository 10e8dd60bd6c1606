#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "aerialgen/bev/geometry.hpp"
#include "aerialgen/core/image.hpp"
#include "aerialgen/nn/layers.hpp"

namespace aerialgen::stage1 {

struct Stage1Config {
    // Network input after box-filtering the panorama.
    int input_height = 128;
    int input_width  = 128;
    int stem_channels    = 16;
    int feature_channels = 32;  // c
    int depth_bins       = 64;  // d
    int bev_size         = 32;  // k
    bool shared_depth    = true;
    int decoder_channels_k  = 32;
    int decoder_channels_2k = 16;
    int decoder_channels_4k = 16;
    int layout_size = 128;
    int norm_groups = 4;

    double learning_rate = 1e-3;
    int batch_size       = 8;
    int steps            = 2000;
    double dice_epsilon  = 1.0;
    bool augment         = true;
    std::uint64_t seed   = 1;

    void validate() const;
    // Hash of the architecture fields; checkpoints must match it to load.
    std::string fingerprint() const;
};

void to_json(nlohmann::json& j, const Stage1Config& c);
void from_json(const nlohmann::json& j, Stage1Config& c);

class Stage1Model {
public:
    explicit Stage1Model(const Stage1Config& config);

    // x [N, 3, input_height, input_width] -> class probabilities [N, 8, S, S].
    // fov < 360 masks the input and feature columns outside the view.
    nn::Var forward(const nn::Var& x, double fov_degrees = 360.0) const;
    // Decoder alone: f_bev [N, c, k, k] -> probabilities.
    nn::Var decode(const nn::Var& f_bev) const;
    // Backbone plus projection: x -> f_bev.
    nn::Var encode(const nn::Var& x, double fov_degrees = 360.0) const;

    // Box-filters a ground panorama to the network input size, [3, H, W].
    Tensor preprocess(const Image& ground) const;

    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }
    const Stage1Config& config() const { return config_; }

private:
    Stage1Config config_;
    nn::ParamStore store_;
    bev::PolarGridSpec grid_;
    nn::Conv2d stem_, down_, res1_, res2_, depth_;
    nn::GroupNorm stem_norm_, down_norm_, res1_norm_, res2_norm_;
    nn::Var row_bias_;
    nn::Conv2d dec_in_, dec_r1_, dec_r2_, dec_2k_, dec_4k_, side_k_, side_2k_, head_;
    nn::GroupNorm dec_in_norm_, dec_r1_norm_, dec_r2_norm_, dec_2k_norm_, dec_4k_norm_;
};

// Adds b[1, C, H, 1] to every column and batch item of x[N, C, H, W].
nn::Var add_row_bias(const nn::Var& x, const nn::Var& bias);

}  // namespace aerialgen::stage1
