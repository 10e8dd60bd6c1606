#pragma once

// Conditional denoiser: a small U-Net over the codec space with FiLM
// modulation from time and text, plus a layout adapter whose output
// projections start at exactly zero.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "aerialgen/nn/layers.hpp"
#include "aerialgen/stage2/codec.hpp"
#include "aerialgen/stage2/schedule.hpp"

namespace aerialgen::stage2 {

struct Stage2Config {
    int image_size = 64;
    std::string codec = "identity";  // identity | learned
    int latent_channels = 4;         // learned codec only
    std::array<int, 3> channels{16, 32, 64};
    int emb_dim     = 128;
    int text_dim    = 64;
    int norm_groups = 8;

    int diffusion_steps = 1000;
    double beta_start   = 1e-4;
    double beta_end     = 2e-2;
    int sample_steps    = 100;
    double guidance_scale = 1.0;

    double learning_rate = 5e-4;
    int batch_size       = 8;
    int steps            = 3000;
    double ema_decay     = 0.999;
    double text_dropout   = 0.1;
    double layout_dropout = 0.0;
    bool freeze_adapter   = false;
    bool augment          = true;
    std::string prompt_mode = "dynamic";  // constant | city | raw | dynamic
    bool teacher_layouts    = true;       // false: Stage-I predictions
    std::uint64_t seed      = 1;

    void validate() const;
    std::string fingerprint() const;
};

void to_json(nlohmann::json& j, const Stage2Config& c);
void from_json(const nlohmann::json& j, Stage2Config& c);

class Stage2Model {
public:
    explicit Stage2Model(const Stage2Config& config);

    // z_t [N, C, s, s], t per item, text [N, text_dim], layout palette RGB in
    // [-1, 1] at [N, 3, s, s] or undefined for the unconditioned backbone.
    nn::Var forward(const nn::Var& z_t, const std::vector<int>& t, const nn::Var& text,
                    const nn::Var& layout = {}) const;

    // Stops gradient flow into the adapter.
    void set_adapter_trainable(bool trainable);

    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }
    const Stage2Config& config() const { return config_; }
    const NoiseSchedule& schedule() const { return schedule_; }
    const LatentCodec& codec() const { return *codec_; }
    void set_codec(std::shared_ptr<const LatentCodec> codec);
    // Side length of the denoiser input.
    int latent_size() const { return config_.image_size / codec_->factor(); }

private:
    struct ResBlock {
        nn::GroupNorm n1, n2;
        nn::Conv2d c1, c2;
        nn::Linear film;
        int channels = 0;
        nn::Var operator()(const nn::Var& x, const nn::Var& emb) const;
    };
    ResBlock res_block(const std::string& name, int channels, Rng& rng);

    Stage2Config config_;
    NoiseSchedule schedule_;
    std::shared_ptr<const LatentCodec> codec_;
    nn::ParamStore store_;
    nn::Linear time1_, time2_, text_;
    nn::Conv2d in_, down1_, down2_, up1_, up0_, out_;
    ResBlock rb0_, rb1_, mid1_, mid2_, rbu1_, rbu0_;
    nn::GroupNorm out_norm_;
    nn::Conv2d a_in_, a0_, a_down1_, a_down2_, zero0_, zero1_, zero2_;
    std::vector<std::string> adapter_names_;
};

// Sinusoidal timestep features [N, dim].
Tensor timestep_features(const std::vector<int>& t, int dim);

}  // namespace aerialgen::stage2
