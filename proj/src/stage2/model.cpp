#include "aerialgen/stage2/model.hpp"

#include <cmath>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/random.hpp"

namespace aerialgen::stage2 {

using nn::Var;

namespace {
constexpr int kTimeFeatures = 64;
}  // namespace

void Stage2Config::validate() const {
    if (codec != "identity" && codec != "learned") throw ConfigError("codec must be identity or learned");
    const int factor = codec == "learned" ? 4 : 1;
    if (image_size < 4 || image_size % (4 * factor)) {
        throw ConfigError("image_size must be a positive multiple of " + std::to_string(4 * factor));
    }
    for (int c : channels) {
        if (c <= 0 || c % norm_groups) throw ConfigError("channel counts must be positive multiples of norm_groups");
    }
    for (int v : {emb_dim, text_dim, norm_groups, latent_channels, batch_size}) {
        if (v <= 0) throw ConfigError("stage2 config sizes must be positive");
    }
    if (sample_steps < 1 || sample_steps > diffusion_steps) throw ConfigError("sample_steps must lie in [1, T]");
    for (double p : {text_dropout, layout_dropout, ema_decay}) {
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("dropout and EMA rates must lie in [0, 1]");
    }
    if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (prompt_mode != "constant" && prompt_mode != "city" && prompt_mode != "raw" && prompt_mode != "dynamic") {
        throw ConfigError("prompt_mode must be constant, city, raw or dynamic");
    }
}

void to_json(nlohmann::json& j, const Stage2Config& c) {
    j = {{"image_size", c.image_size},
         {"codec", c.codec},
         {"latent_channels", c.latent_channels},
         {"channels", c.channels},
         {"emb_dim", c.emb_dim},
         {"text_dim", c.text_dim},
         {"norm_groups", c.norm_groups},
         {"diffusion_steps", c.diffusion_steps},
         {"beta_start", c.beta_start},
         {"beta_end", c.beta_end},
         {"sample_steps", c.sample_steps},
         {"guidance_scale", c.guidance_scale},
         {"learning_rate", c.learning_rate},
         {"batch_size", c.batch_size},
         {"steps", c.steps},
         {"ema_decay", c.ema_decay},
         {"text_dropout", c.text_dropout},
         {"layout_dropout", c.layout_dropout},
         {"freeze_adapter", c.freeze_adapter},
         {"augment", c.augment},
         {"prompt_mode", c.prompt_mode},
         {"teacher_layouts", c.teacher_layouts},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, Stage2Config& c) {
    const Stage2Config d;
    c.image_size      = j.value("image_size", d.image_size);
    c.codec           = j.value("codec", d.codec);
    c.latent_channels = j.value("latent_channels", d.latent_channels);
    c.channels        = j.value("channels", d.channels);
    c.emb_dim         = j.value("emb_dim", d.emb_dim);
    c.text_dim        = j.value("text_dim", d.text_dim);
    c.norm_groups     = j.value("norm_groups", d.norm_groups);
    c.diffusion_steps = j.value("diffusion_steps", d.diffusion_steps);
    c.beta_start      = j.value("beta_start", d.beta_start);
    c.beta_end        = j.value("beta_end", d.beta_end);
    c.sample_steps    = j.value("sample_steps", d.sample_steps);
    c.guidance_scale  = j.value("guidance_scale", d.guidance_scale);
    c.learning_rate   = j.value("learning_rate", d.learning_rate);
    c.batch_size      = j.value("batch_size", d.batch_size);
    c.steps           = j.value("steps", d.steps);
    c.ema_decay       = j.value("ema_decay", d.ema_decay);
    c.text_dropout    = j.value("text_dropout", d.text_dropout);
    c.layout_dropout  = j.value("layout_dropout", d.layout_dropout);
    c.freeze_adapter  = j.value("freeze_adapter", d.freeze_adapter);
    c.augment         = j.value("augment", d.augment);
    c.prompt_mode     = j.value("prompt_mode", d.prompt_mode);
    c.teacher_layouts = j.value("teacher_layouts", d.teacher_layouts);
    c.seed            = j.value("seed", d.seed);
}

std::string Stage2Config::fingerprint() const {
    nlohmann::json j = *this;
    for (const char* k : {"sample_steps", "guidance_scale", "learning_rate", "batch_size", "steps", "ema_decay",
                          "text_dropout", "layout_dropout", "freeze_adapter", "augment", "prompt_mode",
                          "teacher_layouts", "seed"}) {
        j.erase(k);
    }
    const auto s = j.dump();
    return nn::fnv1a_hex(nn::fnv1a(s.data(), s.size()));
}

Tensor timestep_features(const std::vector<int>& t, int dim) {
    const int half = dim / 2;
    Tensor out({static_cast<int>(t.size()), dim});
    for (std::size_t i = 0; i < t.size(); ++i) {
        for (int k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(10000.0) * k / half);
            const double a    = t[i] * freq;
            out[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(k)]        = static_cast<float>(std::sin(a));
            out[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(half + k)] = static_cast<float>(std::cos(a));
        }
    }
    return out;
}

Stage2Model::ResBlock Stage2Model::res_block(const std::string& name, int channels, Rng& rng) {
    ResBlock b;
    b.channels = channels;
    b.n1       = nn::GroupNorm(store_, name + ".n1", channels, config_.norm_groups);
    b.c1       = nn::Conv2d(store_, name + ".c1", channels, channels, 3, rng);
    b.film     = nn::Linear::zero_initialized(store_, name + ".film", config_.emb_dim, 2 * channels);
    b.n2       = nn::GroupNorm(store_, name + ".n2", channels, config_.norm_groups);
    b.c2       = nn::Conv2d(store_, name + ".c2", channels, channels, 3, rng);
    return b;
}

Var Stage2Model::ResBlock::operator()(const Var& x, const Var& emb) const {
    Var h        = c1(nn::silu(n1(x)));
    const Var ss = film(emb);
    h            = nn::film(n2(h), nn::slice_channels(ss, 0, channels), nn::slice_channels(ss, channels, 2 * channels));
    h            = c2(nn::silu(h));
    return nn::add(x, h);
}

Stage2Model::Stage2Model(const Stage2Config& config) : config_(config) {
    config_.validate();
    schedule_ = NoiseSchedule::linear(config_.diffusion_steps, config_.beta_start, config_.beta_end);
    if (config_.codec == "identity") {
        codec_ = std::make_shared<IdentityCodec>();
    } else {
        codec_ = std::make_shared<LearnedCodec>(config_.latent_channels);
    }
    const int zc = codec_->latent_channels();
    const auto [c0, c1, c2] = config_.channels;
    const int e = config_.emb_dim;
    Rng rng = make_rng({config_.seed, hash_string("stage2-init")});

    time1_ = nn::Linear(store_, "time.fc1", kTimeFeatures, e, rng);
    time2_ = nn::Linear(store_, "time.fc2", e, e, rng);
    text_  = nn::Linear(store_, "text.proj", config_.text_dim, e, rng);

    in_    = nn::Conv2d(store_, "unet.in", zc, c0, 3, rng);
    rb0_   = res_block("unet.rb0", c0, rng);
    down1_ = nn::Conv2d(store_, "unet.down1", c0, c1, 3, rng, 2);
    rb1_   = res_block("unet.rb1", c1, rng);
    down2_ = nn::Conv2d(store_, "unet.down2", c1, c2, 3, rng, 2);
    mid1_  = res_block("unet.mid1", c2, rng);
    mid2_  = res_block("unet.mid2", c2, rng);
    up1_   = nn::Conv2d(store_, "unet.up1", c2 + c1, c1, 3, rng);
    rbu1_  = res_block("unet.rbu1", c1, rng);
    up0_   = nn::Conv2d(store_, "unet.up0", c1 + c0, c0, 3, rng);
    rbu0_  = res_block("unet.rbu0", c0, rng);
    out_norm_ = nn::GroupNorm(store_, "unet.out_norm", c0, config_.norm_groups);
    out_      = nn::Conv2d(store_, "unet.out", c0, zc, 3, rng);

    const std::size_t before = store_.entries().size();
    a_in_    = nn::Conv2d(store_, "adapter.in", 3, c0, 3, rng);
    a0_      = nn::Conv2d(store_, "adapter.c0", c0, c0, 3, rng);
    a_down1_ = nn::Conv2d(store_, "adapter.down1", c0, c1, 3, rng, 2);
    a_down2_ = nn::Conv2d(store_, "adapter.down2", c1, c2, 3, rng, 2);
    zero0_   = nn::Conv2d::zero_initialized(store_, "adapter.zero0", c0, c0);
    zero1_   = nn::Conv2d::zero_initialized(store_, "adapter.zero1", c1, c1);
    zero2_   = nn::Conv2d::zero_initialized(store_, "adapter.zero2", c2, c2);
    for (std::size_t i = before; i < store_.entries().size(); ++i) adapter_names_.push_back(store_.entries()[i].first);
    set_adapter_trainable(!config_.freeze_adapter);
}

void Stage2Model::set_adapter_trainable(bool trainable) {
    for (const auto& name : adapter_names_) store_.at(name).node()->requires_grad = trainable;
}

void Stage2Model::set_codec(std::shared_ptr<const LatentCodec> codec) {
    if (!codec) throw ConfigError("codec must not be null");
    if (codec->mode() != config_.codec || codec->latent_channels() != codec_->latent_channels()) {
        throw ConfigError("codec does not match the stage2 config");
    }
    codec_ = std::move(codec);
}

Var Stage2Model::forward(const Var& z_t, const std::vector<int>& t, const Var& text, const Var& layout) const {
    const int n = z_t.dim(0), s = latent_size();
    if (z_t.shape() != Shape{n, codec_->latent_channels(), s, s}) {
        throw ShapeError("denoiser input " + shape_string(z_t.shape()) + " does not match the codec space");
    }
    if (static_cast<int>(t.size()) != n) throw ShapeError("denoiser needs one timestep per item");
    if (text.shape() != Shape{n, config_.text_dim}) throw ShapeError("text embedding must be [N, text_dim]");
    for (int ti : t) {
        if (ti < 0 || ti >= schedule_.steps()) throw ConfigError("timestep out of range");
    }

    const Var tf(timestep_features(t, kTimeFeatures));
    Var emb = time2_(nn::silu(time1_(tf)));
    emb     = nn::silu(nn::add(emb, text_(text)));

    Var h0 = in_(z_t);
    Var a0, a1, a2;
    const bool conditioned = layout.defined();
    if (conditioned) {
        if (layout.shape() != Shape{n, 3, s, s}) throw ShapeError("layout condition must be [N, 3, s, s]");
        a0 = nn::silu(a0_(nn::silu(a_in_(layout))));
        a1 = nn::silu(a_down1_(a0));
        a2 = nn::silu(a_down2_(a1));
        h0 = nn::add(h0, zero0_(a0));
    }
    h0     = rb0_(h0, emb);
    Var h1 = down1_(h0);
    if (conditioned) h1 = nn::add(h1, zero1_(a1));
    h1     = rb1_(h1, emb);
    Var h2 = down2_(h1);
    if (conditioned) h2 = nn::add(h2, zero2_(a2));
    h2 = mid2_(mid1_(h2, emb), emb);

    Var u1 = up1_(nn::concat_channels({nn::upsample_nearest(h2, 2), h1}));
    u1     = rbu1_(u1, emb);
    Var u0 = up0_(nn::concat_channels({nn::upsample_nearest(u1, 2), h0}));
    u0     = rbu0_(u0, emb);
    return out_(nn::silu(out_norm_(u0)));
}

}  // namespace aerialgen::stage2
