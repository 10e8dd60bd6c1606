#include "aerialgen/stage1/model.hpp"

#include "aerialgen/bev/ops.hpp"
#include "aerialgen/core/error.hpp"
#include "aerialgen/core/layout.hpp"
#include "aerialgen/core/random.hpp"

namespace aerialgen::stage1 {

using nn::Var;

void Stage1Config::validate() const {
    for (int v : {input_height, input_width, stem_channels, feature_channels, depth_bins, bev_size,
                  decoder_channels_k, decoder_channels_2k, decoder_channels_4k, layout_size, norm_groups, batch_size}) {
        if (v <= 0) throw ConfigError("stage1 config values must be positive");
    }
    if (input_height % 2 || input_width % 8) throw ConfigError("input height must be even and width a multiple of 8");
    if (layout_size != 4 * bev_size) throw ConfigError("layout_size must be 4 * bev_size (three decoder scales)");
    for (int ch : {stem_channels, feature_channels, decoder_channels_k, decoder_channels_2k, decoder_channels_4k}) {
        if (ch % norm_groups) throw ConfigError("channel counts must be divisible by norm_groups");
    }
    if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (!(dice_epsilon >= 0.0)) throw ConfigError("dice epsilon must be >= 0");
}

void to_json(nlohmann::json& j, const Stage1Config& c) {
    j = {{"input_height", c.input_height},
         {"input_width", c.input_width},
         {"stem_channels", c.stem_channels},
         {"feature_channels", c.feature_channels},
         {"depth_bins", c.depth_bins},
         {"bev_size", c.bev_size},
         {"shared_depth", c.shared_depth},
         {"decoder_channels_k", c.decoder_channels_k},
         {"decoder_channels_2k", c.decoder_channels_2k},
         {"decoder_channels_4k", c.decoder_channels_4k},
         {"layout_size", c.layout_size},
         {"norm_groups", c.norm_groups},
         {"learning_rate", c.learning_rate},
         {"batch_size", c.batch_size},
         {"steps", c.steps},
         {"dice_epsilon", c.dice_epsilon},
         {"augment", c.augment},
         {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, Stage1Config& c) {
    const Stage1Config d;
    c.input_height        = j.value("input_height", d.input_height);
    c.input_width         = j.value("input_width", d.input_width);
    c.stem_channels       = j.value("stem_channels", d.stem_channels);
    c.feature_channels    = j.value("feature_channels", d.feature_channels);
    c.depth_bins          = j.value("depth_bins", d.depth_bins);
    c.bev_size            = j.value("bev_size", d.bev_size);
    c.shared_depth        = j.value("shared_depth", d.shared_depth);
    c.decoder_channels_k  = j.value("decoder_channels_k", d.decoder_channels_k);
    c.decoder_channels_2k = j.value("decoder_channels_2k", d.decoder_channels_2k);
    c.decoder_channels_4k = j.value("decoder_channels_4k", d.decoder_channels_4k);
    c.layout_size         = j.value("layout_size", d.layout_size);
    c.norm_groups         = j.value("norm_groups", d.norm_groups);
    c.learning_rate       = j.value("learning_rate", d.learning_rate);
    c.batch_size          = j.value("batch_size", d.batch_size);
    c.steps               = j.value("steps", d.steps);
    c.dice_epsilon        = j.value("dice_epsilon", d.dice_epsilon);
    c.augment             = j.value("augment", d.augment);
    c.seed                = j.value("seed", d.seed);
}

std::string Stage1Config::fingerprint() const {
    nlohmann::json j = *this;
    for (const char* k : {"learning_rate", "batch_size", "steps", "augment", "seed", "dice_epsilon"}) j.erase(k);
    const auto s = j.dump();
    return nn::fnv1a_hex(nn::fnv1a(s.data(), s.size()));
}

Var add_row_bias(const Var& x, const Var& bias) {
    const auto& xs = x.shape();
    if (xs.size() != 4 || bias.shape() != Shape{1, xs[1], xs[2], 1}) {
        throw ShapeError("add_row_bias: bias " + shape_string(bias.shape()) + " vs input " + shape_string(xs));
    }
    const int n = xs[0], c = xs[1], h = xs[2], w = xs[3];
    Tensor out    = x.value();
    const float* b = bias.value().data();
    for (int i = 0; i < n; ++i)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y) {
                float* row = out.data() + ((static_cast<std::size_t>(i) * c + ch) * h + y) * w;
                const float v = b[static_cast<std::size_t>(ch) * h + y];
                for (int xx = 0; xx < w; ++xx) row[xx] += v;
            }
    return nn::make_result(std::move(out), {x, bias}, [n, c, h, w](nn::Node& node) {
        const float* g = node.grad.data();
        if (node.inputs[0]->requires_grad) {
            float* gx = node.inputs[0]->grad_buffer().data();
            for (std::size_t i = 0; i < node.grad.numel(); ++i) gx[i] += g[i];
        }
        if (node.inputs[1]->requires_grad) {
            float* gb = node.inputs[1]->grad_buffer().data();
            for (int i = 0; i < n; ++i)
                for (int ch = 0; ch < c; ++ch)
                    for (int y = 0; y < h; ++y) {
                        const float* row = g + ((static_cast<std::size_t>(i) * c + ch) * h + y) * w;
                        float acc        = 0.0f;
                        for (int xx = 0; xx < w; ++xx) acc += row[xx];
                        gb[static_cast<std::size_t>(ch) * h + y] += acc;
                    }
        }
    });
}

Stage1Model::Stage1Model(const Stage1Config& config) : config_(config) {
    config_.validate();
    Rng rng         = make_rng({config_.seed, hash_string("stage1-init")});
    const auto& c   = config_;
    const int fh    = c.input_height / 2;
    const int depth_out = (c.shared_depth ? 1 : c.feature_channels) * c.depth_bins;
    grid_ = bev::PolarGridSpec::with_defaults(c.depth_bins, c.bev_size);

    stem_      = nn::Conv2d(store_, "enc.stem", 3, c.stem_channels, 3, rng, 1, true);
    stem_norm_ = nn::GroupNorm(store_, "enc.stem_norm", c.stem_channels, c.norm_groups);
    down_      = nn::Conv2d(store_, "enc.down", c.stem_channels, c.feature_channels, 3, rng, 2, true);
    down_norm_ = nn::GroupNorm(store_, "enc.down_norm", c.feature_channels, c.norm_groups);
    res1_      = nn::Conv2d(store_, "enc.res1", c.feature_channels, c.feature_channels, 3, rng, 1, true);
    res1_norm_ = nn::GroupNorm(store_, "enc.res1_norm", c.feature_channels, c.norm_groups);
    res2_      = nn::Conv2d(store_, "enc.res2", c.feature_channels, c.feature_channels, 3, rng, 1, true);
    res2_norm_ = nn::GroupNorm(store_, "enc.res2_norm", c.feature_channels, c.norm_groups);
    depth_     = nn::Conv2d(store_, "bev.depth", c.feature_channels, depth_out, 1, rng);
    row_bias_  = store_.add("bev.row_bias", Tensor({1, depth_out, fh, 1}));

    dec_in_      = nn::Conv2d(store_, "dec.in", c.feature_channels, c.decoder_channels_k, 3, rng);
    dec_in_norm_ = nn::GroupNorm(store_, "dec.in_norm", c.decoder_channels_k, c.norm_groups);
    dec_r1_      = nn::Conv2d(store_, "dec.r1", c.decoder_channels_k, c.decoder_channels_k, 3, rng);
    dec_r1_norm_ = nn::GroupNorm(store_, "dec.r1_norm", c.decoder_channels_k, c.norm_groups);
    dec_r2_      = nn::Conv2d(store_, "dec.r2", c.decoder_channels_k, c.decoder_channels_k, 3, rng);
    dec_r2_norm_ = nn::GroupNorm(store_, "dec.r2_norm", c.decoder_channels_k, c.norm_groups);
    dec_2k_      = nn::Conv2d(store_, "dec.up2", c.decoder_channels_k, c.decoder_channels_2k, 3, rng);
    dec_2k_norm_ = nn::GroupNorm(store_, "dec.up2_norm", c.decoder_channels_2k, c.norm_groups);
    dec_4k_      = nn::Conv2d(store_, "dec.up4", c.decoder_channels_2k, c.decoder_channels_4k, 3, rng);
    dec_4k_norm_ = nn::GroupNorm(store_, "dec.up4_norm", c.decoder_channels_4k, c.norm_groups);
    side_k_  = nn::Conv2d(store_, "dec.side_k", c.decoder_channels_k, kNumClasses, 1, rng);
    side_2k_ = nn::Conv2d(store_, "dec.side_2k", c.decoder_channels_2k, kNumClasses, 1, rng);
    head_    = nn::Conv2d(store_, "dec.head", 2 * kNumClasses + c.decoder_channels_4k, kNumClasses, 1, rng);
}

Var Stage1Model::encode(const Var& x, double fov_degrees) const {
    const auto& c = config_;
    if (x.shape().size() != 4 || x.dim(1) != 3 || x.dim(2) != c.input_height || x.dim(3) != c.input_width) {
        throw ShapeError("stage1 input must be [N, 3, " + std::to_string(c.input_height) + ", " +
                         std::to_string(c.input_width) + "], got " + shape_string(x.shape()));
    }
    const bool limited = fov_degrees < 360.0;
    Var h              = limited ? bev::apply_fov_mask(x, bev::FovMask::centered(c.input_width, fov_degrees)) : x;
    h                  = nn::silu(stem_norm_(stem_(h)));
    h                  = nn::silu(down_norm_(down_(h)));
    Var r              = nn::silu(res1_norm_(res1_(h)));
    r                  = res2_norm_(res2_(r));
    Var f_g            = nn::silu(nn::add(h, r));
    if (limited) f_g = bev::apply_fov_mask(f_g, bev::FovMask::centered(f_g.dim(3), fov_degrees));
    const Var logits = add_row_bias(depth_(f_g), row_bias_);
    const Var polar  = bev::project_polar(f_g, logits, c.depth_bins, c.shared_depth);
    return bev::resample_cartesian(polar, grid_);
}

Var Stage1Model::decode(const Var& f_bev) const {
    const auto& c = config_;
    if (f_bev.shape() .size() != 4 || f_bev.dim(1) != c.feature_channels || f_bev.dim(2) != c.bev_size ||
        f_bev.dim(3) != c.bev_size) {
        throw ShapeError("stage1 decoder expects [N, c, k, k], got " + shape_string(f_bev.shape()));
    }
    const int s = c.layout_size;
    Var a       = nn::silu(dec_in_norm_(dec_in_(f_bev)));
    Var r       = nn::silu(dec_r1_norm_(dec_r1_(a)));
    r           = dec_r2_norm_(dec_r2_(r));
    a           = nn::silu(nn::add(a, r));
    Var b = nn::silu(dec_2k_norm_(dec_2k_(nn::upsample_bilinear(a, 2 * c.bev_size, 2 * c.bev_size))));
    Var d = nn::silu(dec_4k_norm_(dec_4k_(nn::upsample_bilinear(b, s, s))));
    // Coarse scales are reduced to class maps before upsampling.
    Var cat = nn::concat_channels(
        {nn::upsample_bilinear(side_k_(a), s, s), nn::upsample_bilinear(side_2k_(b), s, s), d});
    return nn::softmax_channels(head_(cat));
}

Var Stage1Model::forward(const Var& x, double fov_degrees) const { return decode(encode(x, fov_degrees)); }

Tensor Stage1Model::preprocess(const Image& ground) const {
    if (ground.channels != 3) throw ShapeError("ground panorama must be RGB");
    const Image small = resize(ground, config_.input_height, config_.input_width);
    return Tensor({3, config_.input_height, config_.input_width}, small.data);
}

}  // namespace aerialgen::stage1
