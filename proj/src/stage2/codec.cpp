#include "aerialgen/stage2/codec.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/random.hpp"

namespace aerialgen::stage2 {

using nn::Var;

LearnedCodec::LearnedCodec(int latent_channels, int width, std::uint64_t seed) : latent_channels_(latent_channels) {
    if (latent_channels < 1 || width < 1) throw ConfigError("codec channel counts must be positive");
    Rng rng = make_rng({seed, hash_string("codec")});
    e0_     = nn::Conv2d(store_, "enc0", 3, width, 3, rng);
    e1_     = nn::Conv2d(store_, "enc1", width, width, 3, rng, 2);
    e2_     = nn::Conv2d(store_, "enc2", width, width, 3, rng, 2);
    e3_     = nn::Conv2d(store_, "enc3", width, latent_channels, 1, rng);
    d0_     = nn::Conv2d(store_, "dec0", latent_channels, width, 3, rng);
    d1_     = nn::Conv2d(store_, "dec1", width, width, 3, rng);
    d2_     = nn::Conv2d(store_, "dec2", width, width, 3, rng);
    d3_     = nn::Conv2d(store_, "dec3", width, 3, 3, rng);
}

Var LearnedCodec::encode_var(const Var& x) const {
    Var h = nn::silu(e0_(x));
    h     = nn::silu(e1_(h));
    h     = nn::silu(e2_(h));
    return e3_(h);
}

Var LearnedCodec::decode_var(const Var& z) const {
    Var h = nn::silu(d0_(z));
    h     = nn::silu(d1_(nn::upsample_nearest(h, 2)));
    h     = nn::silu(d2_(nn::upsample_nearest(h, 2)));
    return d3_(h);
}

Tensor LearnedCodec::encode(const Tensor& x) const {
    if (x.rank() != 4 || x.dim(1) != 3 || x.dim(2) % 4 || x.dim(3) % 4) {
        throw ShapeError("codec input must be [N, 3, H, W] with H, W divisible by 4");
    }
    nn::NoGradGuard guard;
    Tensor z = encode_var(Var(x)).value();
    for (float& v : z.values()) v /= latent_scale_;
    return z;
}

Tensor LearnedCodec::decode(const Tensor& z) const {
    if (z.rank() != 4 || z.dim(1) != latent_channels_) throw ShapeError("codec latent has the wrong channel count");
    nn::NoGradGuard guard;
    Tensor scaled = z;
    for (float& v : scaled.values()) v *= latent_scale_;
    return decode_var(Var(scaled)).value();
}

std::vector<double> LearnedCodec::train(const std::vector<Tensor>& images, const CodecTrainOptions& options) {
    if (images.empty()) throw ConfigError("codec training needs images");
    nn::Adam adam(store_, {.learning_rate = options.learning_rate, .clip_norm = 1.0});
    Rng rng = make_rng({options.seed, hash_string("codec-train")});
    std::uniform_int_distribution<std::size_t> pick(0, images.size() - 1);
    latent_scale_ = 1.0f;
    std::vector<double> curve;
    const Shape one = images.front().shape();
    for (int step = 0; step < options.steps; ++step) {
        Shape s = one;
        s.insert(s.begin(), options.batch_size);
        Tensor batch(s);
        const std::size_t per = images.front().numel();
        for (int b = 0; b < options.batch_size; ++b) {
            const Tensor& img = images[pick(rng)];
            require_same_shape(img.shape(), one, "codec batch");
            std::copy(img.data(), img.data() + per, batch.data() + static_cast<std::size_t>(b) * per);
        }
        const Var x(batch);
        Var loss = nn::mse_loss(decode_var(encode_var(x)), x);
        const double lv = loss.value()[0];
        if (!std::isfinite(lv)) throw NumericError("codec loss became non-finite at step " + std::to_string(step));
        loss.backward();
        adam.step();
        curve.push_back(lv);
    }
    // Latent scale from the spread of the first (up to) 64 encodings.
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < std::min<std::size_t>(images.size(), 64); ++i) {
        Shape s = one;
        s.insert(s.begin(), 1);
        const auto v  = images[i].values();
        const Tensor z = encode(Tensor(s, std::vector<float>(v.begin(), v.end())));
        for (float v : z.values()) sq += static_cast<double>(v) * v;
        n += z.numel();
    }
    latent_scale_ = static_cast<float>(std::max(1e-3, std::sqrt(sq / static_cast<double>(n))));
    return curve;
}

void LearnedCodec::save(const std::filesystem::path& path) const {
    store_.save(path);
    std::ofstream out(path.string() + ".json");
    if (!out) throw IoError("cannot write codec sidecar");
    out << nlohmann::json{{"kind", "codec"},
                          {"latent_channels", latent_channels_},
                          {"latent_scale", latent_scale_},
                          {"weights_fingerprint", store_.fingerprint()}}
               .dump(1);
}

void LearnedCodec::load(const std::filesystem::path& path) {
    std::ifstream in(path.string() + ".json");
    if (!in) throw IoError("missing codec sidecar " + path.string() + ".json");
    const auto side = nlohmann::json::parse(in);
    if (side.value("latent_channels", 0) != latent_channels_) throw IoError("codec latent channel mismatch");
    store_.load(path);
    latent_scale_ = side.value("latent_scale", 1.0f);
}

double tensor_psnr(const Tensor& a, const Tensor& b) {
    require_same_shape(a.shape(), b.shape(), "tensor_psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double pa = std::clamp((a[i] + 1.0) / 2.0, 0.0, 1.0);
        const double pb = std::clamp((b[i] + 1.0) / 2.0, 0.0, 1.0);
        se += (pa - pb) * (pa - pb);
    }
    const double mse = se / static_cast<double>(a.numel());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

}  // namespace aerialgen::stage2
