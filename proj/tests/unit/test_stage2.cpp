#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/random.hpp"
#include "aerialgen/forge/synthetic.hpp"
#include "aerialgen/prompt/prompt.hpp"
#include "aerialgen/stage2/model.hpp"
#include "aerialgen/stage2/schedule.hpp"
#include "aerialgen/stage2/train.hpp"

using namespace aerialgen;
using namespace aerialgen::stage2;
using nn::Var;

namespace {

Stage2Config tiny_config() {
    Stage2Config c;
    c.image_size      = 16;
    c.channels        = {8, 8, 8};
    c.emb_dim         = 16;
    c.text_dim        = 16;
    c.norm_groups     = 4;
    c.diffusion_steps = 100;
    c.sample_steps    = 10;
    c.batch_size      = 4;
    c.steps           = 5;
    c.prompt_mode     = "constant";
    return c;
}

std::vector<Stage2Example> tiny_examples(int n, int size) {
    auto city = forge::SyntheticCityConfig::preset("SyntheticA", 3, n);
    std::vector<Stage2Example> out;
    for (int i = 0; i < n; ++i) {
        const auto s = forge::generate_sample(city, i);
        out.push_back({s.id, aerial_tensor(s.aerial, size), downsample_layout(s.layout, size),
                       std::string(prompt::kConstantPrompt)});
    }
    return out;
}

Tensor as_batch(const Tensor& t) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    return Tensor(s, std::vector<float>(t.values().begin(), t.values().end()));
}

double variance(const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double s       = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / (v.size() - 1);
}

}  // namespace

TEST_CASE("noise schedule shape") {
    const auto s = NoiseSchedule::linear();
    REQUIRE(s.steps() == 1000);
    CHECK(s.alpha_bars[0] == doctest::Approx(1.0 - 1e-4).epsilon(1e-12));
    CHECK(s.alpha_bars.back() <= 1e-3);
    for (int t = 0; t < s.steps(); ++t) {
        CHECK(s.betas[t] > 0.0);
        CHECK(s.betas[t] < 1.0);
        if (t > 0) CHECK(s.alpha_bars[t] < s.alpha_bars[t - 1]);
    }
    CHECK_THROWS_AS(NoiseSchedule::linear(0), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule::linear(10, 0.1, 0.01), ConfigError);
    const auto ts = sampling_timesteps(s, 50);
    CHECK(ts.front() == 0);
    CHECK(ts.back() == 999);
    for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] > ts[i - 1]);
}

TEST_CASE("add_noise boundaries") {
    const auto s = NoiseSchedule::linear();
    Rng rng(3);
    const Tensor z0  = Tensor::uniform({1, 10000}, rng, -1.0f, 1.0f);
    const Tensor eps = Tensor::randn({1, 10000}, rng);

    const Tensor z_first = add_noise(z0, {0}, eps, s);
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < z0.numel(); ++i) {
        diff += (z_first[i] - z0[i]) * (z_first[i] - z0[i]);
        norm += z0[i] * z0[i];
    }
    CHECK(std::sqrt(diff / norm) <= 0.02);

    const Tensor z_last = add_noise(z0, {999}, eps, s);
    double sxy = 0, sxx = 0, syy = 0, mx = 0, my = 0;
    const double n = static_cast<double>(z0.numel());
    for (std::size_t i = 0; i < z0.numel(); ++i) {
        mx += z_last[i] / n;
        my += eps[i] / n;
    }
    for (std::size_t i = 0; i < z0.numel(); ++i) {
        sxy += (z_last[i] - mx) * (eps[i] - my);
        sxx += (z_last[i] - mx) * (z_last[i] - mx);
        syy += (eps[i] - my) * (eps[i] - my);
    }
    CHECK(sxy / std::sqrt(sxx * syy) >= 0.99);

    CHECK_THROWS_AS(add_noise(z0, {1000}, eps, s), ConfigError);
    CHECK_THROWS_AS(add_noise(z0, {-1}, eps, s), ConfigError);
    CHECK_THROWS_AS(add_noise(z0, {0, 1}, eps, s), ShapeError);
}

TEST_CASE("forward marginal variance matches the closed form") {
    const auto s = NoiseSchedule::linear();
    Rng rng(11);
    std::normal_distribution<double> data(0.3, 0.5);
    for (int t : {0, 500, 999}) {
        std::vector<double> zt;
        for (int i = 0; i < 10000; ++i) {
            const Tensor z0({1, 1}, {static_cast<float>(data(rng))});
            const Tensor eps = Tensor::randn({1, 1}, rng);
            zt.push_back(add_noise(z0, {t}, eps, s)[0]);
        }
        const double abar     = s.alpha_bars[t];
        const double expected = abar * 0.25 + (1.0 - abar);
        CHECK(std::abs(variance(zt) - expected) <= 0.05 * expected);
    }
}

TEST_CASE("denoise loss reference values") {
    const auto s = NoiseSchedule::linear();
    Rng rng(5);
    const Tensor z0 = Tensor::uniform({16, 3, 16, 16}, rng, -1.0f, 1.0f);
    const auto b    = draw_noised_batch(z0, s, rng);

    const double zero = denoise_loss(Var(Tensor(z0.shape())), b.eps).value()[0];
    CHECK(zero == doctest::Approx(1.0).epsilon(0.05));
    CHECK(denoise_loss(Var(b.eps), b.eps).value()[0] == 0.0);

    // Recovering eps from z_t and z0 only loses float rounding.
    Tensor recovered(z0.shape());
    const std::size_t per = z0.numel() / 16;
    for (std::size_t i = 0; i < z0.numel(); ++i) {
        const double abar = s.alpha_bars[static_cast<std::size_t>(b.t[i / per])];
        recovered[i]      = static_cast<float>((b.z_t[i] - std::sqrt(abar) * z0[i]) / std::sqrt(1.0 - abar));
    }
    CHECK(denoise_loss(Var(recovered), b.eps).value()[0] < 1e-6);
}

TEST_CASE("zero-initialized adapter leaves the backbone output unchanged") {
    const Stage2Model model(tiny_config());
    Rng rng(21);
    const auto ex = tiny_examples(4, 16);
    for (int i = 0; i < 20; ++i) {
        const Tensor z    = Tensor::randn({1, 3, 16, 16}, rng);
        const Tensor text = Tensor::randn({1, 16}, rng);
        const Tensor cond = layout_condition(ex[static_cast<std::size_t>(i % 4)].layout);
        const int t       = static_cast<int>(rng() % 100);
        nn::NoGradGuard guard;
        const Tensor a = model.forward(Var(z), {t}, Var(text), Var(as_batch(cond))).value();
        const Tensor b = model.forward(Var(z), {t}, Var(text)).value();
        REQUIRE(a.numel() == b.numel());
        bool same = true;
        for (std::size_t j = 0; j < a.numel(); ++j) same = same && a[j] == b[j];
        CHECK(same);
    }
}

TEST_CASE("frozen adapter makes layout dropout irrelevant") {
    auto cfg           = tiny_config();
    cfg.freeze_adapter = true;
    cfg.steps          = 6;
    const auto ex      = tiny_examples(8, 16);

    cfg.layout_dropout = 0.0;
    Stage2Model a(cfg);
    const auto ra = train_stage2(a, ex, {.log_every = 0});
    cfg.layout_dropout = 1.0;
    Stage2Model b(cfg);
    const auto rb = train_stage2(b, ex, {.log_every = 0});
    CHECK(ra.loss_curve == rb.loss_curve);
    CHECK(a.params().fingerprint() == b.params().fingerprint());
    CHECK(a.params().at("adapter.zero0.weight").value().values()[0] == 0.0f);
}

TEST_CASE("trained adapter responds to the layout") {
    auto cfg      = tiny_config();
    cfg.steps     = 10;
    const auto ex = tiny_examples(8, 16);
    Stage2Model m(cfg);
    train_stage2(m, ex, {.log_every = 0});
    Rng rng(2);
    const Tensor z = Tensor::randn({1, 3, 16, 16}, rng);
    nn::NoGradGuard guard;
    const Tensor text({1, 16});
    const Tensor cond = as_batch(layout_condition(ex[0].layout));
    const Tensor a = m.forward(Var(z), {50}, Var(text), Var(cond)).value();
    const Tensor b = m.forward(Var(z), {50}, Var(text)).value();
    double diff    = 0.0;
    for (std::size_t j = 0; j < a.numel(); ++j) diff += std::abs(a[j] - b[j]);
    CHECK(diff > 0.0);
}

TEST_CASE("training is seeded and reduces the loss") {
    auto cfg      = tiny_config();
    cfg.steps     = 300;
    cfg.batch_size = 8;
    cfg.learning_rate = 2e-3;
    const auto ex = tiny_examples(64, 16);
    Stage2Model m(cfg);
    const auto r = train_stage2(m, ex, {.log_every = 0});
    const double first = std::accumulate(r.loss_curve.begin(), r.loss_curve.begin() + 20, 0.0) / 20;
    const double last  = std::accumulate(r.loss_curve.end() - 20, r.loss_curve.end(), 0.0) / 20;
    CHECK(last <= 0.7 * first);

    cfg.steps = 4;
    Stage2Model p(cfg), q(cfg);
    CHECK(train_stage2(p, ex, {.log_every = 0}).loss_curve == train_stage2(q, ex, {.log_every = 0}).loss_curve);
    CHECK(p.params().fingerprint() == q.params().fingerprint());
    CHECK_THROWS_AS(train_stage2(p, {}, {}), ConfigError);
}

TEST_CASE("sampling is deterministic per seed") {
    const Stage2Model m(tiny_config());
    const auto ex = tiny_examples(2, 16);
    SynthesisRequest req{ex[0].layout, "a street", 7};
    const Image a = sample(m, req);
    const Image b = sample(m, req);
    CHECK(a.height == 16);
    CHECK(a.width == 16);
    CHECK(a.channels == 3);
    CHECK(a.data == b.data);
    for (float v : a.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    req.seed = 8;
    CHECK(sample(m, req).data != a.data);

    // Batched requests reproduce their single-request results.
    SynthesisRequest other{ex[1].layout, "a park", 3};
    const auto batch = sample_batch(m, {SynthesisRequest{ex[0].layout, "a street", 7}, other});
    CHECK(batch[0].data == a.data);
}

TEST_CASE("sampling aborts on non-finite values") {
    Stage2Model m(tiny_config());
    Var w = m.params().at("unet.out.bias");
    w.mutable_value()[0] = std::nanf("");
    const auto ex = tiny_examples(1, 16);
    CHECK_THROWS_AS(sample(m, {ex[0].layout, "x", 1}), NumericError);
}

TEST_CASE("stage2 checkpoint round trip") {
    auto cfg = tiny_config();
    Stage2Model m(cfg);
    train_stage2(m, tiny_examples(4, 16), {.log_every = 0});
    const auto path = std::filesystem::temp_directory_path() / "aerialgen_test_stage2.ckpt";
    save_checkpoint(m, path, cfg.steps);
    const auto loaded = load_checkpoint(path);
    CHECK(loaded->params().fingerprint() == m.params().fingerprint());
    const auto ex = tiny_examples(1, 16);
    CHECK(sample(*loaded, {ex[0].layout, "p", 4}).data == sample(m, {ex[0].layout, "p", 4}).data);
    std::filesystem::remove(path);
    std::filesystem::remove(path.string() + ".json");
}

TEST_CASE("layout helpers") {
    LayoutMap l(4, 4);
    l.at(0, 0) = class_index(LayoutClass::road);
    l.at(0, 1) = class_index(LayoutClass::road);
    l.at(1, 0) = class_index(LayoutClass::road);
    l.at(2, 2) = class_index(LayoutClass::water);
    const auto d = downsample_layout(l, 2);
    CHECK(d.at(0, 0) == class_index(LayoutClass::road));
    CHECK(d.at(1, 1) == class_index(LayoutClass::others));

    const Tensor c = layout_condition(l);
    CHECK(c[0] == doctest::Approx(0x1A / 127.5 - 1.0));

    // Augmentation moves the aerial and the layout together.
    const auto ex = tiny_examples(1, 16);
    Stage2Example painted{ex[0].id, layout_condition(ex[0].layout), ex[0].layout, ""};
    for (int turns = 0; turns < 4; ++turns) {
        for (bool mirror : {false, true}) {
            const auto a = augment(painted, turns, mirror);
            CHECK(a.aerial.values().size() == layout_condition(a.layout).values().size());
            const Tensor expect = layout_condition(a.layout);
            bool same = true;
            for (std::size_t i = 0; i < expect.numel(); ++i) same = same && expect[i] == a.aerial[i];
            CHECK(same);
            CHECK(a.layout.histogram() == ex[0].layout.histogram());
        }
    }
}

TEST_CASE("prompt modes") {
    const prompt::HashedTrigramEmbedder emb;
    CHECK(build_prompt("constant", "Paris", "", emb) == prompt::kConstantPrompt);
    CHECK_THROWS_AS(build_prompt("raw", "Paris", "", emb), ConfigError);
    CHECK_THROWS_AS(build_prompt("dynamic", "Paris", "", emb), ConfigError);
    CHECK(build_prompt("raw", "Paris", "Two roads.", emb) != build_prompt("constant", "Paris", "Two roads.", emb));
    const auto dyn = build_prompt("dynamic", "Paris", "A wide road crosses dense residential buildings.", emb);
    CHECK(dyn.find("Paris") != std::string::npos);
}

TEST_CASE("identity codec is exact and the learned codec learns") {
    Rng rng(9);
    const Tensor x = Tensor::uniform({2, 3, 16, 16}, rng, -1.0f, 1.0f);
    const IdentityCodec id;
    CHECK(id.decode(id.encode(x)).values().size() == x.numel());
    CHECK(std::isinf(tensor_psnr(id.decode(id.encode(x)), x)));

    auto ex = tiny_examples(16, 32);
    std::vector<Tensor> imgs;
    for (const auto& e : ex) imgs.push_back(e.aerial);
    LearnedCodec codec(4, 16, 1);
    auto batch_of = [&](std::size_t i) { return as_batch(imgs[i]); };
    const double before = tensor_psnr(codec.decode(codec.encode(batch_of(0))), batch_of(0));
    const auto curve    = codec.train(imgs, {.steps = 150, .batch_size = 4});
    const double after  = tensor_psnr(codec.decode(codec.encode(batch_of(0))), batch_of(0));
    CHECK(curve.back() < curve.front());
    CHECK(after > before + 3.0);
    CHECK(codec.encode(batch_of(0)).shape() == Shape{1, 4, 8, 8});
}
