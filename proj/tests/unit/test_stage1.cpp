#include <doctest.h>

#include <cmath>
#include <algorithm>
#include <filesystem>
#include <numeric>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/random.hpp"
#include "aerialgen/forge/synthetic.hpp"
#include "aerialgen/nn/ops.hpp"
#include "aerialgen/stage1/loss.hpp"
#include "aerialgen/stage1/metrics.hpp"
#include "aerialgen/stage1/model.hpp"
#include "aerialgen/stage1/train.hpp"
#include "gradcheck.hpp"

using namespace aerialgen;
using namespace aerialgen::stage1;
using nn::Var;

namespace {

Stage1Config tiny_config() {
    Stage1Config c;
    c.input_height        = 16;
    c.input_width         = 32;
    c.stem_channels       = 4;
    c.feature_channels    = 4;
    c.depth_bins          = 6;
    c.bev_size            = 4;
    c.decoder_channels_k  = 4;
    c.decoder_channels_2k = 4;
    c.decoder_channels_4k = 4;
    c.layout_size         = 16;
    c.norm_groups         = 2;
    c.batch_size          = 2;
    c.steps               = 5;
    return c;
}

LayoutMap layout_from(int h, int w, std::initializer_list<int> values) {
    LayoutMap l(h, w);
    std::size_t i = 0;
    for (int v : values) l.classes[i++] = static_cast<std::uint8_t>(v);
    return l;
}

std::vector<Stage1Example> tiny_examples(const Stage1Config& cfg, int n) {
    auto city = forge::SyntheticCityConfig::preset("SyntheticA", 3, n);
    city.layout_size = 64;
    city.panorama_height = 64;
    return make_examples(forge::generate_synthetic_city(city, 1), cfg);
}

double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - n[i]) * (a[i] - n[i]);
        den += n[i] * n[i];
    }
    return std::sqrt(num / std::max(den, 1e-30));
}

}  // namespace

TEST_CASE("dice loss reference values") {
    SUBCASE("perfect prediction") {
        const auto t = layout_from(2, 2, {0, 1, 7, 7});
        const Tensor oh = one_hot_batch({&t});
        CHECK(dice_loss(Var(oh), oh).value()[0] <= 1e-6);
    }
    SUBCASE("disjoint large masks") {
        LayoutMap t(64, 64, LayoutClass::road);
        LayoutMap p(64, 64, LayoutClass::building);
        CHECK(dice_loss(Var(one_hot_batch({&p})), one_hot_batch({&t})).value()[0] >= 1.0 - 1e-3);
    }
    SUBCASE("half overlap") {
        // class 0 target {0,1}, predicted {0,2}; class 7 target {2,3}, predicted {1,3}
        LayoutMap t(64, 64), p(64, 64);
        for (int y = 0; y < 64; ++y)
            for (int x = 0; x < 64; ++x) {
                const int q = x / 16;
                t.at(y, x)  = q < 2 ? 0 : 7;
                p.at(y, x)  = (q == 0 || q == 2) ? 0 : 7;
            }
        CHECK(dice_loss(Var(one_hot_batch({&p})), one_hot_batch({&t}), 1e-9).value()[0] == doctest::Approx(0.5).epsilon(1e-6));
    }
    SUBCASE("bounds for random probabilities") {
        Rng rng(5);
        for (int r = 0; r < 20; ++r) {
            Var logits(Tensor::randn({2, 8, 6, 6}, rng, 3.0f));
            LayoutMap t(6, 6);
            for (auto& c : t.classes) c = static_cast<std::uint8_t>(rng() % 8);
            const double l = dice_loss(nn::softmax_channels(logits), one_hot_batch({&t, &t})).value()[0];
            CHECK(l >= 0.0);
            CHECK(l <= 1.0);
        }
    }
    LayoutMap a(4, 4), b(5, 5);
    CHECK_THROWS_AS(dice_loss(Var(one_hot_batch({&a})), one_hot_batch({&b})), ShapeError);
}

TEST_CASE("dice loss gradient matches finite differences") {
    LayoutMap t(3, 3);
    for (std::size_t i = 0; i < t.classes.size(); ++i) t.classes[i] = static_cast<std::uint8_t>((i * 3) % 8);
    const Tensor oh = one_hot_batch({&t});
    Rng rng(9);
    testing_support::check_gradients([&](const std::vector<Var>& v) { return dice_loss(v[0], oh); },
                                     {Tensor::uniform({1, 8, 3, 3}, rng, 0.05f, 1.0f)}, 1e-2, 1e-3f);
}

TEST_CASE("segmentation metrics") {
    const auto t = layout_from(4, 4, {0, 0, 1, 1, 0, 0, 1, 1, 6, 6, 7, 7, 6, 6, 7, 7});
    const auto perfect = segmentation_metrics(t, t);
    CHECK(perfect.avg_f1 == 1.0);
    CHECK(perfect.miou == 1.0);
    // Constant prediction of class 0: IoU_0 = 4/16, the other three present classes score 0.
    const auto constant = segmentation_metrics(t, LayoutMap(4, 4, LayoutClass::building));
    CHECK(constant.miou == doctest::Approx(0.25 / 4));
    CHECK(constant.per_class_f1[0] == doctest::Approx(2.0 * 4 / (2 * 4 + 12)));
    CHECK(constant.avg_f1 == doctest::Approx(0.4 / 4));
    CHECK_FALSE(constant.present[3]);
}

TEST_CASE("decoder outputs normalized probabilities of the layout size") {
    const auto cfg = tiny_config();
    Stage1Model m(cfg);
    Rng rng(3);
    Var bev(Tensor::randn({2, cfg.feature_channels, cfg.bev_size, cfg.bev_size}, rng));
    const Var p = m.decode(bev);
    CHECK(p.shape() == Shape{2, 8, cfg.layout_size, cfg.layout_size});
    const std::size_t plane = static_cast<std::size_t>(cfg.layout_size) * cfg.layout_size;
    for (int n = 0; n < 2; ++n)
        for (std::size_t x = 0; x < plane; ++x) {
            double s = 0;
            for (int c = 0; c < 8; ++c) s += p.value()[(static_cast<std::size_t>(n) * 8 + c) * plane + x];
            REQUIRE(std::abs(s - 1.0) <= 1e-5);
        }
    CHECK(m.decode(bev).value().storage() == p.value().storage());
    CHECK_THROWS_AS(m.decode(Var(Tensor({1, 3, 4, 4}))), ShapeError);
}

TEST_CASE("gradient through dice, decoder, resampling and projection") {
    auto cfg = tiny_config();
    Stage1Model m(cfg);
    Rng rng(11);
    const Var x(Tensor::uniform({2, 3, cfg.input_height, cfg.input_width}, rng, 0.0f, 1.0f));
    LayoutMap t1(cfg.layout_size, cfg.layout_size), t2(cfg.layout_size, cfg.layout_size);
    for (auto& c : t1.classes) c = static_cast<std::uint8_t>(rng() % 8);
    for (auto& c : t2.classes) c = static_cast<std::uint8_t>(rng() % 3);
    const Tensor oh = one_hot_batch({&t1, &t2});

    auto loss_value = [&] {
        nn::NoGradGuard g;
        return static_cast<double>(dice_loss(m.forward(x), oh).value()[0]);
    };
    m.params().zero_grad();
    dice_loss(m.forward(x), oh).backward();
    for (const char* name : {"bev.row_bias", "bev.depth.weight", "enc.res1.weight", "dec.head.weight"}) {
        Var p = m.params().at(name);
        std::vector<double> analytic, numeric;
        // The largest analytic entries keep float32 round-off small relative to the signal.
        std::vector<std::size_t> idx(p.value().numel());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return std::abs(p.grad()[a]) > std::abs(p.grad()[b]); });
        idx.resize(std::min<std::size_t>(idx.size(), 10));
        for (std::size_t i : idx) {
            const float orig = p.value()[i];
            const float h    = 1e-2f;
            p.mutable_value()[i] = orig + h;
            const double lp      = loss_value();
            p.mutable_value()[i] = orig - h;
            const double lm      = loss_value();
            p.mutable_value()[i] = orig;
            numeric.push_back((lp - lm) / (2.0 * h));
            analytic.push_back(p.grad()[i]);
        }
        INFO(std::string(name));
        CHECK(relative_error(analytic, numeric) <= 1e-2);
    }
}

TEST_CASE("argmax invariant under positive logit scaling") {
    Rng rng(4);
    Var logits(Tensor::randn({1, 8, 5, 5}, rng));
    const Var a = nn::softmax_channels(logits);
    const Var b = nn::softmax_channels(nn::scale(logits, 3.5f));
    for (int x = 0; x < 25; ++x) {
        int ia = 0, ib = 0;
        for (int c = 1; c < 8; ++c) {
            if (a.value()[c * 25 + x] > a.value()[ia * 25 + x]) ia = c;
            if (b.value()[c * 25 + x] > b.value()[ib * 25 + x]) ib = c;
        }
        CHECK(ia == ib);
    }
}

TEST_CASE("augmentation rotates panorama and layout consistently") {
    auto city            = forge::SyntheticCityConfig::preset("SyntheticB", 2, 3);
    city.layout_size     = 64;
    city.panorama_height = 64;
    Stage1Config cfg     = tiny_config();
    cfg.input_height     = 64;
    cfg.input_width      = 128;
    cfg.layout_size      = 64;
    cfg.bev_size         = 16;
    for (const auto& s : forge::generate_synthetic_city(city, 1)) {
        const auto e = make_examples({s}, cfg)[0];
        for (int turns = 0; turns < 4; ++turns) {
            for (bool mirror : {false, true}) {
                const auto a = augment(e, turns, mirror);
                // Re-render the transformed layout and compare the ground half.
                forge::PanoramaSpec spec;
                spec.height      = 64;
                const auto again = make_examples({forge::Sample{"", "", 0, {}, a.target, {}, forge::render_ground_panorama(a.target, spec), ""}}, cfg)[0];
                int agree = 0, total = 0;
                for (int c = 0; c < 3; ++c)
                    for (int y = 40; y < 64; ++y)
                        for (int u = 0; u < 128; ++u) {
                            const float p = a.input[(static_cast<std::size_t>(c) * 64 + y) * 128 + u];
                            const float q = again.input[(static_cast<std::size_t>(c) * 64 + y) * 128 + u];
                            agree += std::abs(p - q) < 0.05f;
                            ++total;
                        }
                INFO("turns " << turns << " mirror " << mirror);
                CHECK(static_cast<double>(agree) / total > 0.9);
            }
        }
    }
}

TEST_CASE("training is deterministic, learns, and freezes at lr 0") {
    auto cfg     = tiny_config();
    cfg.steps    = 6;
    const auto d = tiny_examples(cfg, 6);
    Stage1Model a(cfg), b(cfg);
    const auto ra = train_stage1(a, d);
    const auto rb = train_stage1(b, d);
    CHECK(ra.loss_curve == rb.loss_curve);
    CHECK(a.params().fingerprint() == b.params().fingerprint());

    cfg.learning_rate = 0.0;
    cfg.augment       = false;
    cfg.batch_size    = 6;
    Stage1Model z(cfg);
    const auto before = z.params().fingerprint();
    const auto rz     = train_stage1(z, d);
    CHECK(z.params().fingerprint() == before);
    for (double l : rz.loss_curve) CHECK(l == rz.loss_curve.front());

    CHECK_THROWS_AS(train_stage1(z, {}), ConfigError);
}

TEST_CASE("checkpoint round trip keeps predictions") {
    auto cfg     = tiny_config();
    const auto d = tiny_examples(cfg, 3);
    Stage1Model m(cfg);
    train_stage1(m, d);
    const auto dir = std::filesystem::temp_directory_path() / "aerialgen_test_s1";
    std::filesystem::create_directories(dir);
    save_checkpoint(m, dir / "m.ckpt", 5);
    const auto back = load_checkpoint(dir / "m.ckpt");
    CHECK(back->params().fingerprint() == m.params().fingerprint());
    std::vector<const Tensor*> xs{&d[0].input, &d[1].input};
    CHECK(predict_layouts(*back, xs)[1] == predict_layouts(m, xs)[1]);
    const auto met = evaluate_stage1(*back, d, 90.0);
    CHECK(met.miou >= 0.0);
    CHECK(met.miou <= 1.0);
    CHECK_THROWS_AS(evaluate_stage1(*back, {}), ConfigError);
    CHECK_THROWS_AS(load_checkpoint(dir / "nothing.ckpt"), IoError);
}
