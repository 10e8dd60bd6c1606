#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <numeric>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/random.hpp"
#include "aerialgen/eval/embedder.hpp"
#include "aerialgen/eval/metrics.hpp"
#include "aerialgen/forge/synthetic.hpp"
#include "eval_oracle.hpp"
#include "gradcheck.hpp"

using namespace aerialgen;
using namespace aerialgen::eval;

namespace {

Feature random_unit(Rng& rng, int d) {
    std::normal_distribution<double> n(0.0, 1.0);
    Feature f(static_cast<std::size_t>(d));
    double s = 0.0;
    for (auto& v : f) {
        v = n(rng);
        s += v * v;
    }
    for (auto& v : f) v /= std::sqrt(s);
    return f;
}

// Random orthogonal matrix by Gram-Schmidt.
std::vector<Feature> random_rotation(Rng& rng, int d) {
    std::vector<Feature> q;
    while (static_cast<int>(q.size()) < d) {
        Feature v = random_unit(rng, d);
        for (const auto& u : q) {
            const double p = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
            for (int i = 0; i < d; ++i) v[i] -= p * u[i];
        }
        const double n = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
        if (n < 1e-6) continue;
        for (auto& x : v) x /= n;
        q.push_back(v);
    }
    return q;
}

FeatureSet rotate(const FeatureSet& xs, const std::vector<Feature>& r) {
    FeatureSet out;
    for (const auto& x : xs) {
        Feature y(x.size(), 0.0);
        for (std::size_t i = 0; i < r.size(); ++i) y[i] = std::inner_product(r[i].begin(), r[i].end(), x.begin(), 0.0);
        out.push_back(y);
    }
    return out;
}

Image random_image(Rng& rng, int c, int h, int w) {
    Image img(c, h, w);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : img.data) v = u(rng);
    return img;
}

CvglConfig small_cvgl() {
    CvglConfig c;
    c.ground_height = 16;
    c.ground_width  = 32;
    c.aerial_size   = 16;
    c.channels      = {4, 4, 4};
    c.feature_channels = 4;
    c.attention_maps   = 2;
    c.norm_groups      = 2;
    c.batch_size       = 4;
    c.steps            = 3;
    return c;
}

}  // namespace

TEST_CASE("sim metrics reference values") {
    const Feature e0{1, 0, 0}, e1{0, 1, 0}, m0{-1, 0, 0};
    CHECK(sim_same({e0}, {e0}) == doctest::Approx(0.0));
    CHECK(sim_same({e0}, {m0}) == doctest::Approx(1.0));
    CHECK(sim_same({e0}, {e1}) == doctest::Approx(0.5));
    CHECK(sim_cross({e0, e1}, {e0, e1}) == doctest::Approx(0.0));
    CHECK(sim_cross({e0}, {m0}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(sim_same({e0}, {e0, e1}), ShapeError);
    CHECK_THROWS_AS(sim_same({Feature{2, 0, 0}}, {e0}), NumericError);

    Rng rng(1);
    FeatureSet a, b;
    for (int i = 0; i < 10000; ++i) {
        a.push_back(random_unit(rng, 256));
        b.push_back(random_unit(rng, 256));
    }
    CHECK(std::abs(sim_cross(a, b) - 0.5) <= 0.02);

    // Pairwise identity with (1 - cos) / 2, symmetry and rotation invariance.
    FeatureSet x(a.begin(), a.begin() + 50), y(b.begin(), b.begin() + 50);
    for (std::size_t i = 0; i < 5; ++i) {
        const double cos = std::inner_product(x[i].begin(), x[i].end(), y[i].begin(), 0.0);
        CHECK(sim_same({x[i]}, {y[i]}) == doctest::Approx((1.0 - cos) / 2.0).epsilon(1e-12));
    }
    CHECK(sim_same(x, y) == doctest::Approx(sim_same(y, x)).epsilon(1e-12));
    FeatureSet xs, ys;
    for (int i = 0; i < 20; ++i) {
        xs.push_back(random_unit(rng, 8));
        ys.push_back(random_unit(rng, 8));
    }
    const auto r = random_rotation(rng, 8);
    CHECK(sim_same(rotate(xs, r), rotate(ys, r)) == doctest::Approx(sim_same(xs, ys)).epsilon(1e-9));
}

TEST_CASE("frechet distance closed forms") {
    GaussianStats a{1, {0.0}, {1.0}}, b{1, {3.0}, {1.0}};
    CHECK(std::abs(frechet_distance(a, b) - 9.0) <= 1e-6);

    Rng rng(4);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 5; ++trial) {
        // Random SPD covariances A A^T + 0.1 I.
        auto spd = [&] {
            oracle::Mat m(3, std::vector<double>(3)), s(3, std::vector<double>(3, 0.0));
            for (auto& row : m)
                for (auto& v : row) v = n(rng);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    for (int k = 0; k < 3; ++k) s[i][j] += m[i][k] * m[j][k];
                    if (i == j) s[i][j] += 0.1;
                }
            return s;
        };
        const auto s1 = spd(), s2 = spd();
        const std::vector<double> m1{n(rng), n(rng), n(rng)}, m2{n(rng), n(rng), n(rng)};
        GaussianStats g1{3, m1, {}}, g2{3, m2, {}};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                g1.cov.push_back(s1[i][j]);
                g2.cov.push_back(s2[i][j]);
            }
        CHECK(std::abs(frechet_distance(g1, g2) - oracle::frechet(m1, s1, m2, s2)) <= 1e-5);
    }
}

TEST_CASE("fid on feature sets") {
    Rng rng(8);
    FeatureSet x, y;
    for (int i = 0; i < 300; ++i) {
        x.push_back(random_unit(rng, 8));
        y.push_back(random_unit(rng, 8));
    }
    CHECK(fid_safa(x, x) <= 1e-6);
    CHECK(fid_safa(x, y) >= 0.0);
    const auto r = random_rotation(rng, 8);
    CHECK(fid_safa(rotate(x, r), rotate(y, r)) == doctest::Approx(fid_safa(x, y)).epsilon(1e-6));

    const auto st = gaussian_stats(x);
    CHECK(st.shrinkage == 0.0);  // 300 >= 4 * 8
    for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j) CHECK(std::abs(st.cov[i * 8 + j] - st.cov[j * 8 + i]) <= 1e-12);

    FeatureSet few(x.begin(), x.begin() + 6);
    CHECK_THROWS_AS(gaussian_stats(few, Shrinkage::never), NumericError);
    const auto shrunk = gaussian_stats(few);
    CHECK(shrunk.shrinkage > 0.0);
    CHECK(fid_safa(few, few) <= 1e-6);
}

TEST_CASE("psnr and ssim") {
    Rng rng(2);
    const Image a = random_image(rng, 3, 24, 24);
    CHECK(psnr(a, a) == kPsnrIdentical);
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-12));

    Image flat(3, 16, 16, 0.2f), shifted(3, 16, 16, 0.3f);
    CHECK(psnr(flat, shifted) == doctest::Approx(20.0).epsilon(1e-5));

    const Image b = random_image(rng, 3, 24, 24);
    CHECK(std::abs(ssim(a, b) - oracle::ssim(a, b)) <= 1e-6);
    CHECK_THROWS_AS(psnr(a, Image(3, 8, 8)), ShapeError);
    CHECK_THROWS_AS(ssim(a, Image(3, 8, 8)), ShapeError);
}

TEST_CASE("recall at k") {
    Rng rng(6);
    FeatureSet q;
    for (int i = 0; i < 20; ++i) q.push_back(random_unit(rng, 16));
    std::vector<int> truth(20);
    std::iota(truth.begin(), truth.end(), 0);
    CHECK(recall_at_k(q, q, truth, 1) == 1.0);
    CHECK_THROWS_AS(recall_at_k(q, q, truth, 21), ConfigError);

    // Gallery: for query i, a decoy at distance 0.1 and the true match at 0.2,
    // on a 1-D line with queries far apart.
    FeatureSet qs, gallery;
    std::vector<int> t2;
    for (int i = 0; i < 10; ++i) {
        qs.push_back({100.0 * i});
        gallery.push_back({100.0 * i + 0.1});
        gallery.push_back({100.0 * i - 0.2});
        t2.push_back(2 * i + 1);
    }
    CHECK(recall_at_k(qs, gallery, t2, 1) == 0.0);
    CHECK(recall_at_k(qs, gallery, t2, 5) == 1.0);

    FeatureSet a, b;
    std::vector<int> perm(50);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int i = 0; i < 50; ++i) {
        a.push_back(random_unit(rng, 4));
        b.push_back(random_unit(rng, 4));
    }
    double prev = 0.0;
    for (int k = 1; k <= 50; ++k) {
        const double r = recall_at_k(a, b, perm, k);
        CHECK(r == oracle::recall_sorted(a, b, perm, k));
        CHECK(r >= prev);
        prev = r;
    }
    CHECK(one_percent_k(400) == 4);
    CHECK(one_percent_k(20) == 1);
}

TEST_CASE("soft-margin triplet loss") {
    const nn::Var same(Tensor({3, 2}, {1, 0, 1, 0, 1, 0}), true);
    const nn::Var same2(Tensor({3, 2}, {1, 0, 1, 0, 1, 0}), true);
    CHECK(soft_margin_triplet_loss(same, same2, 10.0).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-6));

    Rng rng(3);
    Tensor gi = Tensor::randn({4, 5}, rng), ai = Tensor::randn({4, 5}, rng);
    auto f = [&](const std::vector<nn::Var>& v) {
        return soft_margin_triplet_loss(nn::l2_normalize_rows(v[0]), nn::l2_normalize_rows(v[1]), 2.0);
    };
    testing_support::check_gradients(f, {gi, ai}, 1e-2, 1e-3f);
}

TEST_CASE("embedder outputs, gate and persistence") {
    const auto cfg = small_cvgl();
    CvglEmbedder m(cfg);
    Rng rng(5);
    const Tensor g = Tensor::uniform({3, 3, 16, 32}, rng, 0.0f, 1.0f);
    const Tensor a = Tensor::uniform({3, 3, 16, 16}, rng, 0.0f, 1.0f);
    nn::NoGradGuard guard;
    for (const auto& e : {m.embed_ground(nn::Var(g)).value(), m.embed_aerial(nn::Var(a)).value()}) {
        CHECK(e.dim(1) == cfg.dim());
        for (int i = 0; i < 3; ++i) {
            double s = 0.0;
            for (int j = 0; j < cfg.dim(); ++j) s += e[i * cfg.dim() + j] * e[i * cfg.dim() + j];
            CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-5));
        }
    }
    CHECK_THROWS_AS(m.embed_ground(nn::Var(a)), ShapeError);
    CHECK_THROWS_AS(m.require_gate(false), ConfigError);
    CHECK_NOTHROW(m.require_gate(true));
    m.heldout_recall = 0.9;
    CHECK_NOTHROW(m.require_gate(false));

    const auto path = std::filesystem::temp_directory_path() / "aerialgen_test_cvgl.ckpt";
    save_embedder(m, path);
    const auto loaded = load_embedder(path);
    CHECK(loaded->fingerprint() == m.fingerprint());
    CHECK(loaded->heldout_recall == 0.9);
    std::filesystem::remove(path);
    std::filesystem::remove(path.string() + ".json");
}

TEST_CASE("cvgl augmentation keeps views aligned") {
    auto city     = forge::SyntheticCityConfig::preset("SyntheticB", 2, 2);
    auto sample   = forge::generate_sample(city, 0);
    const Image a = forge::render_aerial(sample.layout, 1, 0.0);
    CvglPair p{"x", Tensor({3, 64, 128}, resize(sample.ground, 64, 128).data), Tensor({3, 128, 128}, a.data)};
    for (int turns = 0; turns < 4; ++turns) {
        for (bool mirror : {false, true}) {
            const auto q = augment(p, turns, mirror);
            // Re-render the transformed layout recovered from the aerial.
            Image qa(3, 128, 128);
            std::copy(q.aerial.data(), q.aerial.data() + q.aerial.numel(), qa.data.begin());
            const LayoutMap lq = quantize_palette(qa);
            const Image ground = resize(forge::render_ground_panorama(lq), 64, 128);
            int agree = 0, total = 0;
            for (std::size_t i = 0; i < ground.data.size(); ++i, ++total) {
                if (std::abs(ground.data[i] - q.ground[i]) < 0.1f) ++agree;
            }
            CHECK(static_cast<double>(agree) / total > 0.9);
        }
    }
}

TEST_CASE("untrained embedder is near chance and training is seeded") {
    auto city = forge::SyntheticCityConfig::preset("SyntheticC", 4, 40);
    std::vector<CvglPair> pairs;
    const auto cfg = small_cvgl();
    const CvglEmbedder probe(cfg);
    for (int i = 0; i < 40; ++i) {
        const auto s = forge::generate_sample(city, i);
        pairs.push_back({s.id, probe.preprocess_ground(s.ground), probe.preprocess_aerial(s.aerial)});
    }
    const auto r = evaluate_recall(probe, pairs);
    CHECK(r.r1 <= 0.25);
    CHECK(r.r1 <= r.r5);
    CHECK(r.r5 <= r.r10);

    CvglEmbedder a(cfg), b(cfg);
    CHECK(train_cvgl(a, pairs, {.log_every = 0}).loss_curve == train_cvgl(b, pairs, {.log_every = 0}).loss_curve);
    CHECK(a.fingerprint() == b.fingerprint());
}
