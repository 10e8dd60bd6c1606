#include <cmath>

#include "aerialgen/core/error.hpp"
#include "aerialgen/nn/layers.hpp"
#include "aerialgen/nn/ops.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace aerialgen;
using namespace aerialgen::nn;
using testing_support::check_gradients;
using testing_support::random_tensor;

TEST_CASE("elementwise gradients") {
    const Tensor a = random_tensor({2, 3, 2}, 1);
    const Tensor b = random_tensor({2, 3, 2}, 2);
    check_gradients([](const auto& v) { return add(v[0], v[1]); }, {a, b});
    check_gradients([](const auto& v) { return sub(v[0], v[1]); }, {a, b});
    check_gradients([](const auto& v) { return mul(v[0], v[1]); }, {a, b});
    check_gradients([](const auto& v) { return scale(v[0], -1.7f); }, {a});
    check_gradients([](const auto& v) { return add_scalar(square(v[0]), 0.3f); }, {a});
    check_gradients([](const auto& v) { return silu(v[0]); }, {a});
    check_gradients([](const auto& v) { return sigmoid(v[0]); }, {a});
}

TEST_CASE("broadcast, shape and reduction gradients") {
    const Tensor x  = random_tensor({2, 3, 2, 2}, 3);
    const Tensor v  = random_tensor({2, 3}, 4);
    const Tensor s  = random_tensor({2, 3}, 5);
    const Tensor x2 = random_tensor({2, 2, 2, 2}, 6);
    check_gradients([](const auto& in) { return add_channel_vector(in[0], in[1]); }, {x, v});
    check_gradients([](const auto& in) { return film(in[0], in[1], in[2]); }, {x, v, s});
    check_gradients([](const auto& in) { return concat_channels({in[0], in[1]}); }, {x, x2});
    check_gradients([](const auto& in) { return slice_channels(in[0], 1, 3); }, {x});
    check_gradients([](const auto& in) { return reshape(in[0], {6, 4}); }, {x});
    check_gradients([](const auto& in) { return mean(square(in[0])); }, {x});
    check_gradients([](const auto& in) { return mse_loss(in[0], in[1]); }, {x, random_tensor({2, 3, 2, 2}, 7)});
}

TEST_CASE("dense gradients") {
    const Tensor x = random_tensor({3, 4}, 8);
    const Tensor w = random_tensor({5, 4}, 9);
    const Tensor b = random_tensor({5}, 10);
    check_gradients([](const auto& in) { return linear(in[0], in[1], in[2]); }, {x, w, b});
    check_gradients([](const auto& in) { return linear(in[0], in[1], Var{}); }, {x, w});
    check_gradients([](const auto& in) { return matmul_nt(in[0], in[1]); }, {x, w});
    check_gradients([](const auto& in) { return l2_normalize_rows(in[0]); }, {x});
}

TEST_CASE("linear forward matches hand computation") {
    Var x(Tensor({1, 2}, {1.0f, 2.0f}));
    Var w(Tensor({2, 2}, {1.0f, 0.0f, 3.0f, -1.0f}));
    Var b(Tensor({2}, {0.5f, 0.25f}));
    const Var y = linear(x, w, b);
    CHECK(y.value()[0] == doctest::Approx(1.5));
    CHECK(y.value()[1] == doctest::Approx(1.25));
}

TEST_CASE("conv2d gradients and forward") {
    const Tensor x = random_tensor({2, 3, 5, 6}, 11);
    const Tensor w = random_tensor({4, 3, 3, 3}, 12, 0.5f);
    const Tensor b = random_tensor({4}, 13);
    check_gradients([](const auto& in) { return conv2d(in[0], in[1], in[2], {1, 1, 1, 1, false}); }, {x, w, b});
    check_gradients([](const auto& in) { return conv2d(in[0], in[1], in[2], {2, 2, 1, 1, false}); }, {x, w, b});
    check_gradients([](const auto& in) { return conv2d(in[0], in[1], in[2], {1, 1, 1, 1, true}); }, {x, w, b});
    const Tensor w1 = random_tensor({4, 3, 1, 1}, 14);
    check_gradients([](const auto& in) { return conv2d(in[0], in[1], in[2]); }, {x, w1, b});

    // Direct loop oracle for a strided, wrapped convolution.
    NoGradGuard guard;
    const Conv2dOptions opt{2, 1, 1, 1, true};
    const Var y = conv2d(Var(x), Var(w), Var(b), opt);
    const int oh = (5 + 2 - 3) / 2 + 1;
    REQUIRE(y.shape() == Shape{2, 4, oh, 6});
    for (int n = 0; n < 2; ++n) {
        for (int o = 0; o < 4; ++o) {
            for (int i = 0; i < oh; ++i) {
                for (int j = 0; j < 6; ++j) {
                    double acc = b[o];
                    for (int c = 0; c < 3; ++c) {
                        for (int ki = 0; ki < 3; ++ki) {
                            for (int kj = 0; kj < 3; ++kj) {
                                const int iy = i * 2 - 1 + ki;
                                const int ix = ((j - 1 + kj) % 6 + 6) % 6;
                                if (iy < 0 || iy >= 5) continue;
                                acc += static_cast<double>(x[((n * 3 + c) * 5 + iy) * 6 + ix]) *
                                       w[((o * 3 + c) * 3 + ki) * 3 + kj];
                            }
                        }
                    }
                    CHECK(y.value()[((n * 4 + o) * oh + i) * 6 + j] == doctest::Approx(acc).epsilon(1e-4));
                }
            }
        }
    }
}

TEST_CASE("spatial op gradients") {
    const Tensor x = random_tensor({2, 4, 4, 6}, 15);
    check_gradients([](const auto& in) { return avg_pool2d(in[0], 2, 3); }, {x});
    check_gradients([](const auto& in) { return upsample_nearest(in[0], 2); }, {x});
    check_gradients([](const auto& in) { return upsample_bilinear(in[0], 7, 9); }, {x});
    check_gradients([](const auto& in) { return upsample_bilinear(in[0], 2, 3); }, {x});
    const Tensor g = random_tensor({4}, 16);
    const Tensor bt = random_tensor({4}, 17);
    check_gradients([](const auto& in) { return group_norm(in[0], 2, in[1], in[2]); }, {x, g, bt}, 3e-2);
    check_gradients([](const auto& in) { return softmax_channels(in[0]); }, {x});
    check_gradients([](const auto& in) { return channel_max(in[0]); }, {random_tensor({1, 3, 2, 2}, 18)});
    const Tensor att = random_tensor({2, 3, 24}, 19);
    check_gradients([](const auto& in) { return attention_pool(in[0], in[1]); }, {x, att});
}

TEST_CASE("bilinear upsample of a constant stays constant") {
    NoGradGuard guard;
    const Var y = upsample_bilinear(Var(Tensor({1, 1, 3, 4}, 2.5f)), 8, 11);
    for (float v : y.value().values()) CHECK(v == doctest::Approx(2.5));
}

TEST_CASE("softmax sums to one over channels") {
    NoGradGuard guard;
    const Var y = softmax_channels(Var(random_tensor({2, 5, 3, 3}, 20, 4.0f)));
    for (int n = 0; n < 2; ++n) {
        for (int p = 0; p < 9; ++p) {
            double s = 0.0;
            for (int c = 0; c < 5; ++c) s += y.value()[(n * 5 + c) * 9 + p];
            CHECK(s == doctest::Approx(1.0));
        }
    }
}

TEST_CASE("shape errors are reported") {
    CHECK_THROWS_AS(add(Var(Tensor({2})), Var(Tensor({3}))), ShapeError);
    CHECK_THROWS_AS(conv2d(Var(Tensor({1, 2, 3, 3})), Var(Tensor({1, 3, 3, 3})), Var{}), ShapeError);
    CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1.0f}), ShapeError);
}

TEST_CASE("adam reduces a quadratic") {
    ParamStore store;
    Var p = store.add("p", Tensor({3}, {3.0f, -2.0f, 1.0f}));
    Adam opt(store, {.learning_rate = 0.1});
    for (int i = 0; i < 300; ++i) {
        Var loss = sum(square(p));
        loss.backward();
        opt.step();
    }
    for (float v : p.value().values()) CHECK(std::abs(v) < 0.05);
}

TEST_CASE("checkpoint round trip preserves parameters and fingerprint") {
    Rng rng(3);
    ParamStore a;
    Conv2d conv(a, "conv", 2, 3, 3, rng);
    Linear lin(a, "lin", 4, 2, rng);
    const auto path = std::filesystem::temp_directory_path() / "aerialgen_ckpt_test.bin";
    a.save(path);

    Rng other(99);
    ParamStore b;
    Conv2d conv_b(b, "conv", 2, 3, 3, other);
    Linear lin_b(b, "lin", 4, 2, other);
    CHECK(a.fingerprint() != b.fingerprint());
    b.load(path);
    CHECK(a.fingerprint() == b.fingerprint());

    ParamStore c;
    Conv2d conv_c(c, "conv", 2, 4, 3, other);
    Linear lin_c(c, "lin", 4, 2, other);
    CHECK_THROWS_AS(c.load(path), IoError);
    std::filesystem::remove(path);
}
