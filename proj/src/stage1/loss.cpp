#include "aerialgen/stage1/loss.hpp"

#include "aerialgen/core/error.hpp"

namespace aerialgen::stage1 {

nn::Var dice_loss(const nn::Var& probs, const Tensor& one_hot, double epsilon) {
    require_same_shape(probs.shape(), one_hot.shape(), "dice_loss");
    if (probs.shape().size() != 4) throw ShapeError("dice_loss expects [N, K, H, W]");
    const int n = probs.dim(0), k = probs.dim(1);
    const std::size_t plane = static_cast<std::size_t>(probs.dim(2)) * probs.dim(3);
    const float* p = probs.value().data();
    const float* t = one_hot.data();

    std::vector<double> inter(static_cast<std::size_t>(k)), sp(static_cast<std::size_t>(k)), st(static_cast<std::size_t>(k));
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < k; ++c) {
            const std::size_t off = (static_cast<std::size_t>(i) * k + c) * plane;
            double a = 0, b = 0, s = 0;
            for (std::size_t x = 0; x < plane; ++x) {
                a += static_cast<double>(p[off + x]) * t[off + x];
                b += p[off + x];
                s += t[off + x];
            }
            inter[static_cast<std::size_t>(c)] += a;
            sp[static_cast<std::size_t>(c)] += b;
            st[static_cast<std::size_t>(c)] += s;
        }
    }
    std::vector<int> present;
    for (int c = 0; c < k; ++c) {
        if (st[static_cast<std::size_t>(c)] > 0) present.push_back(c);
    }
    double loss = 0.0;
    // dL/dp = coef_t * t + coef_1, per class.
    std::vector<double> coef_t(static_cast<std::size_t>(k), 0.0), coef_1(static_cast<std::size_t>(k), 0.0);
    if (!present.empty()) {
        const double inv = 1.0 / static_cast<double>(present.size());
        double dice_sum  = 0.0;
        for (int c : present) {
            const auto ci    = static_cast<std::size_t>(c);
            const double num = 2.0 * inter[ci] + epsilon;
            const double den = sp[ci] + st[ci] + epsilon;
            dice_sum += num / den;
            coef_t[ci] = -inv * 2.0 / den;
            coef_1[ci] = inv * num / (den * den);
        }
        loss = 1.0 - dice_sum * inv;
    }
    if (!std::isfinite(loss)) throw NumericError("dice_loss is not finite");

    return nn::make_result(Tensor({1}, static_cast<float>(loss)), {probs},
                           [one_hot, coef_t, coef_1, n, k, plane](nn::Node& node) {
                               if (!node.inputs[0]->requires_grad) return;
                               const double g = node.grad[0];
                               float* gp      = node.inputs[0]->grad_buffer().data();
                               const float* t = one_hot.data();
                               for (int i = 0; i < n; ++i) {
                                   for (int c = 0; c < k; ++c) {
                                       const auto ci = static_cast<std::size_t>(c);
                                       if (coef_t[ci] == 0.0 && coef_1[ci] == 0.0) continue;
                                       const auto a = static_cast<float>(g * coef_t[ci]);
                                       const auto b = static_cast<float>(g * coef_1[ci]);
                                       const std::size_t off = (static_cast<std::size_t>(i) * k + c) * plane;
                                       for (std::size_t x = 0; x < plane; ++x) gp[off + x] += a * t[off + x] + b;
                                   }
                               }
                           });
}

Tensor one_hot_batch(const std::vector<const LayoutMap*>& layouts) {
    if (layouts.empty()) throw ShapeError("one_hot_batch: no layouts");
    const int h = layouts[0]->height, w = layouts[0]->width;
    Tensor out({static_cast<int>(layouts.size()), kNumClasses, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (std::size_t i = 0; i < layouts.size(); ++i) {
        if (layouts[i]->height != h || layouts[i]->width != w) throw ShapeError("one_hot_batch: size mismatch");
        for (std::size_t x = 0; x < plane; ++x) {
            const auto c = layouts[i]->classes[x];
            if (c >= kNumClasses) throw ShapeError("layout class out of range");
            out[(i * kNumClasses + c) * plane + x] = 1.0f;
        }
    }
    return out;
}

}  // namespace aerialgen::stage1
