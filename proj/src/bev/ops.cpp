#include "aerialgen/bev/ops.hpp"

#include <string>

#include "aerialgen/core/error.hpp"
#include "aerialgen/nn/ops.hpp"

namespace aerialgen::bev {

using nn::Node;
using nn::Var;

Var project_polar(const Var& f, const Var& logits, int d, bool shared) {
    if (f.value().rank() != 4 || logits.value().rank() != 4) throw ShapeError("project_polar: expected rank-4 inputs");
    const int n  = f.dim(0);
    const int c  = f.dim(1);
    const int h  = f.dim(2);
    const int w  = f.dim(3);
    const int wc = shared ? 1 : c;
    if (logits.shape() != Shape{n, wc * d, h, w}) {
        throw ShapeError("project_polar: logits " + shape_string(logits.shape()) + " for features " +
                         shape_string(f.shape()) + " and d=" + std::to_string(d));
    }
    if (!f.value().all_finite() || !logits.value().all_finite()) throw NumericError("project_polar: non-finite input");

    Tensor probs(logits.shape());
    Tensor out({n, c, d, w});
    const std::size_t f_stride = static_cast<std::size_t>(c) * h * w;
    const std::size_t l_stride = static_cast<std::size_t>(wc) * d * h * w;
    const std::size_t o_stride = static_cast<std::size_t>(c) * d * w;
    for (int b = 0; b < n; ++b) {
        kernels::project_polar(f.value().data() + b * f_stride, logits.value().data() + b * l_stride, c, d, h, w,
                               shared, probs.data() + b * l_stride, out.data() + b * o_stride);
    }

    return nn::make_result(std::move(out), {f, logits},
                           [n, c, d, h, w, wc, shared, probs = std::move(probs)](Node& self) {
        Node& nf = *self.inputs[0];
        Node& nl = *self.inputs[1];
        float* gf = nf.requires_grad ? nf.grad_buffer().data() : nullptr;
        float* gl = nl.requires_grad ? nl.grad_buffer().data() : nullptr;
        const std::size_t f_stride = static_cast<std::size_t>(c) * h * w;
        const std::size_t l_stride = static_cast<std::size_t>(wc) * d * h * w;
        const std::size_t o_stride = static_cast<std::size_t>(c) * d * w;
        for (int b = 0; b < n; ++b) {
            kernels::project_polar_backward(nf.value.data() + b * f_stride, probs.data() + b * l_stride,
                                            self.value.data() + b * o_stride, self.grad.data() + b * o_stride, c, d,
                                            h, w, shared, gf ? gf + b * f_stride : nullptr,
                                            gl ? gl + b * l_stride : nullptr);
        }
    });
}

Var resample_cartesian(const Var& polar, const PolarGridSpec& spec) {
    if (polar.value().rank() != 4 || polar.dim(2) != spec.d) {
        throw ShapeError("resample_cartesian: polar " + shape_string(polar.shape()) + " for d=" + std::to_string(spec.d));
    }
    const int n = polar.dim(0);
    const int c = polar.dim(1);
    const int d = polar.dim(2);
    const int w = polar.dim(3);
    const int k = spec.k;
    auto taps   = resample_taps(spec, w);
    Tensor out({n, c, k, k});
    kernels::resample(polar.value().data(), taps, n * c, d, w, k, static_cast<float>(spec.fill_value), out.data());

    return nn::make_result(std::move(out), {polar}, [n, c, d, w, k, taps = std::move(taps)](Node& self) {
        float* g                = self.inputs[0]->grad_buffer().data();
        const std::size_t cells = static_cast<std::size_t>(k) * k;
        for (int s = 0; s < n * c; ++s) {
            const float* go = self.grad.data() + static_cast<std::size_t>(s) * cells;
            float* gp       = g + static_cast<std::size_t>(s) * d * w;
            for (std::size_t cell = 0; cell < cells; ++cell) {
                const ResampleTap& tap = taps[cell];
                if (!tap.inside) continue;
                for (int t = 0; t < 4; ++t) {
                    gp[static_cast<std::size_t>(tap.depth[t]) * w + tap.column[t]] +=
                        static_cast<float>(tap.weight[t]) * go[cell];
                }
            }
        }
    });
}

Var apply_fov_mask(const Var& x, const FovMask& mask) {
    if (x.value().rank() != 4 || x.dim(3) != static_cast<int>(mask.visible_columns.size())) {
        throw ShapeError("apply_fov_mask: input " + shape_string(x.shape()) + " for mask of length " +
                         std::to_string(mask.visible_columns.size()));
    }
    Tensor m(x.shape(), 1.0f);
    const int w = x.dim(3);
    for (std::size_t i = 0; i < m.numel(); ++i) {
        if (!mask.visible_columns[i % static_cast<std::size_t>(w)]) m[i] = 0.0f;
    }
    return nn::mul(x, Var(std::move(m)));
}

}  // namespace aerialgen::bev
