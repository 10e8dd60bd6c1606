#include <algorithm>
#include <cmath>

#include "aerialgen/core/error.hpp"
#include "aerialgen/nn/ops.hpp"
#include "fast_exp.hpp"

namespace aerialgen::nn {

namespace {

template <class F>
Tensor map(const Tensor& x, F f) {
    Tensor out(x.shape());
    const float* src = x.data();
    float* dst       = out.data();
    for (std::size_t i = 0; i < x.numel(); ++i) dst[i] = f(src[i]);
    return out;
}

// Adds g (optionally scaled elementwise by `factor`) into the input's grad.
void accumulate(Node& input, const Tensor& g, float factor = 1.0f) {
    if (!input.requires_grad) return;
    float* dst       = input.grad_buffer().data();
    const float* src = g.data();
    for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += factor * src[i];
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape(a.shape(), b.shape(), "add");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        accumulate(*self.inputs[0], self.grad);
        accumulate(*self.inputs[1], self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a.shape(), b.shape(), "sub");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        accumulate(*self.inputs[0], self.grad);
        accumulate(*self.inputs[1], self.grad, -1.0f);
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a.shape(), b.shape(), "mul");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const std::size_t n = self.grad.numel();
        if (na.requires_grad) {
            float* g = na.grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * nb.value[i];
        }
        if (nb.requires_grad) {
            float* g = nb.grad_buffer().data();
            for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[i] * na.value[i];
        }
    });
}

Var scale(const Var& x, float factor) {
    return make_result(map(x.value(), [factor](float v) { return v * factor; }), {x},
                       [factor](Node& self) { accumulate(*self.inputs[0], self.grad, factor); });
}

Var add_scalar(const Var& x, float value) {
    return make_result(map(x.value(), [value](float v) { return v + value; }), {x},
                       [](Node& self) { accumulate(*self.inputs[0], self.grad); });
}

Var square(const Var& x) {
    return make_result(map(x.value(), [](float v) { return v * v; }), {x}, [](Node& self) {
        Node& in = *self.inputs[0];
        float* g = in.grad_buffer().data();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) g[i] += 2.0f * in.value[i] * self.grad[i];
    });
}

Var silu(const Var& x) {
    return make_result(map(x.value(), [](float v) { return v / (1.0f + detail::exp_approx(-v)); }), {x}, [](Node& self) {
        Node& in = *self.inputs[0];
        float* g = in.grad_buffer().data();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            const float v = in.value[i];
            const float s = 1.0f / (1.0f + detail::exp_approx(-v));
            g[i] += self.grad[i] * s * (1.0f + v * (1.0f - s));
        }
    });
}

Var relu(const Var& x) {
    return make_result(map(x.value(), [](float v) { return v > 0.0f ? v : 0.0f; }), {x}, [](Node& self) {
        Node& in = *self.inputs[0];
        float* g = in.grad_buffer().data();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            if (in.value[i] > 0.0f) g[i] += self.grad[i];
        }
    });
}

Var sigmoid(const Var& x) {
    return make_result(map(x.value(), [](float v) { return 1.0f / (1.0f + detail::exp_approx(-v)); }), {x}, [](Node& self) {
        Node& in = *self.inputs[0];
        float* g = in.grad_buffer().data();
        for (std::size_t i = 0; i < self.grad.numel(); ++i) {
            const float s = self.value[i];
            g[i] += self.grad[i] * s * (1.0f - s);
        }
    });
}

Var add_channel_vector(const Var& x, const Var& v) {
    const Shape& xs = x.shape();
    if (xs.size() < 2 || v.shape() != Shape{xs[0], xs[1]}) {
        throw ShapeError("add_channel_vector: " + shape_string(xs) + " with " + shape_string(v.shape()));
    }
    const std::size_t nc    = static_cast<std::size_t>(xs[0]) * xs[1];
    const std::size_t inner = x.value().numel() / nc;
    Tensor out              = x.value();
    for (std::size_t i = 0; i < nc; ++i) {
        const float b = v.value()[i];
        float* row    = out.data() + i * inner;
        for (std::size_t j = 0; j < inner; ++j) row[j] += b;
    }
    return make_result(std::move(out), {x, v}, [nc, inner](Node& self) {
        accumulate(*self.inputs[0], self.grad);
        Node& nv = *self.inputs[1];
        if (!nv.requires_grad) return;
        float* g = nv.grad_buffer().data();
        for (std::size_t i = 0; i < nc; ++i) {
            const float* row = self.grad.data() + i * inner;
            float s          = 0.0f;
            for (std::size_t j = 0; j < inner; ++j) s += row[j];
            g[i] += s;
        }
    });
}

Var film(const Var& x, const Var& scale_v, const Var& shift_v) {
    const Shape& xs = x.shape();
    const Shape nc_shape{xs.at(0), xs.at(1)};
    if (scale_v.shape() != nc_shape || shift_v.shape() != nc_shape) {
        throw ShapeError("film: modulation must be " + shape_string(nc_shape));
    }
    const std::size_t nc    = static_cast<std::size_t>(xs[0]) * xs[1];
    const std::size_t inner = x.value().numel() / nc;
    Tensor out(xs);
    for (std::size_t i = 0; i < nc; ++i) {
        const float a    = 1.0f + scale_v.value()[i];
        const float b    = shift_v.value()[i];
        const float* src = x.value().data() + i * inner;
        float* dst       = out.data() + i * inner;
        for (std::size_t j = 0; j < inner; ++j) dst[j] = src[j] * a + b;
    }
    return make_result(std::move(out), {x, scale_v, shift_v}, [nc, inner](Node& self) {
        Node& nx = *self.inputs[0];
        Node& ns = *self.inputs[1];
        Node& nb = *self.inputs[2];
        for (std::size_t i = 0; i < nc; ++i) {
            const float* g  = self.grad.data() + i * inner;
            const float* xv = nx.value.data() + i * inner;
            if (nx.requires_grad) {
                float* gx     = nx.grad_buffer().data() + i * inner;
                const float a = 1.0f + ns.value[i];
                for (std::size_t j = 0; j < inner; ++j) gx[j] += g[j] * a;
            }
            if (ns.requires_grad) {
                float s = 0.0f;
                for (std::size_t j = 0; j < inner; ++j) s += g[j] * xv[j];
                ns.grad_buffer()[i] += s;
            }
            if (nb.requires_grad) {
                float s = 0.0f;
                for (std::size_t j = 0; j < inner; ++j) s += g[j];
                nb.grad_buffer()[i] += s;
            }
        }
    });
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshape(std::move(shape));
    return make_result(std::move(out), {x}, [](Node& self) { accumulate(*self.inputs[0], self.grad); });
}

Var concat_channels(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape& first = xs.front().shape();
    if (first.size() < 2) throw ShapeError("concat_channels: rank < 2");
    const int n             = first[0];
    const std::size_t inner = xs.front().value().numel() / (static_cast<std::size_t>(first[0]) * first[1]);
    int channels            = 0;
    std::vector<int> offsets;
    for (const Var& v : xs) {
        Shape s = v.shape();
        if (s.size() != first.size() || s[0] != n) throw ShapeError("concat_channels: batch mismatch");
        for (std::size_t d = 2; d < s.size(); ++d) {
            if (s[d] != first[d]) throw ShapeError("concat_channels: spatial mismatch");
        }
        offsets.push_back(channels);
        channels += s[1];
    }
    Shape out_shape = first;
    out_shape[1]    = channels;
    Tensor out(out_shape);
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const int ck = xs[k].shape()[1];
        for (int b = 0; b < n; ++b) {
            const float* src = xs[k].value().data() + static_cast<std::size_t>(b) * ck * inner;
            float* dst       = out.data() + (static_cast<std::size_t>(b) * channels + offsets[k]) * inner;
            std::copy(src, src + ck * inner, dst);
        }
    }
    return make_result(std::move(out), xs, [offsets, channels, n, inner](Node& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            Node& in = *self.inputs[k];
            if (!in.requires_grad) continue;
            const int ck = in.value.shape()[1];
            float* g     = in.grad_buffer().data();
            for (int b = 0; b < n; ++b) {
                const float* src = self.grad.data() + (static_cast<std::size_t>(b) * channels + offsets[k]) * inner;
                float* dst       = g + static_cast<std::size_t>(b) * ck * inner;
                for (std::size_t j = 0; j < ck * inner; ++j) dst[j] += src[j];
            }
        }
    });
}

Var slice_channels(const Var& x, int begin, int end) {
    const Shape& xs = x.shape();
    if (xs.size() < 2 || begin < 0 || end > xs[1] || begin >= end) throw ShapeError("slice_channels: bad range");
    const int n             = xs[0];
    const int c             = xs[1];
    const int width         = end - begin;
    const std::size_t inner = x.value().numel() / (static_cast<std::size_t>(n) * c);
    Shape out_shape         = xs;
    out_shape[1]            = width;
    Tensor out(out_shape);
    for (int b = 0; b < n; ++b) {
        const float* src = x.value().data() + (static_cast<std::size_t>(b) * c + begin) * inner;
        std::copy(src, src + width * inner, out.data() + static_cast<std::size_t>(b) * width * inner);
    }
    return make_result(std::move(out), {x}, [n, c, begin, width, inner](Node& self) {
        float* g = self.inputs[0]->grad_buffer().data();
        for (int b = 0; b < n; ++b) {
            const float* src = self.grad.data() + static_cast<std::size_t>(b) * width * inner;
            float* dst       = g + (static_cast<std::size_t>(b) * c + begin) * inner;
            for (std::size_t j = 0; j < width * inner; ++j) dst[j] += src[j];
        }
    });
}

Var sum(const Var& x) {
    double s = 0.0;
    for (float v : x.value().values()) s += v;
    return make_result(Tensor({1}, {static_cast<float>(s)}), {x}, [](Node& self) {
        Node& in      = *self.inputs[0];
        float* g      = in.grad_buffer().data();
        const float d = self.grad[0];
        for (std::size_t i = 0; i < in.value.numel(); ++i) g[i] += d;
    });
}

Var mean(const Var& x) {
    const auto n = static_cast<float>(x.value().numel());
    return scale(sum(x), 1.0f / n);
}

Var mse_loss(const Var& prediction, const Var& target) {
    require_same_shape(prediction.shape(), target.shape(), "mse_loss");
    const std::size_t n = prediction.value().numel();
    double s            = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = prediction.value()[i] - target.value()[i];
        s += d * d;
    }
    return make_result(Tensor({1}, {static_cast<float>(s / static_cast<double>(n))}), {prediction, target},
                       [n](Node& self) {
                           Node& p       = *self.inputs[0];
                           Node& t       = *self.inputs[1];
                           const float k = 2.0f * self.grad[0] / static_cast<float>(n);
                           if (p.requires_grad) {
                               float* g = p.grad_buffer().data();
                               for (std::size_t i = 0; i < n; ++i) g[i] += k * (p.value[i] - t.value[i]);
                           }
                           if (t.requires_grad) {
                               float* g = t.grad_buffer().data();
                               for (std::size_t i = 0; i < n; ++i) g[i] -= k * (p.value[i] - t.value[i]);
                           }
                       });
}

}  // namespace aerialgen::nn
