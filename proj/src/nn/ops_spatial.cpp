#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "aerialgen/core/error.hpp"
#include "aerialgen/nn/ops.hpp"
#include "fast_exp.hpp"
#include "blas.hpp"

namespace aerialgen::nn {

using detail::gemm;

namespace {

struct ConvGeometry {
    int n, c, h, w;
    int kh, kw;
    int oh, ow;
    Conv2dOptions opt;

    int positions() const { return oh * ow; }
    int patch() const { return c * kh * kw; }
};

// Patch matrix [C*KH*KW, (oy1-oy0)*OW] for output rows [oy0, oy1) of one sample.
void im2col_rows(const ConvGeometry& g, const float* x, int oy0, int oy1, float* col) {
    const std::size_t cols = static_cast<std::size_t>(oy1 - oy0) * g.ow;
    for (int ch = 0; ch < g.c; ++ch) {
        const float* plane = x + static_cast<std::size_t>(ch) * g.h * g.w;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                float* row = col + static_cast<std::size_t>((ch * g.kh + ki) * g.kw + kj) * cols;
                for (int oy = oy0; oy < oy1; ++oy) {
                    const int iy = oy * g.opt.stride_h - g.opt.pad_h + ki;
                    float* out   = row + static_cast<std::size_t>(oy - oy0) * g.ow;
                    if (iy < 0 || iy >= g.h) {
                        std::fill(out, out + g.ow, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(iy) * g.w;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        int ix = ox * g.opt.stride_w - g.opt.pad_w + kj;
                        if (ix < 0 || ix >= g.w) {
                            if (!g.opt.wrap_width) {
                                out[ox] = 0.0f;
                                continue;
                            }
                            ix = ((ix % g.w) + g.w) % g.w;
                        }
                        out[ox] = src[ix];
                    }
                }
            }
        }
    }
}

void col2im_rows(const ConvGeometry& g, const float* col, int oy0, int oy1, float* dx) {
    const std::size_t cols = static_cast<std::size_t>(oy1 - oy0) * g.ow;
    for (int ch = 0; ch < g.c; ++ch) {
        float* plane = dx + static_cast<std::size_t>(ch) * g.h * g.w;
        for (int ki = 0; ki < g.kh; ++ki) {
            for (int kj = 0; kj < g.kw; ++kj) {
                const float* row = col + static_cast<std::size_t>((ch * g.kh + ki) * g.kw + kj) * cols;
                for (int oy = oy0; oy < oy1; ++oy) {
                    const int iy = oy * g.opt.stride_h - g.opt.pad_h + ki;
                    if (iy < 0 || iy >= g.h) continue;
                    float* dst      = plane + static_cast<std::size_t>(iy) * g.w;
                    const float* in = row + static_cast<std::size_t>(oy - oy0) * g.ow;
                    for (int ox = 0; ox < g.ow; ++ox) {
                        int ix = ox * g.opt.stride_w - g.opt.pad_w + kj;
                        if (ix < 0 || ix >= g.w) {
                            if (!g.opt.wrap_width) continue;
                            ix = ((ix % g.w) + g.w) % g.w;
                        }
                        dst[ix] += in[ox];
                    }
                }
            }
        }
    }
}

bool is_pointwise(const ConvGeometry& g) {
    return g.kh == 1 && g.kw == 1 && g.opt.stride_h == 1 && g.opt.stride_w == 1 && g.opt.pad_h == 0 &&
           g.opt.pad_w == 0;
}

// Output rows per block so the patch matrix stays around 512 KiB.
int rows_per_block(const ConvGeometry& g) {
    const std::size_t per_row = static_cast<std::size_t>(g.patch()) * g.ow;
    return static_cast<int>(std::clamp<std::size_t>(131072 / std::max<std::size_t>(per_row, 1), 1, g.oh));
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, const Conv2dOptions& options) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1]) {
        throw ShapeError("conv2d: input " + shape_string(xs) + " weight " + shape_string(ws));
    }
    ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[2], ws[3], 0, 0, options};
    g.oh = (g.h + 2 * options.pad_h - g.kh) / options.stride_h + 1;
    g.ow = (g.w + 2 * options.pad_w - g.kw) / options.stride_w + 1;
    if (g.oh <= 0 || g.ow <= 0) throw ShapeError("conv2d: empty output for input " + shape_string(xs));
    const int out_c     = ws[0];
    const bool has_bias = bias.defined();
    if (has_bias && bias.shape() != Shape{out_c}) throw ShapeError("conv2d: bias " + shape_string(bias.shape()));

    const int p         = g.positions();
    const int k         = g.patch();
    const bool pointwise = is_pointwise(g);
    const int block     = rows_per_block(g);
    const std::size_t in_stride = static_cast<std::size_t>(g.c) * g.h * g.w;
    const std::size_t out_stride = static_cast<std::size_t>(out_c) * p;

    Tensor out({g.n, out_c, g.oh, g.ow});
    std::unique_ptr<float[]> col(pointwise ? nullptr : new float[static_cast<std::size_t>(k) * block * g.ow]);
    for (int b = 0; b < g.n; ++b) {
        const float* xb = x.value().data() + b * in_stride;
        float* yb       = out.data() + b * out_stride;
        for (int oy0 = 0; oy0 < g.oh; oy0 += block) {
            const int oy1 = std::min(g.oh, oy0 + block);
            const int bp  = (oy1 - oy0) * g.ow;
            const std::size_t off = static_cast<std::size_t>(oy0) * g.ow;
            if (pointwise) {
                gemm(false, false, out_c, bp, k, 1.0f, weight.value().data(), k, xb + off, p, 0.0f, yb + off, p);
            } else {
                im2col_rows(g, xb, oy0, oy1, col.get());
                gemm(false, false, out_c, bp, k, 1.0f, weight.value().data(), k, col.get(), bp, 0.0f, yb + off, p);
            }
        }
        if (has_bias) {
            for (int o = 0; o < out_c; ++o) {
                const float bv = bias.value()[static_cast<std::size_t>(o)];
                float* d       = yb + static_cast<std::size_t>(o) * p;
                for (int i = 0; i < p; ++i) d[i] += bv;
            }
        }
    }

    std::vector<Var> inputs{x, weight};
    if (has_bias) inputs.push_back(bias);
    return make_result(std::move(out), inputs, [g, out_c, has_bias, pointwise, block](Node& self) {
        Node& nx     = *self.inputs[0];
        Node& nw     = *self.inputs[1];
        const int p  = g.positions();
        const int k  = g.patch();
        const std::size_t in_stride  = static_cast<std::size_t>(g.c) * g.h * g.w;
        const std::size_t out_stride = static_cast<std::size_t>(out_c) * p;

        if (has_bias && self.inputs[2]->requires_grad) {
            float* gb = self.inputs[2]->grad_buffer().data();
            for (int o = 0; o < out_c; ++o) {
                double s = 0.0;
                for (int b = 0; b < g.n; ++b) {
                    const float* row = self.grad.data() + b * out_stride + static_cast<std::size_t>(o) * p;
                    for (int i = 0; i < p; ++i) s += row[i];
                }
                gb[o] += static_cast<float>(s);
            }
        }
        const bool need_w = nw.requires_grad;
        const bool need_x = nx.requires_grad;
        if (!need_w && !need_x) return;
        float* gw = need_w ? nw.grad_buffer().data() : nullptr;
        float* gx = need_x ? nx.grad_buffer().data() : nullptr;
        const std::size_t buf = pointwise ? 0 : static_cast<std::size_t>(k) * block * g.ow;
        std::unique_ptr<float[]> col(buf ? new float[buf] : nullptr);
        std::unique_ptr<float[]> dcol(buf && need_x ? new float[buf] : nullptr);
        for (int b = 0; b < g.n; ++b) {
            const float* xb = nx.value.data() + b * in_stride;
            const float* gy = self.grad.data() + b * out_stride;
            for (int oy0 = 0; oy0 < g.oh; oy0 += block) {
                const int oy1 = std::min(g.oh, oy0 + block);
                const int bp  = (oy1 - oy0) * g.ow;
                const std::size_t off = static_cast<std::size_t>(oy0) * g.ow;
                if (pointwise) {
                    if (need_w) gemm(false, true, out_c, k, bp, 1.0f, gy + off, p, xb + off, p, 1.0f, gw, k);
                    if (need_x) {
                        gemm(true, false, k, bp, out_c, 1.0f, nw.value.data(), k, gy + off, p, 1.0f,
                             gx + b * in_stride + off, p);
                    }
                    continue;
                }
                if (need_w) {
                    im2col_rows(g, xb, oy0, oy1, col.get());
                    gemm(false, true, out_c, k, bp, 1.0f, gy + off, p, col.get(), bp, 1.0f, gw, k);
                }
                if (need_x) {
                    gemm(true, false, k, bp, out_c, 1.0f, nw.value.data(), k, gy + off, p, 0.0f, dcol.get(), bp);
                    col2im_rows(g, dcol.get(), oy0, oy1, gx + b * in_stride);
                }
            }
        }
    });
}

Var avg_pool2d(const Var& x, int kernel_h, int kernel_w) {
    const Shape& xs = x.shape();
    if (xs.size() != 4 || kernel_h <= 0 || kernel_w <= 0 || xs[2] % kernel_h || xs[3] % kernel_w) {
        throw ShapeError("avg_pool2d: " + shape_string(xs) + " not divisible by kernel");
    }
    const int planes = xs[0] * xs[1];
    const int h = xs[2], w = xs[3];
    const int oh = h / kernel_h, ow = w / kernel_w;
    const float inv = 1.0f / static_cast<float>(kernel_h * kernel_w);
    Tensor out({xs[0], xs[1], oh, ow});
    for (int pl = 0; pl < planes; ++pl) {
        const float* src = x.value().data() + static_cast<std::size_t>(pl) * h * w;
        float* dst       = out.data() + static_cast<std::size_t>(pl) * oh * ow;
        for (int y = 0; y < h; ++y) {
            float* drow = dst + static_cast<std::size_t>(y / kernel_h) * ow;
            const float* srow = src + static_cast<std::size_t>(y) * w;
            for (int xx = 0; xx < w; ++xx) drow[xx / kernel_w] += srow[xx];
        }
        for (int i = 0; i < oh * ow; ++i) dst[i] *= inv;
    }
    return make_result(std::move(out), {x}, [planes, h, w, oh, ow, kernel_h, kernel_w, inv](Node& self) {
        float* g = self.inputs[0]->grad_buffer().data();
        for (int pl = 0; pl < planes; ++pl) {
            const float* src = self.grad.data() + static_cast<std::size_t>(pl) * oh * ow;
            float* dst       = g + static_cast<std::size_t>(pl) * h * w;
            for (int y = 0; y < h; ++y) {
                for (int xx = 0; xx < w; ++xx) {
                    dst[static_cast<std::size_t>(y) * w + xx] +=
                        inv * src[static_cast<std::size_t>(y / kernel_h) * ow + xx / kernel_w];
                }
            }
        }
    });
}

Var upsample_nearest(const Var& x, int factor) {
    const Shape& xs = x.shape();
    if (xs.size() != 4 || factor <= 0) throw ShapeError("upsample_nearest: bad input");
    const int planes = xs[0] * xs[1];
    const int h = xs[2], w = xs[3];
    const int oh = h * factor, ow = w * factor;
    Tensor out({xs[0], xs[1], oh, ow});
    for (int pl = 0; pl < planes; ++pl) {
        const float* src = x.value().data() + static_cast<std::size_t>(pl) * h * w;
        float* dst       = out.data() + static_cast<std::size_t>(pl) * oh * ow;
        for (int y = 0; y < oh; ++y) {
            for (int xx = 0; xx < ow; ++xx) {
                dst[static_cast<std::size_t>(y) * ow + xx] = src[static_cast<std::size_t>(y / factor) * w + xx / factor];
            }
        }
    }
    return make_result(std::move(out), {x}, [planes, h, w, oh, ow, factor](Node& self) {
        float* g = self.inputs[0]->grad_buffer().data();
        for (int pl = 0; pl < planes; ++pl) {
            const float* src = self.grad.data() + static_cast<std::size_t>(pl) * oh * ow;
            float* dst       = g + static_cast<std::size_t>(pl) * h * w;
            for (int y = 0; y < oh; ++y) {
                for (int xx = 0; xx < ow; ++xx) {
                    dst[static_cast<std::size_t>(y / factor) * w + xx / factor] += src[static_cast<std::size_t>(y) * ow + xx];
                }
            }
        }
    });
}

namespace {

struct LinearTap {
    int i0, i1;
    float w0, w1;
};

// align_corners = false convention.
std::vector<LinearTap> linear_taps(int in, int out) {
    std::vector<LinearTap> taps(static_cast<std::size_t>(out));
    const float ratio = static_cast<float>(in) / static_cast<float>(out);
    for (int o = 0; o < out; ++o) {
        float src = (static_cast<float>(o) + 0.5f) * ratio - 0.5f;
        src       = std::max(src, 0.0f);
        int i0    = std::min(static_cast<int>(src), in - 1);
        int i1    = std::min(i0 + 1, in - 1);
        float f   = src - static_cast<float>(i0);
        taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0f - f, f};
    }
    return taps;
}

}  // namespace

Var upsample_bilinear(const Var& x, int out_h, int out_w) {
    const Shape& xs = x.shape();
    if (xs.size() != 4 || out_h <= 0 || out_w <= 0) throw ShapeError("upsample_bilinear: bad input");
    const int planes = xs[0] * xs[1];
    const int h = xs[2], w = xs[3];
    auto ty = linear_taps(h, out_h);
    auto tx = linear_taps(w, out_w);
    Tensor out({xs[0], xs[1], out_h, out_w});
    for (int pl = 0; pl < planes; ++pl) {
        const float* src = x.value().data() + static_cast<std::size_t>(pl) * h * w;
        float* dst       = out.data() + static_cast<std::size_t>(pl) * out_h * out_w;
        for (int y = 0; y < out_h; ++y) {
            const auto& a   = ty[static_cast<std::size_t>(y)];
            const float* r0 = src + static_cast<std::size_t>(a.i0) * w;
            const float* r1 = src + static_cast<std::size_t>(a.i1) * w;
            for (int xx = 0; xx < out_w; ++xx) {
                const auto& b = tx[static_cast<std::size_t>(xx)];
                dst[static_cast<std::size_t>(y) * out_w + xx] =
                    a.w0 * (b.w0 * r0[b.i0] + b.w1 * r0[b.i1]) + a.w1 * (b.w0 * r1[b.i0] + b.w1 * r1[b.i1]);
            }
        }
    }
    return make_result(std::move(out), {x}, [planes, h, w, out_h, out_w, ty, tx](Node& self) {
        float* g = self.inputs[0]->grad_buffer().data();
        for (int pl = 0; pl < planes; ++pl) {
            const float* src = self.grad.data() + static_cast<std::size_t>(pl) * out_h * out_w;
            float* dst       = g + static_cast<std::size_t>(pl) * h * w;
            for (int y = 0; y < out_h; ++y) {
                const auto& a = ty[static_cast<std::size_t>(y)];
                float* r0     = dst + static_cast<std::size_t>(a.i0) * w;
                float* r1     = dst + static_cast<std::size_t>(a.i1) * w;
                for (int xx = 0; xx < out_w; ++xx) {
                    const auto& b = tx[static_cast<std::size_t>(xx)];
                    const float d = src[static_cast<std::size_t>(y) * out_w + xx];
                    r0[b.i0] += a.w0 * b.w0 * d;
                    r0[b.i1] += a.w0 * b.w1 * d;
                    r1[b.i0] += a.w1 * b.w0 * d;
                    r1[b.i1] += a.w1 * b.w1 * d;
                }
            }
        }
    });
}

Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, float eps) {
    const Shape& xs = x.shape();
    if (xs.size() != 4 || groups <= 0 || xs[1] % groups) throw ShapeError("group_norm: channels not divisible");
    const int n = xs[0], c = xs[1];
    const int hw = xs[2] * xs[3];
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) throw ShapeError("group_norm: affine shape");
    const int cg          = c / groups;
    const std::size_t len = static_cast<std::size_t>(cg) * hw;

    Tensor xhat(xs);
    std::vector<float> rstd(static_cast<std::size_t>(n) * groups);
    Tensor out(xs);
    for (int b = 0; b < n; ++b) {
        for (int gi = 0; gi < groups; ++gi) {
            const std::size_t off = (static_cast<std::size_t>(b) * c + gi * cg) * hw;
            const float* src      = x.value().data() + off;
            double m = 0.0, v = 0.0;
            for (std::size_t i = 0; i < len; ++i) m += src[i];
            m /= static_cast<double>(len);
            for (std::size_t i = 0; i < len; ++i) v += (src[i] - m) * (src[i] - m);
            v /= static_cast<double>(len);
            const float r = static_cast<float>(1.0 / std::sqrt(v + eps));
            rstd[static_cast<std::size_t>(b) * groups + gi] = r;
            for (int ch = 0; ch < cg; ++ch) {
                const int cc   = gi * cg + ch;
                const float ga = gamma.value()[static_cast<std::size_t>(cc)];
                const float be = beta.value()[static_cast<std::size_t>(cc)];
                for (int i = 0; i < hw; ++i) {
                    const std::size_t idx = off + static_cast<std::size_t>(ch) * hw + i;
                    const float xh        = (x.value()[idx] - static_cast<float>(m)) * r;
                    xhat[idx]             = xh;
                    out[idx]              = xh * ga + be;
                }
            }
        }
    }
    return make_result(std::move(out), {x, gamma, beta},
                       [n, c, hw, groups, cg, len, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                           Node& nx = *self.inputs[0];
                           Node& ng = *self.inputs[1];
                           Node& nb = *self.inputs[2];
                           if (ng.requires_grad || nb.requires_grad) {
                               for (int b = 0; b < n; ++b) {
                                   for (int cc = 0; cc < c; ++cc) {
                                       const std::size_t off = (static_cast<std::size_t>(b) * c + cc) * hw;
                                       double sg = 0.0, sb = 0.0;
                                       for (int i = 0; i < hw; ++i) {
                                           sg += self.grad[off + i] * xhat[off + i];
                                           sb += self.grad[off + i];
                                       }
                                       if (ng.requires_grad) ng.grad_buffer()[static_cast<std::size_t>(cc)] += static_cast<float>(sg);
                                       if (nb.requires_grad) nb.grad_buffer()[static_cast<std::size_t>(cc)] += static_cast<float>(sb);
                                   }
                               }
                           }
                           if (!nx.requires_grad) return;
                           float* gx = nx.grad_buffer().data();
                           std::vector<float> dxh(len);
                           for (int b = 0; b < n; ++b) {
                               for (int gi = 0; gi < groups; ++gi) {
                                   const std::size_t off = (static_cast<std::size_t>(b) * c + gi * cg) * hw;
                                   double s1 = 0.0, s2 = 0.0;
                                   for (int ch = 0; ch < cg; ++ch) {
                                       const float ga = ng.value[static_cast<std::size_t>(gi * cg + ch)];
                                       for (int i = 0; i < hw; ++i) {
                                           const std::size_t li = static_cast<std::size_t>(ch) * hw + i;
                                           dxh[li]              = self.grad[off + li] * ga;
                                           s1 += dxh[li];
                                           s2 += dxh[li] * xhat[off + li];
                                       }
                                   }
                                   const float r  = rstd[static_cast<std::size_t>(b) * groups + gi];
                                   const auto m   = static_cast<float>(len);
                                   const auto f1  = static_cast<float>(s1);
                                   const auto f2  = static_cast<float>(s2);
                                   for (std::size_t li = 0; li < len; ++li) {
                                       gx[off + li] += r / m * (m * dxh[li] - f1 - xhat[off + li] * f2);
                                   }
                               }
                           }
                       });
}

Var softmax_channels(const Var& x) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw ShapeError("softmax_channels: expected [N, C, H, W]");
    const int n = xs[0], c = xs[1];
    const int hw = xs[2] * xs[3];
    Tensor out(xs);
    for (int b = 0; b < n; ++b) {
        const std::size_t base = static_cast<std::size_t>(b) * c * hw;
        for (int i = 0; i < hw; ++i) {
            float mx = -std::numeric_limits<float>::infinity();
            for (int ch = 0; ch < c; ++ch) mx = std::max(mx, x.value()[base + static_cast<std::size_t>(ch) * hw + i]);
            float s = 0.0f;
            for (int ch = 0; ch < c; ++ch) {
                const std::size_t idx = base + static_cast<std::size_t>(ch) * hw + i;
                out[idx]              = detail::exp_approx(x.value()[idx] - mx);
                s += out[idx];
            }
            for (int ch = 0; ch < c; ++ch) out[base + static_cast<std::size_t>(ch) * hw + i] /= s;
        }
    }
    return make_result(std::move(out), {x}, [n, c, hw](Node& self) {
        float* g = self.inputs[0]->grad_buffer().data();
        for (int b = 0; b < n; ++b) {
            const std::size_t base = static_cast<std::size_t>(b) * c * hw;
            for (int i = 0; i < hw; ++i) {
                float dot = 0.0f;
                for (int ch = 0; ch < c; ++ch) {
                    const std::size_t idx = base + static_cast<std::size_t>(ch) * hw + i;
                    dot += self.value[idx] * self.grad[idx];
                }
                for (int ch = 0; ch < c; ++ch) {
                    const std::size_t idx = base + static_cast<std::size_t>(ch) * hw + i;
                    g[idx] += self.value[idx] * (self.grad[idx] - dot);
                }
            }
        }
    });
}

Var channel_max(const Var& x) {
    const Shape& xs = x.shape();
    if (xs.size() != 4) throw ShapeError("channel_max: expected [N, C, H, W]");
    const int n = xs[0], c = xs[1];
    const int hw = xs[2] * xs[3];
    Tensor out({n, 1, xs[2], xs[3]});
    std::vector<int> arg(static_cast<std::size_t>(n) * hw);
    for (int b = 0; b < n; ++b) {
        for (int i = 0; i < hw; ++i) {
            int best  = 0;
            float val = x.value()[static_cast<std::size_t>(b) * c * hw + i];
            for (int ch = 1; ch < c; ++ch) {
                const float v = x.value()[(static_cast<std::size_t>(b) * c + ch) * hw + i];
                if (v > val) {
                    val  = v;
                    best = ch;
                }
            }
            out[static_cast<std::size_t>(b) * hw + i] = val;
            arg[static_cast<std::size_t>(b) * hw + i] = best;
        }
    }
    return make_result(std::move(out), {x}, [n, c, hw, arg = std::move(arg)](Node& self) {
        float* g = self.inputs[0]->grad_buffer().data();
        for (int b = 0; b < n; ++b) {
            for (int i = 0; i < hw; ++i) {
                const std::size_t k = static_cast<std::size_t>(b) * hw + i;
                g[(static_cast<std::size_t>(b) * c + arg[k]) * hw + i] += self.grad[k];
            }
        }
    });
}

Var attention_pool(const Var& x, const Var& attention) {
    const Shape& xs = x.shape();
    const Shape& as = attention.shape();
    if (xs.size() != 4 || as.size() != 3 || as[0] != xs[0] || as[2] != xs[2] * xs[3]) {
        throw ShapeError("attention_pool: features " + shape_string(xs) + " attention " + shape_string(as));
    }
    const int n = xs[0], c = xs[1], p = xs[2] * xs[3], k = as[1];
    Tensor out({n, k * c});
    for (int b = 0; b < n; ++b) {
        gemm(false, true, k, c, p, 1.0f, attention.value().data() + static_cast<std::size_t>(b) * k * p, p,
             x.value().data() + static_cast<std::size_t>(b) * c * p, p, 0.0f,
             out.data() + static_cast<std::size_t>(b) * k * c, c);
    }
    return make_result(std::move(out), {x, attention}, [n, c, p, k](Node& self) {
        Node& nx = *self.inputs[0];
        Node& na = *self.inputs[1];
        for (int b = 0; b < n; ++b) {
            const float* dout = self.grad.data() + static_cast<std::size_t>(b) * k * c;
            if (na.requires_grad) {
                gemm(false, false, k, p, c, 1.0f, dout, c, nx.value.data() + static_cast<std::size_t>(b) * c * p, p,
                     1.0f, na.grad_buffer().data() + static_cast<std::size_t>(b) * k * p, p);
            }
            if (nx.requires_grad) {
                gemm(true, false, c, p, k, 1.0f, dout, c, na.value.data() + static_cast<std::size_t>(b) * k * p, p,
                     1.0f, nx.grad_buffer().data() + static_cast<std::size_t>(b) * c * p, p);
            }
        }
    });
}

}  // namespace aerialgen::nn
