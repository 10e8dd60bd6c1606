#include "aerialgen/bev/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "aerialgen/core/error.hpp"
#include "nn/fast_exp.hpp"

namespace aerialgen::bev {

namespace {

void require_positive(int v, const char* what) {
    if (v <= 0) throw ShapeError(std::string(what) + " must be positive, got " + std::to_string(v));
}

void require_finite(const std::vector<double>& v, const char* what) {
    for (double x : v) {
        if (!std::isfinite(x)) throw NumericError(std::string(what) + " contains non-finite values");
    }
}

}  // namespace

FeatureGrid::FeatureGrid(int c_, int h_, int w_, double fill) : c(c_), h(h_), w(w_) {
    require_positive(c, "FeatureGrid c");
    require_positive(h, "FeatureGrid h");
    require_positive(w, "FeatureGrid w");
    data.assign(static_cast<std::size_t>(c) * h * w, fill);
}

void FeatureGrid::validate() const {
    require_positive(c, "FeatureGrid c");
    require_positive(h, "FeatureGrid h");
    require_positive(w, "FeatureGrid w");
    if (data.size() != static_cast<std::size_t>(c) * h * w) throw ShapeError("FeatureGrid data size mismatch");
    require_finite(data, "FeatureGrid");
}

DepthWeights::DepthWeights(int c_, int d_, int h_, int w_, bool shared_) : c(c_), d(d_), h(h_), w(w_), shared(shared_) {
    require_positive(c, "DepthWeights c");
    require_positive(d, "DepthWeights d");
    require_positive(h, "DepthWeights h");
    require_positive(w, "DepthWeights w");
    logits.assign(static_cast<std::size_t>(weight_channels()) * d * h * w, 0.0);
}

std::vector<double> DepthWeights::normalized() const {
    std::vector<double> probs(logits.size());
    kernels::softmax_h(logits.data(), weight_channels() * d, h, w, probs.data());
    return probs;
}

PolarFeature::PolarFeature(int c_, int d_, int w_, double fill) : c(c_), d(d_), w(w_) {
    require_positive(c, "PolarFeature c");
    require_positive(d, "PolarFeature d");
    require_positive(w, "PolarFeature w");
    data.assign(static_cast<std::size_t>(c) * d * w, fill);
}

PolarGridSpec PolarGridSpec::with_defaults(int d, int k) {
    require_positive(d, "PolarGridSpec d");
    require_positive(k, "PolarGridSpec k");
    PolarGridSpec spec;
    spec.d                  = d;
    spec.k                  = k;
    const double corner     = (static_cast<double>(k) / 2.0) * std::numbers::sqrt2;
    const double last_bin   = d > 1 ? static_cast<double>(d - 1) : 0.5;
    spec.radius_scale       = last_bin / corner;
    return spec;
}

void PolarGridSpec::validate() const {
    require_positive(d, "PolarGridSpec d");
    require_positive(k, "PolarGridSpec k");
    if (!(radius_scale > 0.0) || !std::isfinite(radius_scale)) throw ConfigError("radius_scale must be positive");
}

FovMask FovMask::centered(int w, double fov_degrees) {
    require_positive(w, "FovMask width");
    if (!(fov_degrees > 0.0 && fov_degrees <= 360.0)) {
        throw ConfigError("fov must lie in (0, 360], got " + std::to_string(fov_degrees));
    }
    FovMask mask;
    mask.fov_degrees = fov_degrees;
    mask.visible_columns.assign(static_cast<std::size_t>(w), false);
    int n = static_cast<int>(std::ceil(w * fov_degrees / 360.0 - 1e-9));
    n     = std::clamp(n, 1, w);
    const int first = -((n - 1) / 2);
    for (int i = 0; i < n; ++i) mask.visible_columns[static_cast<std::size_t>(((first + i) % w + w) % w)] = true;
    return mask;
}

int FovMask::visible_count() const {
    return static_cast<int>(std::count(visible_columns.begin(), visible_columns.end(), true));
}

DepthExpansionParams::DepthExpansionParams(int c_in_, int c_, int d_, bool shared_)
    : c_in(c_in_), c(c_), d(d_), shared(shared_) {
    require_positive(c_in, "DepthExpansionParams c_in");
    require_positive(c, "DepthExpansionParams c");
    require_positive(d, "DepthExpansionParams d");
    weight.assign(static_cast<std::size_t>(out_channels()) * c_in, 0.0);
    bias.assign(static_cast<std::size_t>(out_channels()), 0.0);
}

DepthWeights expand_depth_weights(const FeatureGrid& f_g, const DepthExpansionParams& params) {
    f_g.validate();
    if (params.c_in != f_g.c || params.c != f_g.c) {
        throw ShapeError("expand_depth_weights: params map " + std::to_string(params.c_in) + " -> " +
                         std::to_string(params.c) + "x" + std::to_string(params.d) + " but feature has " +
                         std::to_string(f_g.c) + " channels");
    }
    const int outs = params.out_channels();
    if (params.weight.size() != static_cast<std::size_t>(outs) * params.c_in ||
        params.bias.size() != static_cast<std::size_t>(outs)) {
        throw ShapeError("expand_depth_weights: parameter buffers have the wrong size");
    }
    DepthWeights out(f_g.c, params.d, f_g.h, f_g.w, params.shared);
    const std::size_t plane = static_cast<std::size_t>(f_g.h) * f_g.w;
    for (int o = 0; o < outs; ++o) {
        double* dst = out.logits.data() + static_cast<std::size_t>(o) * plane;
        std::fill(dst, dst + plane, params.bias[static_cast<std::size_t>(o)]);
        for (int ci = 0; ci < params.c_in; ++ci) {
            const double wv  = params.weight[static_cast<std::size_t>(o) * params.c_in + ci];
            const double* src = f_g.data.data() + static_cast<std::size_t>(ci) * plane;
            for (std::size_t p = 0; p < plane; ++p) dst[p] += wv * src[p];
        }
    }
    return out;
}

PolarFeature project_polar(const FeatureGrid& f_g, const DepthWeights& w_depth) {
    f_g.validate();
    if (w_depth.c != f_g.c || w_depth.h != f_g.h || w_depth.w != f_g.w) {
        throw ShapeError("project_polar: feature and depth weights disagree on c, h or w");
    }
    if (w_depth.logits.size() != static_cast<std::size_t>(w_depth.weight_channels()) * w_depth.d * w_depth.h * w_depth.w) {
        throw ShapeError("project_polar: depth weight buffer has the wrong size");
    }
    require_finite(w_depth.logits, "depth weights");
    PolarFeature out(f_g.c, w_depth.d, f_g.w);
    std::vector<double> probs(w_depth.logits.size());
    kernels::project_polar(f_g.data.data(), w_depth.logits.data(), f_g.c, w_depth.d, f_g.h, f_g.w, w_depth.shared,
                           probs.data(), out.data.data());
    return out;
}

std::vector<ResampleTap> resample_taps(const PolarGridSpec& spec, int w) {
    spec.validate();
    require_positive(w, "polar width");
    const double two_pi = 2.0 * std::numbers::pi;
    const double centre = static_cast<double>(spec.k) / 2.0;
    std::vector<ResampleTap> taps(static_cast<std::size_t>(spec.k) * spec.k);
    for (int i = 0; i < spec.k; ++i) {
        for (int j = 0; j < spec.k; ++j) {
            ResampleTap& tap = taps[static_cast<std::size_t>(i) * spec.k + j];
            const double dx  = (j + 0.5) - centre;
            const double dy  = centre - (i + 0.5);
            const double rho = std::sqrt(dx * dx + dy * dy) * spec.radius_scale;
            if (rho >= spec.d) continue;
            tap.inside = true;

            int d0     = static_cast<int>(std::floor(rho));
            double fd  = rho - d0;
            int d1     = d0 + 1;
            if (d0 >= spec.d - 1) {
                d0 = d1 = spec.d - 1;
                fd      = 0.0;
            }

            double theta = std::atan2(dx, dy);
            if (theta < 0.0) theta += two_pi;
            const double u  = theta / two_pi * w;
            const double fu = u - std::floor(u);
            const int c0    = (static_cast<int>(std::floor(u)) % w + w) % w;
            const int c1    = (c0 + 1) % w;

            tap.depth  = {d0, d0, d1, d1};
            tap.column = {c0, c1, c0, c1};
            tap.weight = {(1.0 - fd) * (1.0 - fu), (1.0 - fd) * fu, fd * (1.0 - fu), fd * fu};
        }
    }
    return taps;
}

BevFeature resample_cartesian(const PolarFeature& f_polar, const PolarGridSpec& spec) {
    if (spec.d != f_polar.d) {
        throw ShapeError("resample_cartesian: spec d=" + std::to_string(spec.d) + " but polar d=" +
                         std::to_string(f_polar.d));
    }
    const auto taps = resample_taps(spec, f_polar.w);
    BevFeature out;
    out.c          = f_polar.c;
    out.k          = spec.k;
    out.fill_value = spec.fill_value;
    out.data.assign(static_cast<std::size_t>(out.c) * spec.k * spec.k, 0.0);
    kernels::resample(f_polar.data.data(), taps, f_polar.c, f_polar.d, f_polar.w, spec.k, spec.fill_value,
                      out.data.data());
    return out;
}

FeatureGrid apply_fov_mask(const FeatureGrid& f_g, const FovMask& mask) {
    if (mask.visible_columns.size() != static_cast<std::size_t>(f_g.w)) {
        throw ShapeError("apply_fov_mask: mask length " + std::to_string(mask.visible_columns.size()) +
                         " but width " + std::to_string(f_g.w));
    }
    FeatureGrid out = f_g;
    for (int ch = 0; ch < f_g.c; ++ch) {
        for (int y = 0; y < f_g.h; ++y) {
            for (int x = 0; x < f_g.w; ++x) {
                if (!mask.visible_columns[static_cast<std::size_t>(x)]) out.at(ch, y, x) = 0.0;
            }
        }
    }
    return out;
}

namespace kernels {

template <class T>
void softmax_h(const T* logits, int slices, int h, int w, T* probs) {
    std::vector<T> mx(static_cast<std::size_t>(w));
    std::vector<T> total(static_cast<std::size_t>(w));
    for (int s = 0; s < slices; ++s) {
        const std::size_t base = static_cast<std::size_t>(s) * h * w;
        const T* l             = logits + base;
        T* p                   = probs + base;
        std::copy(l, l + w, mx.begin());
        for (int y = 1; y < h; ++y) {
            for (int x = 0; x < w; ++x) mx[x] = std::max(mx[x], l[y * w + x]);
        }
        std::fill(total.begin(), total.end(), T(0));
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const T e    = nn::detail::exp_approx_any(l[y * w + x] - mx[x]);
                p[y * w + x] = e;
                total[x] += e;
            }
        }
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) p[y * w + x] /= total[x];
        }
    }
}

template <class T>
void project_polar(const T* f, const T* logits, int c, int d, int h, int w, bool shared, T* probs, T* out) {
    softmax_h(logits, (shared ? 1 : c) * d, h, w, probs);
    for (int ch = 0; ch < c; ++ch) {
        const int cw = shared ? 0 : ch;
        const T* fc  = f + static_cast<std::size_t>(ch) * h * w;
        for (int dd = 0; dd < d; ++dd) {
            const T* p = probs + (static_cast<std::size_t>(cw) * d + dd) * h * w;
            T* o       = out + (static_cast<std::size_t>(ch) * d + dd) * w;
            std::fill(o, o + w, T(0));
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) o[x] += fc[y * w + x] * p[y * w + x];
            }
        }
    }
}

template <class T>
void project_polar_backward(const T* f, const T* probs, const T* out, const T* grad_out, int c, int d, int h, int w,
                            bool shared, T* grad_f, T* grad_logits) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ch = 0; ch < c; ++ch) {
        const int cw = shared ? 0 : ch;
        const T* fc  = f + static_cast<std::size_t>(ch) * plane;
        T* gfc       = grad_f ? grad_f + static_cast<std::size_t>(ch) * plane : nullptr;
        for (int dd = 0; dd < d; ++dd) {
            const std::size_t l_off = (static_cast<std::size_t>(cw) * d + dd) * plane;
            const std::size_t o_off = (static_cast<std::size_t>(ch) * d + dd) * w;
            const T* p              = probs + l_off;
            const T* g              = grad_out + o_off;
            const T* o              = out + o_off;
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const std::size_t i = static_cast<std::size_t>(y) * w + x;
                    if (gfc) gfc[i] += g[x] * p[i];
                    // d softmax: p * (df - sum p df) with df = g * f, and sum_y p f = out.
                    if (grad_logits) grad_logits[l_off + i] += g[x] * p[i] * (fc[i] - o[x]);
                }
            }
        }
    }
}

template <class T>
void resample(const T* polar, const std::vector<ResampleTap>& taps, int c, int d, int w, int k, T fill, T* out) {
    const std::size_t cells = static_cast<std::size_t>(k) * k;
    for (int ch = 0; ch < c; ++ch) {
        const T* src = polar + static_cast<std::size_t>(ch) * d * w;
        T* dst       = out + static_cast<std::size_t>(ch) * cells;
        for (std::size_t cell = 0; cell < cells; ++cell) {
            const ResampleTap& tap = taps[cell];
            if (!tap.inside) {
                dst[cell] = fill;
                continue;
            }
            T acc = T(0);
            for (int t = 0; t < 4; ++t) {
                acc += static_cast<T>(tap.weight[t]) * src[static_cast<std::size_t>(tap.depth[t]) * w + tap.column[t]];
            }
            dst[cell] = acc;
        }
    }
}

template void softmax_h<float>(const float*, int, int, int, float*);
template void softmax_h<double>(const double*, int, int, int, double*);
template void project_polar<float>(const float*, const float*, int, int, int, int, bool, float*, float*);
template void project_polar<double>(const double*, const double*, int, int, int, int, bool, double*, double*);
template void project_polar_backward<float>(const float*, const float*, const float*, const float*, int, int, int,
                                           int, bool, float*, float*);
template void project_polar_backward<double>(const double*, const double*, const double*, const double*, int, int,
                                            int, int, bool, double*, double*);
template void resample<float>(const float*, const std::vector<ResampleTap>&, int, int, int, int, float, float*);
template void resample<double>(const double*, const std::vector<ResampleTap>&, int, int, int, int, double, double*);

}  // namespace kernels

}  // namespace aerialgen::bev
