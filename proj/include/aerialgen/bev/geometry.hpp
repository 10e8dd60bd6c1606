#pragma once

// Depth-weighted polar projection of ground features and polar-to-Cartesian
// resampling into a bird's-eye-view grid.
//
// Layout is row-major [c x h x w]. Conventions (see PolarGridSpec):
//   * azimuth 0 is panorama column 0 and the BEV "up" direction (row 0 side),
//     increasing clockwise; column u is centred on azimuth 2*pi*u/w;
//   * BEV cell (i, j) has centre (j + 0.5, i + 0.5), grid centre (k/2, k/2);
//   * depth-bin coordinate = euclidean cell distance * radius_scale.

#include <array>
#include <cstddef>
#include <vector>

namespace aerialgen::bev {

struct FeatureGrid {
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<double> data;

    FeatureGrid() = default;
    FeatureGrid(int c, int h, int w, double fill = 0.0);

    double& at(int ch, int y, int x) { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
    double at(int ch, int y, int x) const { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
    // Throws ShapeError / NumericError when invariants fail.
    void validate() const;
};

// Logits before the softmax over h. When `shared` is set the channel axis has
// size 1 and the same weights serve every feature channel.
struct DepthWeights {
    int c = 0;
    int d = 0;
    int h = 0;
    int w = 0;
    bool shared = false;
    std::vector<double> logits;

    DepthWeights() = default;
    DepthWeights(int c, int d, int h, int w, bool shared = false);

    int weight_channels() const noexcept { return shared ? 1 : c; }
    double& at(int ch, int dd, int y, int x) {
        return logits[((static_cast<std::size_t>(ch) * d + dd) * h + y) * w + x];
    }
    double at(int ch, int dd, int y, int x) const {
        return logits[((static_cast<std::size_t>(ch) * d + dd) * h + y) * w + x];
    }
    // Softmax over h, same layout as logits.
    std::vector<double> normalized() const;
};

struct PolarFeature {
    int c = 0;
    int d = 0;
    int w = 0;
    std::vector<double> data;

    PolarFeature() = default;
    PolarFeature(int c, int d, int w, double fill = 0.0);

    double& at(int ch, int dd, int x) { return data[(static_cast<std::size_t>(ch) * d + dd) * w + x]; }
    double at(int ch, int dd, int x) const { return data[(static_cast<std::size_t>(ch) * d + dd) * w + x]; }
};

struct BevFeature {
    int c = 0;
    int k = 0;
    double fill_value = 0.0;
    std::vector<double> data;

    double at(int ch, int i, int j) const { return data[(static_cast<std::size_t>(ch) * k + i) * k + j]; }
};

struct PolarGridSpec {
    int d = 64;
    int k = 32;
    double radius_scale = 0.0;
    double fill_value   = 0.0;

    // Scale chosen so the grid corner lands on depth bin d - 1.
    static PolarGridSpec with_defaults(int d, int k);
    void validate() const;
};

struct FovMask {
    double fov_degrees = 360.0;
    std::vector<bool> visible_columns;

    // ceil(w * fov / 360) visible columns centred on column 0.
    static FovMask centered(int w, double fov_degrees);
    int visible_count() const;
};

// 1x1 convolution mapping c_in channels to c * d (or d when shared) logit maps.
struct DepthExpansionParams {
    int c_in = 0;
    int c    = 0;
    int d    = 0;
    bool shared = false;
    std::vector<double> weight;  // [(shared ? d : c * d) x c_in]
    std::vector<double> bias;    // [(shared ? d : c * d)]

    DepthExpansionParams() = default;
    DepthExpansionParams(int c_in, int c, int d, bool shared = false);
    int out_channels() const noexcept { return (shared ? 1 : c) * d; }
};

DepthWeights expand_depth_weights(const FeatureGrid& f_g, const DepthExpansionParams& params);
PolarFeature project_polar(const FeatureGrid& f_g, const DepthWeights& w_depth);
BevFeature resample_cartesian(const PolarFeature& f_polar, const PolarGridSpec& spec);
FeatureGrid apply_fov_mask(const FeatureGrid& f_g, const FovMask& mask);

// Bilinear support of one BEV cell in the polar grid. Cells outside the
// maximum radius have inside == false and take the fill value.
struct ResampleTap {
    bool inside = false;
    std::array<int, 4> depth{};
    std::array<int, 4> column{};
    std::array<double, 4> weight{};
};

// One tap per BEV cell in row-major (i, j) order for polar width `w`.
std::vector<ResampleTap> resample_taps(const PolarGridSpec& spec, int w);

namespace kernels {

// Softmax along h of `slices` consecutive [h x w] planes.
template <class T>
void softmax_h(const T* logits, int slices, int h, int w, T* probs);

// out[c, d, x] = sum_y f[c, y, x] * softmax_y(logits[c', d, :, x])[y], with
// c' = 0 when shared. `probs` receives the softmax (same layout as logits).
template <class T>
void project_polar(const T* f, const T* logits, int c, int d, int h, int w, bool shared, T* probs, T* out);

// Accumulates gradients of project_polar into grad_f and grad_logits (either
// may be null) given the forward probs/out and the output gradient.
template <class T>
void project_polar_backward(const T* f, const T* probs, const T* out, const T* grad_out, int c, int d, int h, int w,
                            bool shared, T* grad_f, T* grad_logits);

template <class T>
void resample(const T* polar, const std::vector<ResampleTap>& taps, int c, int d, int w, int k, T fill, T* out);

}  // namespace kernels

}  // namespace aerialgen::bev
