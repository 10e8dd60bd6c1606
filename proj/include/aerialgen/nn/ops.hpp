#pragma once

// Differentiable tensor ops. Spatial tensors are [N, C, H, W].

#include <vector>

#include "aerialgen/nn/autograd.hpp"

namespace aerialgen::nn {

// Elementwise (identical shapes).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, float factor);
Var add_scalar(const Var& x, float value);
Var square(const Var& x);
Var silu(const Var& x);
Var relu(const Var& x);
Var sigmoid(const Var& x);

// x[N, C, ...] + v[N, C] broadcast over trailing dims.
Var add_channel_vector(const Var& x, const Var& v);
// x * (1 + scale) + shift with scale, shift of shape [N, C].
Var film(const Var& x, const Var& scale, const Var& shift);

Var reshape(const Var& x, Shape shape);
Var concat_channels(const std::vector<Var>& xs);
Var slice_channels(const Var& x, int begin, int end);

Var sum(const Var& x);
Var mean(const Var& x);
Var mse_loss(const Var& prediction, const Var& target);

// y = x W^T + b with x [N, in], W [out, in], b [out] (b may be undefined).
Var linear(const Var& x, const Var& weight, const Var& bias);
// [N, D] x [M, D] -> [N, M]
Var matmul_nt(const Var& a, const Var& b);
Var l2_normalize_rows(const Var& x, float eps = 1e-12f);

struct Conv2dOptions {
    int stride_h = 1;
    int stride_w = 1;
    int pad_h    = 0;
    int pad_w    = 0;
    // Circular padding along the width axis (panorama azimuth).
    bool wrap_width = false;
};

// weight [O, C, KH, KW], bias [O] (may be undefined).
Var conv2d(const Var& x, const Var& weight, const Var& bias, const Conv2dOptions& options = {});
Var avg_pool2d(const Var& x, int kernel_h, int kernel_w);
Var upsample_nearest(const Var& x, int factor);
Var upsample_bilinear(const Var& x, int out_h, int out_w);
Var group_norm(const Var& x, int groups, const Var& gamma, const Var& beta, float eps = 1e-5f);
Var softmax_channels(const Var& x);
// Max over channels -> [N, 1, H, W].
Var channel_max(const Var& x);
// x [N, C, H, W], attention [N, K, H*W] -> [N, K*C] (k-major).
Var attention_pool(const Var& x, const Var& attention);

}  // namespace aerialgen::nn
