#pragma once

// Batched, differentiable versions of the BEV geometry for network use.

#include "aerialgen/bev/geometry.hpp"
#include "aerialgen/nn/autograd.hpp"

namespace aerialgen::bev {

// f [N, C, H, W], logits [N, C*D, H, W] (or [N, D, H, W] when shared) -> [N, C, D, W].
nn::Var project_polar(const nn::Var& f, const nn::Var& logits, int d, bool shared);

// polar [N, C, D, W] -> [N, C, k, k].
nn::Var resample_cartesian(const nn::Var& polar, const PolarGridSpec& spec);

// Zeroes hidden columns of x [N, C, H, W].
nn::Var apply_fov_mask(const nn::Var& x, const FovMask& mask);

}  // namespace aerialgen::bev
