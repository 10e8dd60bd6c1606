#pragma once

#include <vector>

#include "aerialgen/core/layout.hpp"
#include "aerialgen/nn/autograd.hpp"

namespace aerialgen::stage1 {

// Soft Dice over classes present in the batch target:
//   1 - mean_k (2 sum(p t) + eps) / (sum p + sum t + eps)
// probs [N, K, H, W] (rows summing to 1), one_hot of the same shape.
// Returns 0 when no class is present.
nn::Var dice_loss(const nn::Var& probs, const Tensor& one_hot, double epsilon = 1.0);

// Stacks one-hot encodings of equally sized layouts into [N, 8, H, W].
Tensor one_hot_batch(const std::vector<const LayoutMap*>& layouts);

}  // namespace aerialgen::stage1
