#pragma once

// Feature-space and pixel-space image metrics. All functions are pure.

#include <vector>

#include "aerialgen/core/image.hpp"

namespace aerialgen::eval {

using Feature    = std::vector<double>;
using FeatureSet = std::vector<Feature>;

// Mean of (2 - 2 cos)/4 over index-matched unit vectors, in [0, 1].
double sim_same(const FeatureSet& real, const FeatureSet& fake);
// Same formula with ground-view features in place of real aerial ones.
double sim_cross(const FeatureSet& ground, const FeatureSet& fake);

struct GaussianStats {
    int dim = 0;
    std::vector<double> mean;
    std::vector<double> cov;  // row-major dim x dim
    double shrinkage = 0.0;   // blend weight used toward (tr/dim) I
};

enum class Shrinkage { automatic, never, always };

// automatic: Ledoit-Wolf blending when N < 4 * dim.
GaussianStats gaussian_stats(const FeatureSet& features, Shrinkage shrink = Shrinkage::automatic);
// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).
double frechet_distance(const GaussianStats& a, const GaussianStats& b);
double fid_safa(const FeatureSet& real, const FeatureSet& fake, Shrinkage shrink = Shrinkage::automatic);

// Reported instead of +inf for identical images.
inline constexpr double kPsnrIdentical = 100.0;
// Images with values in [0, 1].
double psnr(const Image& a, const Image& b);
// Mean SSIM over channels, 11x11 Gaussian window (sigma 1.5), valid region.
double ssim(const Image& a, const Image& b);

// Fraction of queries whose true gallery index is among the k nearest by
// Euclidean distance; equal distances rank the lower gallery index first.
double recall_at_k(const FeatureSet& queries, const FeatureSet& gallery, const std::vector<int>& truth, int k);
// Rank (0 = nearest) of the true match for every query.
std::vector<int> true_match_ranks(const FeatureSet& queries, const FeatureSet& gallery,
                                  const std::vector<int>& truth);
// k for "R@1%": max(1, round(gallery / 100)).
int one_percent_k(int gallery_size);

}  // namespace aerialgen::eval
