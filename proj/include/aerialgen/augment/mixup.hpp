#pragma once

// Mixup of real aerials with synthesized ones for cross-view training.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "aerialgen/core/tensor.hpp"
#include "aerialgen/eval/embedder.hpp"
#include "aerialgen/forge/manifest.hpp"

namespace aerialgen::augment {

struct MixupConfig {
    double p_o    = 0.0;  // probability of applying the mixup
    double lambda = 0.5;  // weight of the synthesized image
    // When set, lambda is drawn from Beta(beta_a, beta_b) per sample instead.
    bool sample_lambda = false;
    double beta_a      = 1.0;
    double beta_b      = 1.0;
    std::uint64_t seed = 1;

    void validate() const;
};

void to_json(nlohmann::json& j, const MixupConfig& c);

// p <= p_o: lambda * fake + (1 - lambda) * real; otherwise real unchanged.
Tensor mixup_aerial(const Tensor& real, const Tensor& fake, double p_o, double p, double lambda);

struct MixupDecision {
    std::size_t index = 0;
    double p          = 0.0;
    double lambda     = 0.0;
    bool applied      = false;
};

// Stateful sampler over its own RNG stream, so the training RNG is untouched.
class MixupSampler {
public:
    MixupSampler(MixupConfig config, std::vector<Tensor> fakes);
    Tensor operator()(const Tensor& real, std::size_t index);
    const std::vector<MixupDecision>& decisions() const { return decisions_; }

private:
    MixupConfig config_;
    std::vector<Tensor> fakes_;
    Rng rng_;
    std::vector<MixupDecision> decisions_;
};

// Synthesized aerial per training pair from {dir}/{id}.png. Throws IoError
// listing every missing id.
std::vector<Tensor> load_synthesized(const std::filesystem::path& dir, const std::vector<eval::CvglPair>& pairs,
                                     const eval::CvglEmbedder& shape_source);

struct AugmentRun {
    std::unique_ptr<eval::CvglEmbedder> embedder;
    eval::CvglTrainResult training;
    eval::RecallReport recall;
    int mixed = 0;  // training samples that received the mixup
};

// Trains on the manifest's train split (with mixup when p_o > 0) and reports
// recall on its test split.
AugmentRun train_cvgl_with_aug(const forge::Manifest& manifest, const std::filesystem::path& synthesized_dir,
                               const eval::CvglConfig& config, const MixupConfig& mixup,
                               const eval::CvglTrainOptions& options = {});

// Baseline plus every p_o for each protocol; rows of {protocol, p_o, lambda,
// R@1, R@5, R@10, R@1%}.
nlohmann::json mixup_sweep(const forge::Manifest& manifest, const std::filesystem::path& synthesized_dir,
                           const eval::CvglConfig& config, const std::vector<double>& p_values, double lambda,
                           const std::vector<forge::Protocol>& protocols,
                           const eval::CvglTrainOptions& options = {});

}  // namespace aerialgen::augment
