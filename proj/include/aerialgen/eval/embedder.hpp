#pragma once

// Dual-branch cross-view embedder: a small CNN per view followed by
// spatial-attention pooling into K attention-weighted descriptors, then L2
// normalisation. Trained with an in-batch soft-margin triplet loss.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "aerialgen/core/image.hpp"
#include "aerialgen/eval/metrics.hpp"
#include "aerialgen/forge/manifest.hpp"
#include "aerialgen/nn/layers.hpp"

namespace aerialgen::eval {

struct CvglConfig {
    int ground_height = 64;
    int ground_width  = 128;
    int aerial_size   = 64;
    std::array<int, 3> channels{16, 32, 32};
    int feature_channels = 32;
    int attention_maps   = 8;  // embedding dim = attention_maps * feature_channels
    int norm_groups      = 4;

    double learning_rate = 1e-3;
    int batch_size       = 32;
    int steps            = 1500;
    double alpha         = 10.0;  // soft-margin sharpness
    bool augment         = true;
    std::uint64_t seed   = 1;
    // Held-out R@1 required before the embedder may score images.
    double gate_recall = 0.8;

    int dim() const { return attention_maps * feature_channels; }
    void validate() const;
    std::string fingerprint() const;
};

void to_json(nlohmann::json& j, const CvglConfig& c);
void from_json(const nlohmann::json& j, CvglConfig& c);

struct CvglPair {
    std::string id;
    Tensor ground;  // [3, ground_height, ground_width], values in [0, 1]
    Tensor aerial;  // [3, aerial_size, aerial_size]
};

class CvglEmbedder {
public:
    explicit CvglEmbedder(const CvglConfig& config);

    // [N, 3, H, W] in [0, 1] -> unit rows [N, dim].
    nn::Var embed_ground(const nn::Var& x) const;
    nn::Var embed_aerial(const nn::Var& x) const;

    FeatureSet ground_features(const std::vector<const Tensor*>& grounds) const;
    FeatureSet aerial_features(const std::vector<const Tensor*>& aerials) const;

    Tensor preprocess_ground(const Image& panorama) const;
    Tensor preprocess_aerial(const Image& aerial) const;

    int dim() const { return config_.dim(); }
    const CvglConfig& config() const { return config_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }
    // Weights plus architecture; identifies an index-compatible embedder.
    std::string fingerprint() const;

    // Held-out R@1 recorded by the last gate evaluation; negative when unknown.
    double heldout_recall = -1.0;
    bool gate_passed() const { return heldout_recall >= config_.gate_recall; }
    // Throws ConfigError unless the gate passed or `force` is set.
    void require_gate(bool force) const;

private:
    struct Branch {
        nn::Conv2d c0, c1, c2, c3, head;
        nn::GroupNorm n0, n1, n2, n3;
        nn::Linear att1, att2;
        int positions = 0;
    };
    Branch make_branch(const std::string& name, int height, int width, bool wrap, Rng& rng);
    nn::Var run_branch(const Branch& b, const nn::Var& x) const;
    FeatureSet features(const Branch& b, const std::vector<const Tensor*>& xs) const;

    CvglConfig config_;
    nn::ParamStore store_;
    Branch ground_, aerial_;
};

// Soft-margin triplet loss over all in-batch negatives, both query directions:
// mean of log(1 + exp(alpha (d(g_i, a_i) - d_neg))). g and a are unit rows.
nn::Var soft_margin_triplet_loss(const nn::Var& g, const nn::Var& a, double alpha);

std::vector<CvglPair> load_cvgl_pairs(const forge::Manifest& manifest, forge::Split split, const CvglConfig& config,
                                      int limit = 0);

// Rotates both views by quarter turns and optionally mirrors them.
CvglPair augment(const CvglPair& p, int quarter_turns, bool mirror);

struct CvglTrainOptions {
    double max_seconds = 0.0;
    int log_every      = 100;
    // Replaces the aerial of training pair `index` before augmentation, e.g.
    // with a mixup against a synthesized image. Must not touch the training RNG.
    std::function<Tensor(const Tensor& aerial, std::size_t index)> aerial_hook;
    std::function<void(int, double)> on_step;
};

struct CvglTrainResult {
    std::vector<double> loss_curve;
    int steps_run  = 0;
    double seconds = 0.0;
};

CvglTrainResult train_cvgl(CvglEmbedder& model, const std::vector<CvglPair>& train, const CvglTrainOptions& options = {});

struct RecallReport {
    int queries = 0;
    double r1 = 0, r5 = 0, r10 = 0, r1pct = 0;
    nlohmann::json to_json() const;
};

// Ground queries against the aerial gallery of the same pairs.
RecallReport evaluate_recall(const CvglEmbedder& model, const std::vector<CvglPair>& pairs);

void save_embedder(const CvglEmbedder& model, const std::filesystem::path& path);
std::unique_ptr<CvglEmbedder> load_embedder(const std::filesystem::path& path);

}  // namespace aerialgen::eval
