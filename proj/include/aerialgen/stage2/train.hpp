#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "aerialgen/core/layout.hpp"
#include "aerialgen/forge/manifest.hpp"
#include "aerialgen/prompt/text.hpp"
#include "aerialgen/stage1/metrics.hpp"
#include "aerialgen/stage1/model.hpp"
#include "aerialgen/stage2/model.hpp"

namespace aerialgen::stage2 {

struct Stage2Example {
    std::string id;
    Tensor aerial;     // [3, S, S] in [-1, 1]
    LayoutMap layout;  // S x S
    std::string prompt;
};

// Palette RGB of the layout scaled to [-1, 1], [3, H, W].
Tensor layout_condition(const LayoutMap& layout);
// Majority vote over f x f blocks for integer factors (lowest class on ties),
// nearest neighbour otherwise.
LayoutMap downsample_layout(const LayoutMap& layout, int size);
Tensor aerial_tensor(const Image& aerial, int size);
Image tensor_to_aerial(const Tensor& batch, int index);

// Prompt text for one sample under a prompt mode. Raw and dynamic modes need
// a description and throw ConfigError pointing at gen-descriptions otherwise.
std::string build_prompt(const std::string& mode, const std::string& city, const std::string& description,
                         const prompt::TextEmbedder& embedder);
Tensor text_embeddings(const std::vector<std::string>& prompts, int dim);

// Teacher layouts come from the manifest; with teacher_layouts == false the
// Stage-I model predicts them from the ground panoramas.
std::vector<Stage2Example> load_stage2_examples(const forge::Manifest& manifest, forge::Split split,
                                                const Stage2Config& config, int limit = 0,
                                                const stage1::Stage1Model* layout_model = nullptr);

// Same dihedral transform as the Stage-I augmentation, on both tensors.
Stage2Example augment(const Stage2Example& e, int quarter_turns, bool mirror);

nn::Var denoise_loss(const nn::Var& eps_pred, const Tensor& eps);

struct Stage2TrainOptions {
    double max_seconds = 0.0;
    int log_every      = 100;
    std::function<void(int, double)> on_step;
};

struct Stage2TrainResult {
    std::vector<double> loss_curve;
    int steps_run  = 0;
    double seconds = 0.0;
};

// Leaves the exponential moving average of the weights in the model.
Stage2TrainResult train_stage2(Stage2Model& model, const std::vector<Stage2Example>& train,
                               const Stage2TrainOptions& options = {});

struct SynthesisRequest {
    LayoutMap layout;
    std::string prompt;
    std::uint64_t seed = 0;
    int steps          = 0;     // 0: config.sample_steps
    double guidance_scale = -1; // < 0: config.guidance_scale
};

// Ancestral sampling from pure noise; identical requests give identical pixels.
Image sample(const Stage2Model& model, const SynthesisRequest& request);
std::vector<Image> sample_batch(const Stage2Model& model, const std::vector<SynthesisRequest>& requests);

// Nearest-palette segmentation of synthesized images against their
// conditioning layouts.
stage1::SegMetrics evaluate_resegmentation(const Stage2Model& model, const std::vector<Stage2Example>& examples,
                                           std::uint64_t seed = 1, int batch_size = 10,
                                           std::vector<Image>* outputs = nullptr);

void save_checkpoint(const Stage2Model& model, const std::filesystem::path& path, int step);
std::unique_ptr<Stage2Model> load_checkpoint(const std::filesystem::path& path);

}  // namespace aerialgen::stage2
