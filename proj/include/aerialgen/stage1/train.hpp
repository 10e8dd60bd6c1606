#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "aerialgen/core/layout.hpp"
#include "aerialgen/forge/manifest.hpp"
#include "aerialgen/forge/synthetic.hpp"
#include "aerialgen/stage1/metrics.hpp"
#include "aerialgen/stage1/model.hpp"

namespace aerialgen::stage1 {

struct Stage1Example {
    std::string id;
    Tensor input;      // [3, input_height, input_width]
    LayoutMap target;  // layout_size x layout_size
    // Panorama columns averaged into one input column.
    int pool_w = 1;
};

std::vector<Stage1Example> load_examples(const forge::Manifest& manifest, forge::Split split, const Stage1Config& config,
                                         int limit = 0);
std::vector<Stage1Example> make_examples(const std::vector<forge::Sample>& samples, const Stage1Config& config);

// Rotates the scene by quarter_turns * 90 degrees clockwise and optionally
// mirrors it east-west, keeping panorama and layout consistent.
Stage1Example augment(const Stage1Example& e, int quarter_turns, bool mirror);

struct TrainOptions {
    // Wall-clock cap in seconds; 0 = none.
    double max_seconds = 0.0;
    int log_every      = 100;
    std::function<void(int step, double loss)> on_step;
};

struct TrainResult {
    std::vector<double> loss_curve;
    int steps_run  = 0;
    double seconds = 0.0;
};

// Trains in place for config.steps Adam steps (or until max_seconds).
// Non-finite loss throws NumericError.
TrainResult train_stage1(Stage1Model& model, const std::vector<Stage1Example>& train, const TrainOptions& options = {});

std::vector<LayoutMap> predict_layouts(const Stage1Model& model, const std::vector<const Tensor*>& inputs,
                                       double fov_degrees = 360.0);
SegMetrics evaluate_stage1(const Stage1Model& model, const std::vector<Stage1Example>& examples,
                           double fov_degrees = 360.0, int batch_size = 16);

// Binary weights at `path` plus `path`.json holding config, fingerprint, seed and step.
void save_checkpoint(const Stage1Model& model, const std::filesystem::path& path, int step);
std::unique_ptr<Stage1Model> load_checkpoint(const std::filesystem::path& path);

void write_loss_curve(const std::filesystem::path& path, const std::vector<double>& curve);

}  // namespace aerialgen::stage1
