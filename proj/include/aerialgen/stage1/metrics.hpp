#pragma once

#include <array>
#include <cstdint>

#include <json.hpp>

#include "aerialgen/core/layout.hpp"

namespace aerialgen::stage1 {

struct SegMetrics {
    std::array<double, kNumClasses> per_class_f1{};
    std::array<double, kNumClasses> per_class_iou{};
    std::array<bool, kNumClasses> present{};
    double avg_f1 = 0.0;
    double miou   = 0.0;
};

void to_json(nlohmann::json& j, const SegMetrics& m);

// Accumulated over a whole evaluation set; rows = target, columns = prediction.
class ConfusionMatrix {
public:
    void add(const LayoutMap& target, const LayoutMap& prediction);
    std::int64_t at(int target, int prediction) const { return counts_[target][prediction]; }
    // Averages run over classes present in the targets. Classes absent from
    // the targets score 1 when never predicted and 0 otherwise.
    SegMetrics metrics() const;

private:
    std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts_{};
};

SegMetrics segmentation_metrics(const LayoutMap& target, const LayoutMap& prediction);

}  // namespace aerialgen::stage1
