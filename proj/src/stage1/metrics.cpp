#include "aerialgen/stage1/metrics.hpp"

#include "aerialgen/core/error.hpp"

namespace aerialgen::stage1 {

void to_json(nlohmann::json& j, const SegMetrics& m) {
    j = nlohmann::json::object();
    j["avg_f1"] = m.avg_f1;
    j["miou"]   = m.miou;
    for (int c = 0; c < kNumClasses; ++c) {
        const std::string name(kClassNames[static_cast<std::size_t>(c)]);
        j["per_class"][name] = {{"f1", m.per_class_f1[static_cast<std::size_t>(c)]},
                                {"iou", m.per_class_iou[static_cast<std::size_t>(c)]},
                                {"present", m.present[static_cast<std::size_t>(c)]}};
    }
}

void ConfusionMatrix::add(const LayoutMap& target, const LayoutMap& prediction) {
    if (target.height != prediction.height || target.width != prediction.width) {
        throw ShapeError("confusion matrix: layout sizes differ");
    }
    for (std::size_t i = 0; i < target.classes.size(); ++i) {
        const auto t = target.classes[i], p = prediction.classes[i];
        if (t >= kNumClasses || p >= kNumClasses) throw ShapeError("confusion matrix: class out of range");
        ++counts_[t][p];
    }
}

SegMetrics ConfusionMatrix::metrics() const {
    SegMetrics m;
    int present = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        std::int64_t tp = counts_[ci][ci], fp = 0, fn = 0;
        for (int o = 0; o < kNumClasses; ++o) {
            if (o == c) continue;
            fp += counts_[static_cast<std::size_t>(o)][ci];
            fn += counts_[ci][static_cast<std::size_t>(o)];
        }
        m.present[ci] = tp + fn > 0;
        if (!m.present[ci]) {
            m.per_class_f1[ci] = m.per_class_iou[ci] = fp == 0 ? 1.0 : 0.0;
            continue;
        }
        m.per_class_f1[ci]  = 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
        m.per_class_iou[ci] = tp / static_cast<double>(tp + fp + fn);
        m.avg_f1 += m.per_class_f1[ci];
        m.miou += m.per_class_iou[ci];
        ++present;
    }
    if (present > 0) {
        m.avg_f1 /= present;
        m.miou /= present;
    }
    return m;
}

SegMetrics segmentation_metrics(const LayoutMap& target, const LayoutMap& prediction) {
    ConfusionMatrix cm;
    cm.add(target, prediction);
    return cm.metrics();
}

}  // namespace aerialgen::stage1
