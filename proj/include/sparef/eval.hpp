#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "json.hpp"

#include "sparef/tensor.hpp"

namespace sparef {

using Json = nlohmann::ordered_json;

/// Accumulated gt x predicted counts over a split; ignore pixels excluded.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int64_t num_classes)
        : num_classes_(num_classes), counts_(size_t(num_classes * num_classes), 0) {}

    void add(const LabelMap& pred, const LabelMap& gt) {
        if (pred.height != gt.height || pred.width != gt.width)
            throw ShapeError("confusion matrix operand dims mismatch");
        for (size_t i = 0; i < gt.labels.size(); ++i) {
            const uint8_t g = gt.labels[i];
            if (g == LabelMap::kIgnoreLabel) continue;
            const uint8_t p = pred.labels[i];
            if (g >= num_classes_ || p >= num_classes_)
                throw ArgumentError("label outside [0, num_classes)");
            ++counts_[size_t(g) * size_t(num_classes_) + p];
        }
    }

    int64_t at(int64_t gt, int64_t pred) const {
        return counts_[size_t(gt * num_classes_ + pred)];
    }

    struct ClassIoU {
        int64_t cls;
        double iou;
    };

    /// IoU_c = TP / (TP + FP + FN); classes absent from both ground truth and
    /// prediction are excluded.
    std::vector<ClassIoU> class_ious() const {
        std::vector<ClassIoU> out;
        for (int64_t c = 0; c < num_classes_; ++c) {
            const int64_t tp = at(c, c);
            int64_t fp = 0, fn = 0;
            for (int64_t o = 0; o < num_classes_; ++o) {
                if (o == c) continue;
                fp += at(o, c);
                fn += at(c, o);
            }
            if (tp + fp + fn == 0) continue;
            out.push_back({c, double(tp) / double(tp + fp + fn)});
        }
        return out;
    }

    int64_t num_classes() const { return num_classes_; }

private:
    int64_t num_classes_;
    std::vector<int64_t> counts_;
};

inline double mean_iou(const std::vector<ConfusionMatrix::ClassIoU>& ious) {
    if (ious.empty()) throw ArgumentError("mean IoU of an empty class list");
    double sum = 0;
    for (const auto& c : ious) sum += c.iou;
    return sum / double(ious.size());
}

struct StageTiming {
    double baseline_ms = 0;
    double selector_ms = 0;
    double extractor_ms = 0;
    double ensembler_ms = 0;
};

struct EvalReport {
    std::vector<ConfusionMatrix::ClassIoU> per_class;
    double miou = std::numeric_limits<double>::quiet_NaN();
    int64_t images = 0;

    double density = 0, recall = 0, precision = 0;

    // MAC totals over the whole split (selector is all elementwise: 0)
    int64_t macs_baseline = 0;
    int64_t macs_selector = 0;
    int64_t macs_extractor = 0;
    int64_t macs_ensembler = 0;
    int64_t macs_dense_baseline_fullres = 0;  // per image, measured fully active

    StageTiming timing;
    bool has_timing = false;

    int64_t macs_total() const {
        return macs_baseline + macs_selector + macs_extractor + macs_ensembler;
    }

    Json to_json(bool include_timing) const {
        Json per = Json::array();
        for (const auto& c : per_class) per.push_back(Json{{"class", c.cls}, {"iou", c.iou}});
        Json j{{"images", images},
               {"per_class_iou", per},
               {"miou", std::isnan(miou) ? Json(nullptr) : Json(miou)},
               {"selector", Json{{"density", density}, {"recall", recall}, {"precision", precision}}},
               {"macs",
                Json{{"baseline", macs_baseline},
                     {"selector", macs_selector},
                     {"extractor", macs_extractor},
                     {"ensembler", macs_ensembler},
                     {"total", macs_total()},
                     {"dense_baseline_fullres", macs_dense_baseline_fullres}}}};
        if (include_timing && has_timing)
            j["timing_ms"] = Json{{"baseline", timing.baseline_ms},
                                  {"selector", timing.selector_ms},
                                  {"extractor", timing.extractor_ms},
                                  {"ensembler", timing.ensembler_ms}};
        return j;
    }
};

}  // namespace sparef
