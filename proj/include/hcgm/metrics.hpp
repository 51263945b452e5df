#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hcgm/errors.hpp"

namespace hcgm {

// Pixel agreement counts. merge() is componentwise addition, so evaluation
// can map-reduce over tiles or workers with identical results.
struct ConfusionMatrix {
    uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

    uint64_t total() const { return tp + fp + tn + fn; }
};

inline ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b) {
    return ConfusionMatrix{a.tp + b.tp, a.fp + b.fp, a.tn + b.tn, a.fn + b.fn};
}

inline ConfusionMatrix accumulate(std::span<const uint8_t> pred, std::span<const uint8_t> label) {
    if (pred.size() != label.size())
        throw ShapeError("accumulate: prediction has " + std::to_string(pred.size()) +
                         " pixels, label has " + std::to_string(label.size()));
    ConfusionMatrix cm;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0;
        const bool l = label[i] != 0;
        if (p && l) ++cm.tp;
        else if (p && !l) ++cm.fp;
        else if (!p && !l) ++cm.tn;
        else ++cm.fn;
    }
    return cm;
}

struct MetricReport {
    double f1 = 0, precision = 0, recall = 0, oa = 0, iou = 0;
};

// Precision, recall, F1 (harmonic mean), overall accuracy, IoU of the changed
// class. Any score with a zero denominator reports 0; OA is always defined
// for a non-empty matrix.
inline MetricReport scores(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw Error("scores: confusion matrix is empty");
    const double tp = static_cast<double>(cm.tp);
    const double fp = static_cast<double>(cm.fp);
    const double tn = static_cast<double>(cm.tn);
    const double fn = static_cast<double>(cm.fn);
    MetricReport r;
    r.precision = (tp + fp) > 0 ? tp / (tp + fp) : 0.0;
    r.recall = (tp + fn) > 0 ? tp / (tp + fn) : 0.0;
    r.f1 = (2 * tp + fp + fn) > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
    r.oa = (tp + tn) / (tp + tn + fp + fn);
    r.iou = (tp + fn + fp) > 0 ? tp / (tp + fn + fp) : 0.0;
    return r;
}

}  // namespace hcgm
