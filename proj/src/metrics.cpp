#include "tbseg/metrics.hpp"

#include <cstdio>

#include "tbseg/error.hpp"

namespace tbseg {

MaskImage binarize(const ProbabilityMap& probs, float threshold) {
    MaskImage m(probs.width, probs.height);
    for (std::size_t i = 0; i < probs.pixels.size(); ++i) {
        const float p = probs.pixels[i];
        if (!(p >= 0.0f && p <= 1.0f)) {
            throw DomainError("binarize: probability " + std::to_string(p) + " at pixel " + std::to_string(i) +
                              " is outside [0, 1]");
        }
        m.pixels[i] = p >= threshold ? 1 : 0;
    }
    return m;
}

ConfusionCounts confusion(const MaskImage& pred, const MaskImage& truth) {
    if (pred.width != truth.width || pred.height != truth.height) {
        throw ShapeError("confusion: prediction " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                         " vs truth " + std::to_string(truth.width) + "x" + std::to_string(truth.height));
    }
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.pixels.size(); ++i) {
        const bool p = pred.pixels[i] != 0, t = truth.pixels[i] != 0;
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double iou(const ConfusionCounts& c) noexcept {
    const std::uint64_t uni = c.tp + c.fp + c.fn;
    if (uni == 0) return 1.0;
    return static_cast<double>(c.tp) / static_cast<double>(uni);
}

double pixel_accuracy(const ConfusionCounts& c) {
    if (c.total() == 0) throw DomainError("pixel_accuracy: no pixels counted");
    return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
}

std::string format_report(double iou_value, double accuracy, const ConfusionCounts& c) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "iou=%.6f pixel_acc=%.6f tp=%llu fp=%llu fn=%llu tn=%llu", iou_value, accuracy,
                  static_cast<unsigned long long>(c.tp), static_cast<unsigned long long>(c.fp),
                  static_cast<unsigned long long>(c.fn), static_cast<unsigned long long>(c.tn));
    return buf;
}

}  // namespace tbseg
