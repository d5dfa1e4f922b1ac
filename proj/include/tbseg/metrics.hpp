#ifndef TBSEG_METRICS_HPP
#define TBSEG_METRICS_HPP

#include <cstdint>
#include <string>

#include "tbseg/raster.hpp"

namespace tbseg {

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;
    std::uint64_t tn = 0;

    std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) noexcept {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// value >= threshold -> 1. Values outside [0, 1] raise DomainError.
MaskImage binarize(const ProbabilityMap& probs, float threshold = 0.5f);

ConfusionCounts confusion(const MaskImage& pred, const MaskImage& truth);

/// tp / (tp + fp + fn); 1.0 when both masks are empty.
double iou(const ConfusionCounts& c) noexcept;

/// (tp + tn) / total; DomainError on an empty tally.
double pixel_accuracy(const ConfusionCounts& c);

/// `iou=<6dp> pixel_acc=<6dp> tp=<n> fp=<n> fn=<n> tn=<n>`
std::string format_report(double iou_value, double accuracy, const ConfusionCounts& c);

}  // namespace tbseg

#endif  // TBSEG_METRICS_HPP
