#ifndef TBSEG_TRAINER_HPP
#define TBSEG_TRAINER_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tbseg/data_io.hpp"
#include "tbseg/metrics.hpp"
#include "tbseg/unet.hpp"

namespace tbseg {

struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t epochs = 50;
    std::size_t batch_size = 4;
    std::uint64_t seed = 42;
    double split_ratio = 0.8;
    bool augment = true;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    float threshold = 0.5f;
    /// Workers for per-sample forward/backward. Results do not depend on it.
    std::size_t threads = 1;

    void validate() const;
};

struct AdamState {
    UNetParams m;
    UNetParams v;
    std::uint64_t t = 0;

    static AdamState zeros_like(const UNetParams& params);
};

/// One bias-corrected Adam update in place. Throws NumericError before
/// touching anything when a gradient is non-finite.
void adam_step(UNetParams& params, const UNetParams& grads, AdamState& state, const TrainConfig& cfg);

struct DatasetSplit {
    Dataset train;
    Dataset test;
};

/// Seeded Fisher-Yates shuffle, then the first floor(ratio * N) samples train.
DatasetSplit split_dataset(const Dataset& dataset, double ratio, std::uint64_t seed);

/// The eight symmetries of the square.
enum class Dihedral : std::uint8_t {
    Identity,
    Rot90,
    Rot180,
    Rot270,
    FlipHorizontal,
    FlipVertical,
    Transpose,
    AntiTranspose,
};

/// Rotations and the two diagonal reflections require a square raster.
template <class T>
Raster<T> apply_dihedral(const Raster<T>& r, Dihedral d);

/// Applies one uniformly drawn transform to both image and mask.
std::pair<Image2D, MaskImage> augment(const Image2D& image, const MaskImage& mask, std::uint64_t seed);
Dihedral draw_dihedral(std::uint64_t seed);

struct EvalReport {
    double mean_iou = 0.0;    // mean of per-sample IoU (headline)
    double pooled_iou = 0.0;  // IoU of the summed counts
    double pixel_accuracy = 0.0;
    ConfusionCounts counts;
};

/// Tensor (n, 1, h, w) of samples scaled to [0, 1].
Tensor4 to_batch(const std::vector<const Image2D*>& images);

EvalReport evaluate(const UNetConfig& ucfg, const UNetParams& params, const Dataset& samples, float threshold,
                    std::size_t threads = 1);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double test_iou = 0.0;
    double test_pixel_accuracy = 0.0;
};

using TrainHistory = std::vector<EpochRecord>;

/// `epoch,train_loss,test_iou,test_pixel_acc` header plus one 6-dp row per epoch.
std::string history_csv(const TrainHistory& history);

struct TrainObserver {
    std::function<void(std::size_t train, std::size_t test)> on_split;
    std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
    UNetParams params;
    TrainHistory history;
    EvalReport final_report;  // test split, after the last epoch
};

/// Splits, initialises from cfg.seed, and runs the epoch loop. Bitwise
/// deterministic for fixed inputs regardless of cfg.threads.
TrainResult train(const TrainConfig& cfg, const Dataset& dataset, const UNetConfig& ucfg,
                  const TrainObserver& observer = {});

}  // namespace tbseg

#endif  // TBSEG_TRAINER_HPP
