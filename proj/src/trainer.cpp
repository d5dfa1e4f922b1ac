#include "tbseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "tbseg/error.hpp"
#include "tbseg/parallel.hpp"
#include "tbseg/rng.hpp"

namespace tbseg {

namespace {

// Stream identifiers for derive_seed.
constexpr std::uint64_t kSplitStream = 0x5117;
constexpr std::uint64_t kShuffleStream = 0x5AFF;
constexpr std::uint64_t kAugmentStream = 0xA06;

template <class F>
void for_each_value(UNetParams& p, const UNetParams& q, F&& f) {
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        auto pw = p.layers[l].weights.data();
        auto qw = q.layers[l].weights.data();
        for (std::size_t i = 0; i < pw.size(); ++i) f(pw[i], qw[i]);
        auto& pb = p.layers[l].bias;
        const auto& qb = q.layers[l].bias;
        for (std::size_t i = 0; i < pb.size(); ++i) f(pb[i], qb[i]);
    }
}

Tensor4 mask_tensor(const MaskImage& mask) {
    std::vector<float> v(mask.pixels.begin(), mask.pixels.end());
    return Tensor4({1, 1, mask.height, mask.width}, std::move(v));
}

ProbabilityMap probabilities(const Tensor4& logits) {
    for (float z : logits.values()) {
        if (std::isnan(z)) throw NumericError("network produced NaN logits");
    }
    const Tensor4 p = sigmoid(logits);
    return ProbabilityMap(p.w(), p.h(), p.values());
}

}  // namespace

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw DomainError("learning rate must be > 0");
    if (batch_size < 1) throw DomainError("batch size must be >= 1");
    if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw DomainError("split ratio must be in (0, 1)");
    if (!(threshold >= 0.0f && threshold <= 1.0f)) throw DomainError("threshold must be in [0, 1]");
}

AdamState AdamState::zeros_like(const UNetParams& params) {
    return {params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(UNetParams& params, const UNetParams& grads, AdamState& state, const TrainConfig& cfg) {
    if (grads.layers.size() != params.layers.size() || state.m.layers.size() != params.layers.size()) {
        throw ShapeError("adam_step: parameter, gradient and state layouts differ");
    }
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        if (grads.layers[l].weights.shape() != params.layers[l].weights.shape() ||
            grads.layers[l].bias.size() != params.layers[l].bias.size()) {
            throw ShapeError("adam_step: gradient layout differs at layer " + std::to_string(l));
        }
    }
    for (float g : grads.flatten()) {
        if (!std::isfinite(g)) throw NumericError("adam_step: non-finite gradient");
    }

    state.t += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    UNetParams& m = state.m;
    UNetParams& v = state.v;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto update = [&](float& theta, float g, float& mi, float& vi) {
            const double md = cfg.beta1 * mi + (1.0 - cfg.beta1) * g;
            const double vd = cfg.beta2 * vi + (1.0 - cfg.beta2) * static_cast<double>(g) * g;
            mi = static_cast<float>(md);
            vi = static_cast<float>(vd);
            theta = static_cast<float>(theta - cfg.learning_rate * (md / c1) / (std::sqrt(vd / c2) + cfg.epsilon));
        };
        auto pw = params.layers[l].weights.data();
        auto gw = grads.layers[l].weights.data();
        auto mw = m.layers[l].weights.data();
        auto vw = v.layers[l].weights.data();
        for (std::size_t i = 0; i < pw.size(); ++i) update(pw[i], gw[i], mw[i], vw[i]);
        auto& pb = params.layers[l].bias;
        for (std::size_t i = 0; i < pb.size(); ++i) {
            update(pb[i], grads.layers[l].bias[i], m.layers[l].bias[i], v.layers[l].bias[i]);
        }
    }
}

DatasetSplit split_dataset(const Dataset& dataset, double ratio, std::uint64_t seed) {
    if (dataset.empty()) throw DomainError(ErrorCode::EmptyDataset, "split_dataset: dataset is empty");
    if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("split_dataset: ratio must be in (0, 1)");
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    for (std::size_t i = order.size() - 1; i > 0; --i) {
        std::swap(order[i], order[rng.uniform_index(i + 1)]);
    }
    // The epsilon keeps products such as 0.29 * 100 from flooring one short.
    const auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(dataset.size()) + 1e-9));
    DatasetSplit s;
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_train ? s.train : s.test).push_back(dataset[order[i]]);
    }
    return s;
}

template <class T>
Raster<T> apply_dihedral(const Raster<T>& r, Dihedral d) {
    const bool needs_square = d != Dihedral::Identity && d != Dihedral::FlipHorizontal && d != Dihedral::FlipVertical;
    if (needs_square && r.width != r.height) {
        throw ShapeError("apply_dihedral: rotation or diagonal reflection of a non-square " +
                         std::to_string(r.width) + "x" + std::to_string(r.height) + " raster");
    }
    const std::size_t w = r.width, h = r.height;
    Raster<T> out(w, h);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            std::size_t sx = x, sy = y;
            switch (d) {
                case Dihedral::Identity: break;
                case Dihedral::Rot90: sx = y; sy = w - 1 - x; break;
                case Dihedral::Rot180: sx = w - 1 - x; sy = h - 1 - y; break;
                case Dihedral::Rot270: sx = h - 1 - y; sy = x; break;
                case Dihedral::FlipHorizontal: sx = w - 1 - x; break;
                case Dihedral::FlipVertical: sy = h - 1 - y; break;
                case Dihedral::Transpose: sx = y; sy = x; break;
                case Dihedral::AntiTranspose: sx = h - 1 - y; sy = w - 1 - x; break;
            }
            out.at(x, y) = r.at(sx, sy);
        }
    }
    return out;
}

template Raster<std::uint8_t> apply_dihedral(const Raster<std::uint8_t>&, Dihedral);
template Raster<float> apply_dihedral(const Raster<float>&, Dihedral);

Dihedral draw_dihedral(std::uint64_t seed) {
    Rng rng(seed);
    return static_cast<Dihedral>(rng.uniform_index(8));
}

std::pair<Image2D, MaskImage> augment(const Image2D& image, const MaskImage& mask, std::uint64_t seed) {
    const Dihedral d = draw_dihedral(seed);
    MaskImage m;
    static_cast<Raster<std::uint8_t>&>(m) = apply_dihedral<std::uint8_t>(mask, d);
    return {apply_dihedral(image, d), std::move(m)};
}

Tensor4 to_batch(const std::vector<const Image2D*>& images) {
    if (images.empty()) throw ShapeError("to_batch: no images");
    const std::size_t w = images.front()->width, h = images.front()->height;
    Tensor4 t({images.size(), 1, h, w});
    for (std::size_t n = 0; n < images.size(); ++n) {
        if (images[n]->width != w || images[n]->height != h) throw ShapeError("to_batch: images differ in size");
        const auto v = normalize(*images[n]);
        std::copy(v.begin(), v.end(), t.plane(n, 0));
    }
    return t;
}

EvalReport evaluate(const UNetConfig& ucfg, const UNetParams& params, const Dataset& samples, float threshold,
                    std::size_t threads) {
    std::vector<ConfusionCounts> per_sample(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        const Tensor4 logits = infer(ucfg, params, to_batch({&samples[i].image}));
        per_sample[i] = confusion(binarize(probabilities(logits), threshold), samples[i].mask);
    });
    EvalReport r;
    double iou_sum = 0.0;
    for (const auto& c : per_sample) {
        r.counts += c;
        iou_sum += iou(c);
    }
    if (!samples.empty()) {
        r.mean_iou = iou_sum / static_cast<double>(samples.size());
        r.pooled_iou = iou(r.counts);
        r.pixel_accuracy = pixel_accuracy(r.counts);
    }
    return r;
}

std::string history_csv(const TrainHistory& history) {
    std::string out = "epoch,train_loss,test_iou,test_pixel_acc\n";
    char line[128];
    for (const auto& r : history) {
        std::snprintf(line, sizeof line, "%zu,%.6f,%.6f,%.6f\n", r.epoch, r.train_loss, r.test_iou,
                      r.test_pixel_accuracy);
        out += line;
    }
    return out;
}

TrainResult train(const TrainConfig& cfg, const Dataset& dataset, const UNetConfig& ucfg,
                  const TrainObserver& observer) {
    cfg.validate();
    ucfg.validate();
    if (dataset.empty()) throw DomainError(ErrorCode::EmptyDataset, "train: dataset is empty");
    const std::size_t w = dataset.front().image.width, h = dataset.front().image.height;
    for (const auto& s : dataset) {
        if (s.image.width != w || s.image.height != h || s.mask.width != w || s.mask.height != h) {
            throw ShapeError("train: sample " + s.name + " is not " + std::to_string(w) + "x" + std::to_string(h));
        }
    }
    if (w % ucfg.size_divisor() != 0 || h % ucfg.size_divisor() != 0) {
        throw ShapeError("train: tile size " + std::to_string(w) + "x" + std::to_string(h) +
                         " must be divisible by 2^depth = " + std::to_string(ucfg.size_divisor()));
    }
    if (cfg.augment && w != h) throw ShapeError("train: augmentation needs square tiles");

    const DatasetSplit split = split_dataset(dataset, cfg.split_ratio, derive_seed(cfg.seed, kSplitStream));
    if (observer.on_split) observer.on_split(split.train.size(), split.test.size());
    if (split.train.empty() || split.test.empty()) {
        throw DomainError("train: split leaves " + std::to_string(split.train.size()) + " train / " +
                          std::to_string(split.test.size()) + " test samples; both must be non-empty");
    }

    TrainResult result;
    result.params = init_params(ucfg, cfg.seed);
    AdamState state = AdamState::zeros_like(result.params);

    std::vector<std::size_t> order(split.train.size());
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle(derive_seed(cfg.seed, kShuffleStream, epoch));
        for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[shuffle.uniform_index(i + 1)]);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t count = std::min(cfg.batch_size, order.size() - start);
            std::vector<UNetParams> grads(count);
            std::vector<double> losses(count);
            parallel_for(count, cfg.threads, [&](std::size_t k) {
                const Sample& s = split.train[order[start + k]];
                Tensor4 input, target;
                if (cfg.augment) {
                    const auto [img, mask] =
                        augment(s.image, s.mask, derive_seed(cfg.seed, kAugmentStream ^ epoch, start + k));
                    input = to_batch({&img});
                    target = mask_tensor(mask);
                } else {
                    input = to_batch({&s.image});
                    target = mask_tensor(s.mask);
                }
                ForwardResult<float> f = forward(ucfg, result.params, input);
                losses[k] = bce_with_logits(f.logits, target);
                grads[k] = backward(result.params, std::move(f.cache), bce_with_logits_backward(f.logits, target));
            });

            UNetParams total = std::move(grads[0]);
            for (std::size_t k = 1; k < count; ++k) {
                for_each_value(total, grads[k], [](float& a, float b) { a += b; });
            }
            const float scale = 1.0f / static_cast<float>(count);
            for_each_value(total, total, [scale](float& a, float) { a *= scale; });
            for (double l : losses) loss_sum += l;
            if (!std::isfinite(loss_sum)) {
                throw NumericError("training diverged: non-finite loss in epoch " + std::to_string(epoch));
            }
            adam_step(result.params, total, state, cfg);
        }

        const EvalReport report = evaluate(ucfg, result.params, split.test, cfg.threshold, cfg.threads);
        EpochRecord rec{epoch, loss_sum / static_cast<double>(order.size()), report.mean_iou, report.pixel_accuracy};
        result.history.push_back(rec);
        if (observer.on_epoch) observer.on_epoch(rec);
    }
    result.final_report = evaluate(ucfg, result.params, split.test, cfg.threshold, cfg.threads);
    return result;
}

}  // namespace tbseg
