#include <doctest.h>

#include <cmath>
#include <set>

#include "oracles.hpp"
#include "tbseg/error.hpp"
#include "tbseg/trainer.hpp"

using namespace tbseg;

namespace {

UNetParams scalar_params(float theta) {
    UNetParams p;
    p.layers.push_back(ConvParams::conv(1, 1, 1));
    p.layers[0].weights.data()[0] = theta;
    p.layers[0].bias[0] = theta;
    return p;
}

// Bias-corrected Adam for one coordinate, evaluated in double.
struct AdamOracle {
    double m = 0, v = 0;
    int t = 0;
    double step(double theta, double g, double lr = 1e-3) {
        ++t;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
        return theta - lr * mh / (std::sqrt(vh) + 1e-8);
    }
};

Dataset tiny_dataset(std::size_t count, std::size_t size, std::uint64_t seed) {
    return gen_synthetic({count, size, seed});
}

// Depth-1 base-1 model whose logits are the constant head bias.
UNetParams constant_model(const UNetConfig& cfg, float logit) {
    UNetParams p = init_params(cfg, 0);
    for (auto& l : p.layers) {
        for (auto& w : l.weights.data()) w = 0.0f;
    }
    p.layers.back().bias[0] = logit;
    return p;
}

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    UNetParams p = scalar_params(1.0f);
    const UNetParams before = p;
    AdamState s = AdamState::zeros_like(p);
    adam_step(p, p.zeros_like(), s, TrainConfig{});
    CHECK(p == before);
    CHECK(s.t == 1);
}

TEST_CASE("adam: first step and constant-gradient steps match the double oracle") {
    UNetParams p = scalar_params(1.0f);
    UNetParams g = scalar_params(0.5f);
    AdamState s = AdamState::zeros_like(p);
    AdamOracle o;
    double theta = 1.0;
    for (int i = 0; i < 3; ++i) {
        const double prev = theta;
        theta = o.step(theta, 0.5);
        adam_step(p, g, s, TrainConfig{});
        CHECK(p.layers[0].weights.values()[0] == doctest::Approx(theta).epsilon(1e-7));
        CHECK(std::abs(theta - prev) == doctest::Approx(1e-3).epsilon(1e-4));
    }
    // Hand evaluation: 1 - 1e-3 * 0.5 / (0.5 + 1e-8).
    CHECK(AdamOracle{}.step(1.0, 0.5) == doctest::Approx(0.99900000002).epsilon(1e-13));
    CHECK(AdamOracle{}.step(1.0, 0.5) == doctest::Approx(0.999000002).epsilon(1e-8));
}

TEST_CASE("adam: a non-finite gradient is rejected before any update") {
    UNetParams p = scalar_params(1.0f);
    UNetParams g = scalar_params(0.5f);
    g.layers[0].bias[0] = std::nanf("");
    AdamState s = AdamState::zeros_like(p);
    const UNetParams before = p;
    CHECK_THROWS_AS(adam_step(p, g, s, TrainConfig{}), NumericError);
    CHECK(p == before);
    CHECK(s.t == 0);
}

TEST_CASE("split sizes follow the floor rule and partition the dataset") {
    Dataset ds(150);
    for (std::size_t i = 0; i < ds.size(); ++i) ds[i].name = "s" + std::to_string(i);
    const auto s = split_dataset(ds, 0.8, 1);
    CHECK(s.train.size() == 120);
    CHECK(s.test.size() == 30);
    std::set<std::string> names;
    for (const auto& x : s.train) names.insert(x.name);
    for (const auto& x : s.test) names.insert(x.name);
    CHECK(names.size() == 150);

    const auto again = split_dataset(ds, 0.8, 1);
    for (std::size_t i = 0; i < 30; ++i) CHECK(again.test[i].name == s.test[i].name);

    CHECK(split_dataset(Dataset(5), 0.5, 3).train.size() == 2);
    CHECK(split_dataset(Dataset(94), 0.8, 3).train.size() == 75);
    CHECK_THROWS_AS(split_dataset(Dataset(5), 1.0, 3), DomainError);
    CHECK_THROWS_AS(split_dataset(Dataset{}, 0.5, 3), DomainError);
}

TEST_CASE("dihedral transforms") {
    const Image2D sq(2, 2, std::vector<std::uint8_t>{1, 2, 3, 4});
    CHECK(apply_dihedral(sq, Dihedral::Identity) == sq);
    CHECK(apply_dihedral(sq, Dihedral::Rot90).pixels == std::vector<std::uint8_t>{3, 1, 4, 2});
    CHECK(apply_dihedral(sq, Dihedral::Rot180).pixels == std::vector<std::uint8_t>{4, 3, 2, 1});
    CHECK(apply_dihedral(sq, Dihedral::Rot270).pixels == std::vector<std::uint8_t>{2, 4, 1, 3});
    CHECK(apply_dihedral(sq, Dihedral::FlipHorizontal).pixels == std::vector<std::uint8_t>{2, 1, 4, 3});
    CHECK(apply_dihedral(sq, Dihedral::FlipVertical).pixels == std::vector<std::uint8_t>{3, 4, 1, 2});
    CHECK(apply_dihedral(sq, Dihedral::Transpose).pixels == std::vector<std::uint8_t>{1, 3, 2, 4});
    CHECK(apply_dihedral(sq, Dihedral::AntiTranspose).pixels == std::vector<std::uint8_t>{4, 2, 3, 1});

    Rng rng(4);
    Image2D img(5, 5);
    for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng.uniform_index(256));
    CHECK(apply_dihedral(apply_dihedral(img, Dihedral::FlipHorizontal), Dihedral::FlipHorizontal) == img);
    Image2D r = img;
    for (int i = 0; i < 4; ++i) r = apply_dihedral(r, Dihedral::Rot90);
    CHECK(r == img);

    const Image2D wide(3, 2);
    CHECK_NOTHROW(apply_dihedral(wide, Dihedral::FlipVertical));
    CHECK_THROWS_AS(apply_dihedral(wide, Dihedral::Rot90), ShapeError);
}

TEST_CASE("augment moves image and mask together and preserves foreground") {
    const Sample s = tiny_dataset(1, 32, 5).front();
    std::set<int> seen;
    for (std::uint64_t seed = 0; seed < 64; ++seed) {
        const auto [img, mask] = augment(s.image, s.mask, seed);
        const Dihedral d = draw_dihedral(seed);
        seen.insert(static_cast<int>(d));
        CHECK(img == apply_dihedral(s.image, d));
        CHECK(mask.pixels == apply_dihedral<std::uint8_t>(s.mask, d).pixels);
        CHECK(mask.foreground() == s.mask.foreground());
    }
    CHECK(seen.size() == 8);
}

TEST_CASE("evaluate: constant models against brute-force counts") {
    const UNetConfig cfg{1, 1, 1, 1};
    Dataset ds = tiny_dataset(4, 32, 2);

    const EvalReport all_fg = evaluate(cfg, constant_model(cfg, 5.0f), ds, 0.5f);
    std::uint64_t fg = 0;
    for (const auto& s : ds) fg += s.mask.foreground();
    CHECK(all_fg.counts.tp == fg);
    CHECK(all_fg.counts.fp == 4 * 32 * 32 - fg);
    CHECK(all_fg.counts.fn == 0);
    CHECK(all_fg.counts.tn == 0);

    Rng rng(8);
    for (auto& s : ds)
        for (auto& v : s.mask.pixels) v = rng.uniform() < 0.3 ? 1 : 0;
    const EvalReport r = evaluate(cfg, constant_model(cfg, 5.0f), ds, 0.5f, 3);
    double iou_sum = 0;
    ConfusionCounts pooled;
    for (const auto& s : ds) {
        const auto c = oracle::set_counts(std::vector<std::uint8_t>(32 * 32, 1), s.mask.pixels, 32, 32);
        iou_sum += static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp + c.fn);
        pooled += ConfusionCounts{c.tp, c.fp, c.fn, c.tn};
    }
    CHECK(r.counts == pooled);
    CHECK(r.mean_iou == doctest::Approx(iou_sum / 4).epsilon(1e-12));
    CHECK(r.pixel_accuracy == doctest::Approx(static_cast<double>(pooled.tp + pooled.tn) / pooled.total()));

    for (auto& s : ds) std::fill(s.mask.pixels.begin(), s.mask.pixels.end(), 0);
    const EvalReport empty = evaluate(cfg, constant_model(cfg, -5.0f), ds, 0.5f);
    CHECK(empty.mean_iou == 1.0);
    CHECK(empty.pooled_iou == 1.0);
    CHECK(empty.pixel_accuracy == 1.0);
}

TEST_CASE("history csv format") {
    const TrainHistory h{{1, 0.5, 0.25, 0.125}, {2, 1.0 / 3.0, 2.0 / 3.0, 1.0}};
    CHECK(history_csv(h) ==
          "epoch,train_loss,test_iou,test_pixel_acc\n1,0.500000,0.250000,0.125000\n2,0.333333,0.666667,1.000000\n");
}

TEST_CASE("train with zero epochs returns the initial parameters") {
    TrainConfig cfg;
    cfg.epochs = 0;
    const UNetConfig ucfg{1, 2, 1, 1};
    const auto r = train(cfg, tiny_dataset(5, 32, 1), ucfg);
    CHECK(r.history.empty());
    CHECK(r.params == init_params(ucfg, cfg.seed));
}

TEST_CASE("train is deterministic and independent of the thread count") {
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 3;
    const UNetConfig ucfg{1, 2, 1, 1};
    const Dataset ds = tiny_dataset(10, 32, 3);
    std::size_t n_train = 0, n_test = 0;
    TrainObserver obs;
    obs.on_split = [&](std::size_t a, std::size_t b) { n_train = a, n_test = b; };
    const auto a = train(cfg, ds, ucfg, obs);
    CHECK(n_train == 8);
    CHECK(n_test == 2);
    cfg.threads = 3;
    const auto b = train(cfg, ds, ucfg);
    CHECK(a.params == b.params);
    CHECK(history_csv(a.history) == history_csv(b.history));
    CHECK(a.history.size() == 2);
    CHECK_FALSE(a.params == init_params(ucfg, cfg.seed));
}

TEST_CASE("training loss falls on a small fixed set") {
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.learning_rate = 1e-2;
    cfg.augment = false;
    const auto r = train(cfg, tiny_dataset(10, 32, 4), UNetConfig{2, 4, 1, 1});
    CHECK(r.history.back().train_loss < 0.5 * r.history.front().train_loss);
}

TEST_CASE("train preconditions") {
    const UNetConfig ucfg{2, 2, 1, 1};
    TrainConfig cfg;
    cfg.epochs = 1;

    Dataset mixed = tiny_dataset(4, 32, 1);
    mixed[2] = tiny_dataset(1, 48, 2)[0];
    CHECK_THROWS_AS(train(cfg, mixed, ucfg), ShapeError);

    CHECK_THROWS_AS(train(cfg, tiny_dataset(4, 34, 1), ucfg), ShapeError);
    CHECK_THROWS_AS(train(cfg, tiny_dataset(1, 32, 1), ucfg), DomainError);
    CHECK_THROWS_AS(train(cfg, Dataset{}, ucfg), DomainError);

    cfg.batch_size = 0;
    CHECK_THROWS_AS(train(cfg, tiny_dataset(4, 32, 1), ucfg), DomainError);
}
