// Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "tbseg/cli.hpp"
#include "tbseg/data_io.hpp"
#include "tbseg/error.hpp"
#include "tbseg/metrics.hpp"
#include "tbseg/tiling.hpp"
#include "tbseg/unet.hpp"

using namespace tbseg;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and budgets.
constexpr double kGradTolerance = 1e-3;
constexpr double kGradBudgetSec = 30.0;
constexpr double kKernelTolerance = 1e-5;
constexpr int kKernelShapes = 120;  // per kernel
constexpr double kKernelBudgetSec = 10.0;
constexpr int kTilingFrames = 50;
constexpr double kTilingBudgetSec = 30.0;
constexpr int kMetricPairs = 100;
constexpr double kLearnIou = 0.80;
constexpr double kLearnAccuracy = 0.90;
constexpr double kLearnBudgetSec = 600.0;

struct Outcome {
    bool pass;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct CliRun {
    int code;
    std::string out, err;
};

CliRun tbseg(const std::vector<std::string>& args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), {}};
}

const fs::path kWork = fs::temp_directory_path() / "tbseg_acceptance";

Outcome gradient_correctness() {
    const auto t0 = Clock::now();
    const GradCheckResult r = check_unet_gradients(UNetGradCheckOptions{});
    const double dt = seconds_since(t0);
    return {r.max_relative_error < kGradTolerance && dt < kGradBudgetSec,
            fmt("depth 1, base 2, 8x8: %zu params, max relative error %.3e (< %.0e), %.2fs (< %.0fs)",
                r.analytic.size(), r.max_relative_error, kGradTolerance, dt, kGradBudgetSec)};
}

Outcome kernel_oracle() {
    const auto t0 = Clock::now();
    Rng rng(2024);
    double worst_conv = 0, worst_up = 0, worst_pool = 0;
    bool argmax_ok = true;
    auto dim = [&] { return static_cast<std::size_t>(1 + rng.uniform_index(8)); };
    for (int i = 0; i < kKernelShapes; ++i) {
        const Shape4 s{dim(), dim(), dim(), dim()};
        const std::size_t k = rng.uniform() < 0.25 ? 1 : 3;
        const auto p = oracle::random_conv(rng, dim(), s.c, k);
        const Tensor4 x = oracle::random_tensor(rng, s);
        const auto want = oracle::conv2d(x, p);
        const Tensor4 got = conv2d(x, p);
        for (std::size_t j = 0; j < want.size(); ++j) worst_conv = std::max(worst_conv, std::abs(got.values()[j] - want[j]));
    }
    for (int i = 0; i < kKernelShapes; ++i) {
        const Shape4 s{dim(), dim(), dim(), dim()};
        const auto p = oracle::random_upconv(rng, s.c, dim());
        const Tensor4 x = oracle::random_tensor(rng, s);
        const auto want = oracle::upconv2(x, p);
        const Tensor4 got = upconv2(x, p);
        for (std::size_t j = 0; j < want.size(); ++j) worst_up = std::max(worst_up, std::abs(got.values()[j] - want[j]));
    }
    for (int i = 0; i < kKernelShapes; ++i) {
        const Shape4 s{dim(), dim(), 2 * (1 + rng.uniform_index(4)), 2 * (1 + rng.uniform_index(4))};
        Tensor4 x = oracle::random_tensor(rng, s);
        // quantized values make ties common, exercising the tie-break rule
        for (auto& v : x.data()) v = std::round(v * 2.0f) / 2.0f;
        const auto [vals, arg] = oracle::maxpool2(x);
        const auto got = maxpool2(x);
        for (std::size_t j = 0; j < vals.size(); ++j) {
            worst_pool = std::max(worst_pool, static_cast<double>(std::abs(got.output.values()[j] - vals[j])));
            argmax_ok = argmax_ok && got.indices.argmax[j] == arg[j];
        }
    }
    const double dt = seconds_since(t0);
    const double worst = std::max({worst_conv, worst_up, worst_pool});
    return {worst <= kKernelTolerance && argmax_ok && dt < kKernelBudgetSec,
            fmt("%d shapes per kernel, dims <= 8: max abs diff conv %.2e, upconv %.2e, maxpool %.2e (<= %.0e), "
                "argmax %s, %.2fs (< %.0fs)",
                kKernelShapes, worst_conv, worst_up, worst_pool, kKernelTolerance, argmax_ok ? "equal" : "DIFFER",
                dt, kKernelBudgetSec)};
}

Outcome tiling_fidelity() {
    const auto t0 = Clock::now();
    Rng rng(77);
    int identical = 0;
    std::string large_frame = "not run";
    for (int i = 0; i < kTilingFrames; ++i) {
        std::size_t w, h, t;
        if (i == 0) {
            w = 3840, h = 2700, t = 256;
        } else {
            w = 1 + rng.uniform_index(600), h = 1 + rng.uniform_index(600);
            t = 1 + rng.uniform_index(std::min<std::size_t>(std::min(w, h), 300));
        }
        Image2D frame(w, h);
        for (auto& v : frame.pixels) v = static_cast<std::uint8_t>(rng.next_u64());
        const TileGrid g = compute_grid(w, h, t);
        const auto tiles = split_image(pad_image(frame, g), g);
        if (i == 0) {
            large_frame = fmt("3840x2700/256 -> %zux%zu = %zu tiles, padded %zux%zu", g.cols, g.rows, tiles.size(),
                                 g.padded_width(), g.padded_height());
            if (g.cols != 15 || g.rows != 11 || tiles.size() != 165 || g.padded_width() != 3840 ||
                g.padded_height() != 2816) {
                continue;
            }
        }
        identical += stitch(tiles, g) == frame;
    }
    const double dt = seconds_since(t0);
    return {identical == kTilingFrames && dt < kTilingBudgetSec,
            fmt("%d/%d round trips bitwise identical; %s; %.2fs (< %.0fs)", identical, kTilingFrames,
                large_frame.c_str(), dt, kTilingBudgetSec)};
}

Outcome metrics_oracle() {
    Rng rng(5);
    int exact = 0;
    for (int i = 0; i < kMetricPairs; ++i) {
        MaskImage p(16, 16), t(16, 16);
        const double dp = rng.uniform(), dt = rng.uniform();
        for (auto& v : p.pixels) v = rng.uniform() < dp;
        for (auto& v : t.pixels) v = rng.uniform() < dt;
        const auto o = oracle::set_counts(p.pixels, t.pixels, 16, 16);
        const double o_iou = o.tp + o.fp + o.fn == 0 ? 1.0 : static_cast<double>(o.tp) / static_cast<double>(o.tp + o.fp + o.fn);
        const double o_acc = static_cast<double>(o.tp + o.tn) / 256.0;
        const ConfusionCounts c = confusion(p, t);
        exact += c == ConfusionCounts{o.tp, o.fp, o.fn, o.tn} && iou(c) == o_iou && pixel_accuracy(c) == o_acc;
    }
    const ConfusionCounts hand = confusion(MaskImage(2, 2, std::vector<std::uint8_t>{1, 1, 0, 0}),
                                           MaskImage(2, 2, std::vector<std::uint8_t>{0, 1, 0, 1}));
    const bool hand_ok = hand == ConfusionCounts{1, 1, 1, 1} && iou(hand) == 1.0 / 3.0 && pixel_accuracy(hand) == 0.5;
    return {exact == kMetricPairs && hand_ok,
            fmt("%d/%d random 16x16 pairs exact; hand case tp=fp=fn=tn=1 -> iou %.6f, accuracy %.6f", exact,
                kMetricPairs, iou(hand), pixel_accuracy(hand))};
}

struct Metrics {
    double iou = -1, acc = -1;
};

Metrics parse_report(const std::string& line) {
    std::smatch m;
    Metrics r;
    if (std::regex_search(line, m, std::regex(R"(iou=(\d\.\d+) pixel_acc=(\d\.\d+))"))) {
        r.iou = std::stod(m[1]);
        r.acc = std::stod(m[2]);
    }
    return r;
}

std::vector<std::string> benchmark_train_args(const fs::path& out) {
    return {"train", "--data", (kWork / "bench").string(), "--out", out.string(), "--depth", "2",
            "--base-channels", "8", "--epochs", "50", "--seed", "42", "--split", "0.8", "--threads", "1"};
}

Outcome desk_scale_learning() {
    tbseg({"synth", "--out", (kWork / "bench").string(), "--count", "94", "--size", "64", "--seed", "1"});
    const auto t0 = Clock::now();
    const CliRun r = tbseg(benchmark_train_args(kWork / "bench_a.ckpt"));
    const double dt = seconds_since(t0);
    const bool split_ok = r.err.find("train=75 test=19") != std::string::npos;
    const Metrics m = parse_report(r.out);
    return {r.code == 0 && split_ok && m.iou >= kLearnIou && m.acc >= kLearnAccuracy && dt < kLearnBudgetSec,
            fmt("synth 94 @64x64, split %s, depth 2 base 8, 50 epochs, 1 thread: test iou %.6f (>= %.2f), "
                "pixel accuracy %.6f (>= %.2f), %.1fs (< %.0fs)",
                split_ok ? "75/19" : "WRONG", m.iou, kLearnIou, m.acc, kLearnAccuracy, dt, kLearnBudgetSec)};
}

Outcome protocol_fidelity() {
    tbseg({"synth", "--out", (kWork / "p150").string(), "--count", "150", "--size", "32", "--seed", "3"});
    const CliRun r = tbseg({"train", "--data", (kWork / "p150").string(), "--out", (kWork / "p150.ckpt").string(),
                            "--depth", "1", "--base-channels", "2", "--epochs", "1", "--split", "0.8"});
    const bool logged = r.err.find("train=120 test=30") != std::string::npos;
    return {r.code == 0 && logged, logged ? "150 samples, --split 0.8 -> log \"train=120 test=30\""
                                          : "expected log \"train=120 test=30\", got: " + r.err.substr(0, 200)};
}

Outcome reproducibility() {
    // Second invocation of the desk-scale run with identical flags.
    const CliRun b = tbseg(benchmark_train_args(kWork / "bench_b.ckpt"));
    const bool ckpt_same = b.code == 0 && slurp(kWork / "bench_a.ckpt") == slurp(kWork / "bench_b.ckpt") &&
                           !slurp(kWork / "bench_a.ckpt").empty();
    const bool csv_same = slurp(kWork / "bench_a.ckpt.history.csv") == slurp(kWork / "bench_b.ckpt.history.csv") &&
                          !slurp(kWork / "bench_a.ckpt.history.csv").empty();

    Rng rng(9);
    Image2D frame(1000, 700);
    for (auto& v : frame.pixels) v = static_cast<std::uint8_t>(40 + rng.uniform_index(180));
    save_grayscale(kWork / "frame.pgm", frame);
    auto predict = [&](const char* threads, const char* out) {
        return tbseg({"predict", "--model", (kWork / "bench_a.ckpt").string(), "--image",
                      (kWork / "frame.pgm").string(), "--out", (kWork / out).string(), "--tile", "256",
                      "--threads", threads})
            .code;
    };
    const bool predict_same = predict("1", "p1.pgm") == 0 && predict("4", "p4.pgm") == 0 &&
                              slurp(kWork / "p1.pgm") == slurp(kWork / "p4.pgm");
    return {ckpt_same && csv_same && predict_same,
            fmt("two train runs: checkpoint %s, history csv %s; predict 1000x700 --threads 1 vs 4: %s",
                ckpt_same ? "identical" : "DIFFER", csv_same ? "identical" : "DIFFER",
                predict_same ? "identical" : "DIFFER")};
}

Outcome checkpoint_format() {
    const UNetConfig cfg{2, 8, 1, 1};
    const UNetParams p = init_params(cfg, 123);
    const fs::path path = kWork / "roundtrip.ckpt";
    save_checkpoint(p, cfg, path);
    const Checkpoint ck = load_checkpoint(path);
    const std::string original = slurp(path);
    save_checkpoint(ck.params, ck.config, kWork / "roundtrip2.ckpt");
    const bool round_trip = ck.params == p && ck.config == cfg && original == slurp(kWork / "roundtrip2.ckpt");

    auto error_of = [](std::vector<std::uint8_t> bytes) -> std::pair<ErrorCode, std::optional<std::size_t>> {
        try {
            decode_checkpoint(bytes);
        } catch (const CheckpointError& e) {
            return {e.code(), e.tensor_index()};
        }
        return {ErrorCode::Shape, std::nullopt};
    };
    std::vector<std::uint8_t> bytes(original.begin(), original.end());
    auto corrupt = bytes;
    std::copy_n("XXXX", 4, corrupt.begin());
    const bool magic_ok = error_of(corrupt).first == ErrorCode::BadMagic;

    // Cut in the middle of the third tensor (encoder conv2 weights): header 24, tensor 0 is
    // 4 + 16 + 72*4, tensor 1 is 4 + 4 + 8*4.
    const std::size_t mid = 24 + (4 + 16 + 72 * 4) + (4 + 4 + 8 * 4) + 20 + 100;
    const auto cut = error_of(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + static_cast<long>(mid)));
    const bool trunc_ok = cut.first == ErrorCode::Truncated && cut.second == std::size_t{2};
    const auto header_cut = error_of(std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 10));
    const bool header_ok = header_cut.first == ErrorCode::Truncated;
    return {round_trip && magic_ok && trunc_ok && header_ok,
            fmt("round trip %s; magic XXXX -> %s; cut mid-tensor -> %s at tensor %s; cut in header -> %s",
                round_trip ? "bitwise identical" : "DIFFERS", magic_ok ? "bad-magic" : "WRONG",
                to_string(cut.first), cut.second ? std::to_string(*cut.second).c_str() : "none",
                to_string(header_cut.first))};
}

std::size_t counting_oracle(std::size_t depth, std::size_t base) {
    auto conv3 = [](std::size_t i, std::size_t o) { return 9 * i * o + o; };
    std::size_t total = 0, prev = 1;
    for (std::size_t l = 0; l <= depth; ++l) {
        const std::size_t c = base << l;
        total += conv3(prev, c) + conv3(c, c);
        prev = c;
    }
    for (std::size_t l = 0; l < depth; ++l) {
        const std::size_t c = base << l;
        total += 4 * (2 * c) * c + c + conv3(2 * c, c) + conv3(c, c);
    }
    return total + base + 1;
}

Outcome parameter_accounting() {
    const std::size_t n = init_params({1, 2, 1, 1}, 0).parameter_count();
    const std::size_t o = counting_oracle(1, 2);
    return {n == 431 && o == 431, fmt("depth 1, base 2: model %zu, counting oracle %zu, expected 431", n, o)};
}

}  // namespace

int main() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient correctness", gradient_correctness},
        {"kernel oracle equivalence", kernel_oracle},
        {"tiling fidelity", tiling_fidelity},
        {"metrics oracle", metrics_oracle},
        {"desk-scale learning", desk_scale_learning},
        {"protocol fidelity", protocol_fidelity},
        {"reproducibility", reproducibility},
        {"checkpoint format", checkpoint_format},
        {"parameter accounting", parameter_accounting},
    };
    int failed = 0;
    for (const auto& [name, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failed += !o.pass;
        std::printf("[%s] %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%zu/%zu acceptance criteria passed\n", criteria.size() - static_cast<std::size_t>(failed),
                criteria.size());
    fs::remove_all(kWork);
    return failed == 0 ? 0 : 1;
}
