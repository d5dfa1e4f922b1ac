#include "tbseg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>

#include "tbseg/data_io.hpp"
#include "tbseg/error.hpp"
#include "tbseg/metrics.hpp"
#include "tbseg/parallel.hpp"
#include "tbseg/segment.hpp"
#include "tbseg/trainer.hpp"
#include "tbseg/unet.hpp"

namespace tbseg::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

struct TrainArgs {
    fs::path data;
    fs::path out;
    std::optional<fs::path> history;
    UNetConfig net;
    TrainConfig train;
};

struct PredictArgs {
    fs::path model;
    fs::path image;
    fs::path out;
    std::size_t tile = 256;
    float threshold = 0.5f;
    std::size_t threads = default_thread_count();
};

struct EvalArgs {
    fs::path model;
    fs::path data;
    std::optional<std::size_t> tile;
    float threshold = 0.5f;
    std::size_t threads = default_thread_count();
};

struct GradcheckArgs {
    UNetGradCheckOptions options;
    std::optional<std::size_t> sabotage;
};

struct SynthArgs {
    fs::path out;
    SyntheticOptions options{0, 64, 42};
};

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) throw IoError("cannot write " + path.string());
}

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    const Dataset dataset = load_dataset(a.data);
    err << "loaded " << dataset.size() << " samples from " << a.data.string() << '\n';
    TrainObserver observer;
    observer.on_split = [&](std::size_t train, std::size_t test) {
        err << "train=" << train << " test=" << test << '\n';
    };
    observer.on_epoch = [&](const EpochRecord& r) {
        err << fmt("epoch %zu/%zu loss=%.6f test_iou=%.6f test_pixel_acc=%.6f\n", r.epoch, a.train.epochs,
                   r.train_loss, r.test_iou, r.test_pixel_accuracy);
    };
    const TrainResult result = train(a.train, dataset, a.net, observer);

    save_checkpoint(result.params, a.net, a.out);
    const fs::path history = a.history.value_or(fs::path(a.out.string() + ".history.csv"));
    write_file(history, history_csv(result.history));
    err << "wrote " << a.out.string() << " and " << history.string() << '\n';
    const EvalReport& r = result.final_report;
    err << fmt("pooled_iou=%.6f\n", r.pooled_iou);
    out << format_report(r.mean_iou, r.pixel_accuracy, r.counts) << '\n';
    return kSuccess;
}

int run_predict(const PredictArgs& a, std::ostream& out, std::ostream& err) {
    const Checkpoint ck = load_checkpoint(a.model);
    const Image2D frame = load_grayscale(a.image);
    const FrameSegmentation seg = segment_frame(ck.config, ck.params, frame, a.tile, a.threshold, a.threads);
    err << fmt("frame=%zux%zu grid=%zux%zu padded=%zux%zu tiles=%zu\n", frame.width, frame.height, seg.grid.cols,
               seg.grid.rows, seg.grid.padded_width(), seg.grid.padded_height(), seg.grid.tile_count());
    save_mask(a.out, seg.mask);
    out << fmt("mask=%s width=%zu height=%zu tiles=%zu foreground=%zu\n", a.out.string().c_str(), seg.mask.width,
               seg.mask.height, seg.grid.tile_count(), seg.mask.foreground());
    return kSuccess;
}

int run_eval(const EvalArgs& a, std::ostream& out, std::ostream& err) {
    const Checkpoint ck = load_checkpoint(a.model);
    const Dataset dataset = load_dataset(a.data);
    EvalReport r;
    if (!a.tile) {
        r = evaluate(ck.config, ck.params, dataset, a.threshold, a.threads);
    } else {
        double iou_sum = 0.0;
        for (const Sample& s : dataset) {
            const auto seg = segment_frame(ck.config, ck.params, s.image, *a.tile, a.threshold, a.threads);
            const ConfusionCounts c = confusion(seg.mask, s.mask);
            r.counts += c;
            iou_sum += iou(c);
        }
        r.mean_iou = iou_sum / static_cast<double>(dataset.size());
        r.pooled_iou = iou(r.counts);
        r.pixel_accuracy = pixel_accuracy(r.counts);
    }
    err << fmt("samples=%zu pooled_iou=%.6f\n", dataset.size(), r.pooled_iou);
    out << format_report(r.mean_iou, r.pixel_accuracy, r.counts) << '\n';
    return kSuccess;
}

int run_gradcheck(GradcheckArgs a, std::ostream& out, std::ostream& err) {
    a.options.negate_gradient_index = a.sabotage;
    const GradCheckResult r = check_unet_gradients(a.options);
    err << fmt("parameters=%zu refined=%zu\n", r.analytic.size(), r.refined);
    out << fmt("max_rel_error=%.3e\n", r.max_relative_error);
    if (r.max_relative_error < 1e-3) return kSuccess;
    out << fmt("worst_param=%zu analytic=%.6e numeric=%.6e\n", r.worst_index, r.analytic[r.worst_index],
               r.numeric[r.worst_index]);
    return kCheckFailed;
}

int run_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
    const Dataset ds = gen_synthetic(a.options);
    write_dataset(a.out, ds);
    err << "generated " << ds.size() << " samples of " << a.options.size << "x" << a.options.size << '\n';
    out << fmt("wrote %zu pairs to %s\n", ds.size(), a.out.string().c_str());
    return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Tile-based U-Net segmentation of grayscale microscopy frames", "tbseg"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);

    TrainArgs ta;
    ta.train.threads = default_thread_count();
    auto* train_cmd = app.add_subcommand("train", "Train a U-Net on a paired dataset");
    train_cmd->add_option("--data", ta.data, "Dataset root with images/ and masks/")->required();
    train_cmd->add_option("--out", ta.out, "Checkpoint path to write")->required();
    train_cmd->add_option("--history", ta.history, "History CSV path (default: <out>.history.csv)");
    train_cmd->add_option("--depth", ta.net.depth, "Number of pooling levels")->check(CLI::Range(1, 16));
    train_cmd->add_option("--base-channels", ta.net.base_channels, "Channels of the first level")
        ->check(CLI::PositiveNumber);
    train_cmd->add_option("--epochs", ta.train.epochs, "Training epochs");
    train_cmd->add_option("--lr", ta.train.learning_rate, "Adam learning rate")->check(CLI::PositiveNumber);
    train_cmd->add_option("--batch", ta.train.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
    train_cmd->add_option("--seed", ta.train.seed, "Seed for split, initialisation, shuffling and augmentation");
    train_cmd->add_option("--split", ta.train.split_ratio, "Fraction of samples used for training")
        ->check(CLI::Range(0.0, 1.0));
    train_cmd->add_flag("--augment,!--no-augment", ta.train.augment, "Random dihedral transform per sample");
    train_cmd->add_option("--threshold", ta.train.threshold, "Probability threshold for test metrics")
        ->check(CLI::Range(0.0, 1.0));
    train_cmd->add_option("--threads", ta.train.threads, "Worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);

    PredictArgs pa;
    auto* predict_cmd = app.add_subcommand("predict", "Segment a full frame tile by tile");
    predict_cmd->add_option("--model", pa.model, "Checkpoint to load")->required();
    predict_cmd->add_option("--image", pa.image, "Input frame (PGM or PNG)")->required();
    predict_cmd->add_option("--out", pa.out, "Output mask (PGM, values 0/255)")->required();
    predict_cmd->add_option("--tile", pa.tile, "Tile size; a multiple of 2^depth")->check(CLI::PositiveNumber);
    predict_cmd->add_option("--threshold", pa.threshold, "Foreground probability threshold")
        ->check(CLI::Range(0.0, 1.0));
    predict_cmd->add_option("--threads", pa.threads, "Worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);

    EvalArgs ea;
    auto* eval_cmd = app.add_subcommand("eval", "Report IoU and pixel accuracy on a paired dataset");
    eval_cmd->add_option("--model", ea.model, "Checkpoint to load")->required();
    eval_cmd->add_option("--data", ea.data, "Dataset root with images/ and masks/")->required();
    eval_cmd->add_option("--tile", ea.tile, "Tile size (default: whole samples, no tiling)")
        ->check(CLI::PositiveNumber);
    eval_cmd->add_option("--threshold", ea.threshold, "Foreground probability threshold")
        ->check(CLI::Range(0.0, 1.0));
    eval_cmd->add_option("--threads", ea.threads, "Worker threads (results do not depend on it)")
        ->check(CLI::PositiveNumber);

    GradcheckArgs ga;
    auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of a depth-1, base-2 U-Net");
    grad_cmd->add_option("--seed", ga.options.seed, "Seed for weights, input and targets");
    grad_cmd->add_option("--size", ga.options.size, "Input side length; a multiple of 2")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--step", ga.options.step, "Central-difference step")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--sabotage-grad", ga.sabotage,
                         "Test hook: negate this analytic gradient coordinate (must make the check fail)");

    SynthArgs sa;
    auto* synth_cmd = app.add_subcommand("synth", "Write a seeded synthetic dataset");
    synth_cmd->add_option("--out", sa.out, "Dataset root to create")->required();
    synth_cmd->add_option("--count", sa.options.count, "Number of image/mask pairs")->required()
        ->check(CLI::PositiveNumber);
    synth_cmd->add_option("--size", sa.options.size, "Side length in pixels (>= 32)");
    synth_cmd->add_option("--seed", sa.options.seed, "Generator seed");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kSuccess;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kSuccess;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        if (auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front()) err << sub->help();
        return kUsageError;
    }

    try {
        if (*train_cmd) return run_train(ta, out, err);
        if (*predict_cmd) return run_predict(pa, out, err);
        if (*eval_cmd) return run_eval(ea, out, err);
        if (*grad_cmd) return run_gradcheck(ga, out, err);
        return run_synth(sa, out, err);
    } catch (const PairingError& e) {
        err << "error: " << e.what() << '\n';
        for (const auto& name : e.offenders()) err << "  unpaired: " << name << '\n';
        return kUsageError;
    } catch (const NumericError& e) {
        err << "error: " << e.what() << '\n';
        return kNumericError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kUsageError;
    }
}

}  // namespace tbseg::cli
