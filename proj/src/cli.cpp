#include "cseg/cli.hpp"

#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cseg/autograd.hpp"
#include "cseg/commands.hpp"

namespace cseg {

namespace {

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    bool reference_mode = false;
    std::size_t threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON run configuration");
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&c](const std::uint64_t& s) { c.seed = s, c.seed_set = true; }, "Seed override");
    cmd->add_option("--out", c.out, "Output directory");
    cmd->add_flag("--reference-mode", c.reference_mode, "Single-threaded, bitwise reproducible execution");
    cmd->add_option("--threads", c.threads, "Worker threads (0 = all cores)");
}

RunConfig resolve(const Common& c) {
    RunConfig rc = c.config.empty() ? RunConfig{} : load_run_config(c.config);
    if (c.seed_set) rc.train.seed = c.seed, rc.synth.seed = c.seed;
    if (!c.out.empty()) rc.output_dir = c.out;
    if (c.reference_mode) rc.reference_mode = true;
    if (c.threads) rc.threads = c.threads;
    apply_runtime(rc);
    return rc;
}

std::vector<std::string> split_names(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Crop segmentation with U-Net and squeeze-and-excitation blocks", "cseg"};
    app.require_subcommand(1);

    Common common;
    std::size_t n_scenes = 0, size = 0, channels = 0;
    double val_fraction = -1;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic scene dataset");
    add_common(synth, common);
    synth->add_option("--n-scenes", n_scenes, "Number of scenes");
    synth->add_option("--size", size, "Scene side length in pixels");
    synth->add_option("--channels", channels, "Image channels");
    synth->add_option("--val-fraction", val_fraction, "Share of scenes marked val in the manifest");

    std::size_t epochs = 0;
    bool epochs_set = false, resume = false;
    std::string manifest;
    auto* train = app.add_subcommand("train", "Train a model");
    add_common(train, common);
    train->add_option_function<std::size_t>(
        "--epochs", [&](const std::size_t& e) { epochs = e, epochs_set = true; }, "Total epoch count override");
    train->add_option("--manifest", manifest, "Dataset manifest override");
    train->add_flag("--resume", resume, "Continue from last.ckpt in the output directory");

    std::string checkpoint, split = "val";
    double threshold = kDefaultThreshold, epsilon = kDefaultDiceEpsilon;
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest split");
    add_common(eval, common);
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    eval->add_option("--manifest", manifest, "Dataset manifest (default: data.manifest from --config)");
    eval->add_option("--split", split, "Manifest split to evaluate");
    eval->add_option("--threshold", threshold, "Binarization threshold");
    eval->add_option("--epsilon", epsilon, "Dice smoothing");

    std::string image, label;
    std::size_t stride = 0;
    auto* predict = app.add_subcommand("predict", "Segment a full scene");
    add_common(predict, common);
    predict->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
    predict->add_option("--image", image, "Scene image")->required();
    predict->add_option("--stride", stride, "Tile stride (default: IS)");
    predict->add_option("--label", label, "Label file; enables the overlay image");
    predict->add_option("--threshold", threshold, "Binarization threshold");

    std::string scope = "all";
    double fault = 0.0;
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient checks in 64-bit mode");
    add_common(gradcheck, common);
    gradcheck->add_option("--scope", scope, "layer, block, model or all");
    gradcheck->add_option("--inject-fault", fault)->group("");  // test fixture: corrupts conv weight gradients

    std::string names;
    bool names_set = false;
    auto* bench = app.add_subcommand("benchmark", "Train and score a list of architectures");
    add_common(bench, common);
    bench->add_option_function<std::string>(
        "--names", [&](const std::string& s) { names = s, names_set = true; }, "Comma-separated architecture names");
    bench->add_option("--manifest", manifest, "Dataset manifest override");
    bench->add_option_function<std::size_t>(
        "--epochs", [&](const std::size_t& e) { epochs = e, epochs_set = true; }, "Epoch count override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        RunConfig rc = resolve(common);
        if (!manifest.empty()) rc.data.manifest = manifest;
        if (epochs_set) rc.train.epochs = epochs;

        if (synth->parsed()) {
            if (n_scenes) rc.synth.n_scenes = n_scenes;
            if (size) rc.synth.size = size;
            if (channels) rc.synth.channels = channels;
            if (val_fraction >= 0) rc.synth.val_fraction = val_fraction;
            const auto out = cmd_synth(rc.output_dir, rc.synth.n_scenes, rc.synth.size, rc.synth.seed, rc.synth.channels,
                                       rc.synth.val_fraction);
            std::cout << out.manifest.string() << '\n';
        } else if (train->parsed()) {
            const auto out = cmd_train(rc, resume);
            std::cout << out.best_checkpoint.string() << '\n';
        } else if (eval->parsed()) {
            if (rc.data.manifest.empty()) throw ConfigError("eval needs --manifest or data.manifest in --config");
            const auto out = cmd_eval(checkpoint, rc.data.manifest, split, rc.output_dir, epsilon, threshold);
            std::cout << metric_record_header() << '\n' << out.record << '\n';
        } else if (predict->parsed()) {
            std::optional<std::filesystem::path> lbl;
            if (!label.empty()) lbl = label;
            const auto out = cmd_predict(checkpoint, image, rc.output_dir, stride, lbl, threshold);
            std::cout << out.mask_file.string() << '\n';
        } else if (gradcheck->parsed()) {
            const GradcheckScope s = parse_gradcheck_scope(scope);
            ag::backward_fault = fault;
            std::optional<std::filesystem::path> dir;
            if (!common.out.empty()) dir = rc.output_dir;
            const auto report = cmd_gradcheck(s, dir);
            ag::backward_fault = 0.0;
            std::cout << report.table();
            std::cerr << (report.passed() ? "gradcheck passed" : "gradcheck FAILED") << " in " << report.seconds
                      << " s\n";
            return report.passed() ? kExitOk : kExitGradcheck;
        } else if (bench->parsed()) {
            std::vector<std::string> list = names_set ? split_names(names)
                                            : rc.benchmark_names_set ? rc.benchmark_names
                                                                     : results_table_names();
            const auto rows = cmd_benchmark(list, rc);
            std::cout << benchmark_header() << '\n';
            for (const auto& r : rows) std::cout << format_benchmark_row(r) << '\n';
        }
        return kExitOk;
    } catch (const std::exception& e) {
        ag::backward_fault = 0.0;
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
}

}  // namespace cseg
