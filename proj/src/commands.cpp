#include "cseg/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include "cseg/autograd.hpp"
#include "cseg/parallel.hpp"
#include "cseg/snapshot.hpp"
#include "cseg/synth.hpp"

namespace cseg {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return kExitUsage;
    if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
    if (dynamic_cast<const Error*>(&e)) return kExitData;
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitData;
    return kExitUsage;
}

void apply_runtime(const RunConfig& config) {
    if (config.threads > 0) set_num_threads(config.threads);
    set_reference_mode(config.reference_mode);
}

namespace {

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw DataError("failed writing " + path.string());
}

void check_channels(const Tensor& image, const UNetConfig& cfg, const std::string& what) {
    if (image.dim(0) != static_cast<std::size_t>(cfg.in_channels)) {
        throw DataError(what + " has " + std::to_string(image.dim(0)) + " channels, model " + cfg.name() + " expects " +
                        std::to_string(cfg.in_channels));
    }
}

}  // namespace

SynthOutputs cmd_synth(const fs::path& out_dir, std::size_t n_scenes, std::size_t size, std::uint64_t seed,
                       std::size_t channels, double val_fraction) {
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ConfigError("val_fraction must be in [0, 1)");
    SynthOptions opt;
    opt.channels = channels;
    const auto scenes = synth_dataset(n_scenes, size, seed, opt);

    ensure_dir(out_dir / "images");
    ensure_dir(out_dir / "labels");
    ensure_dir(out_dir / "masks");
    std::size_t n_val = 0;
    if (n_scenes >= 2 && val_fraction > 0) {
        n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(val_fraction * n_scenes)), 1, n_scenes - 1);
    }
    SynthOutputs out;
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        const auto& s = scenes[i];
        const fs::path image_rel = fs::path("images") / (s.scene_id + ".png");
        const fs::path label_rel = fs::path("labels") / (s.scene_id + ".json");
        const fs::path mask_rel = fs::path("masks") / (s.scene_id + ".png");
        save_scene_image(out_dir / image_rel, s.image);
        write_label_file(out_dir / label_rel, LabelDocument{s.scene_id, s.polygons});
        write_mask_png(out_dir / mask_rel, s.mask);
        out.images.push_back(out_dir / image_rel);
        out.labels.push_back(out_dir / label_rel);
        out.masks.push_back(out_dir / mask_rel);
        entries.push_back({image_rel, label_rel, i + n_val >= scenes.size() && n_val > 0 ? "val" : "train"});
    }
    out.manifest = out_dir / "manifest.csv";
    write_manifest(out.manifest, entries);
    return out;
}

PreparedData prepare_data(const RunConfig& config, const UNetConfig& model) {
    if (config.data.manifest.empty()) throw ConfigError("no manifest configured (data.manifest)");
    if (!fs::exists(config.data.manifest)) throw DataError("manifest not found: " + config.data.manifest.string());
    const auto entries = read_manifest(config.data.manifest);
    const auto train_scenes = load_scenes(entries, config.data.train_split);
    const auto val_scenes = load_scenes(entries, config.data.val_split);
    if (train_scenes.empty()) {
        throw DataError(config.data.manifest.string() + ": no scenes in split '" + config.data.train_split + "'");
    }
    for (const auto& s : train_scenes) check_channels(s.image, model, "scene " + s.scene_id);
    for (const auto& s : val_scenes) check_channels(s.image, model, "scene " + s.scene_id);

    const auto is = static_cast<std::size_t>(model.input_size);
    const std::size_t stride = config.data.tile_stride ? config.data.tile_stride : is;
    PreparedData d;
    d.train = tile_scenes(train_scenes, is, stride);
    d.val = tile_scenes(val_scenes, is, stride);
    if (d.val.empty() && config.data.val_fraction > 0) {
        if (train_scenes.size() >= 2) {
            auto [tr, va] = split_by_scene(d.train, config.data.val_fraction, config.train.seed);
            d.train = std::move(tr);
            d.val = std::move(va);
        } else {
            d.warnings.push_back("single training scene: no validation split");
        }
    }
    d.normalization = fit_normalization(std::span<const Sample>(d.train));
    normalize_samples(d.train, d.normalization);
    normalize_samples(d.val, d.normalization);
    return d;
}

namespace {

// Keeps the header and the first `rows` records of an existing history file.
void truncate_history(const fs::path& path, std::size_t rows) {
    std::ifstream is(path);
    std::string text = history_header() + "\n", line;
    if (is && std::getline(is, line)) {
        for (std::size_t i = 0; i < rows && std::getline(is, line); ++i) text += line + "\n";
    }
    is.close();
    write_text(path, text);
}

}  // namespace

TrainOutputs cmd_train(const RunConfig& config, bool resume) {
    config.validate();
    apply_runtime(config);
    PreparedData data = prepare_data(config, config.model);
    for (const auto& w : data.warnings) std::cerr << "warning: " << w << '\n';
    ensure_dir(config.output_dir);

    TrainOutputs out;
    out.best_checkpoint = config.output_dir / "best.ckpt";
    out.last_checkpoint = config.output_dir / "last.ckpt";
    out.history_file = config.output_dir / "history.csv";

    std::optional<Trainer> trainer;
    if (resume && fs::exists(out.last_checkpoint)) {
        Checkpoint ck = load_checkpoint(out.last_checkpoint);
        if (!(ck.model.config() == config.model)) {
            throw ConfigError("checkpoint " + out.last_checkpoint.string() + " holds " + ck.model.config().name() +
                              ", config asks for " + config.model.name());
        }
        std::optional<Model> best;
        if (fs::exists(out.best_checkpoint)) best = load_checkpoint(out.best_checkpoint).model;
        trainer.emplace(Trainer::resume(ck, config.train, std::move(best)));
        truncate_history(out.history_file, ck.trainer.epoch);
    } else {
        trainer.emplace(Model(config.model, config.train.seed), config.train);
        write_text(out.history_file, history_header() + "\n");
    }

    const auto& norm = data.normalization;
    std::ofstream history(out.history_file, std::ios::app);
    if (!history) throw DataError("cannot open " + out.history_file.string() + " for writing");
    out.history = trainer->fit(data.train, data.val, [&](const Trainer& t, const EpochRecord& rec) {
        history << format_history_row(rec) << '\n' << std::flush;
        t.save(out.last_checkpoint, norm);
        if (t.state().best_epoch == rec.epoch) t.save_best(out.best_checkpoint, norm);
        std::fprintf(stderr, "epoch %zu/%zu loss %.5f val_soft_dice %.5f val_pixel_acc %.5f (%.1fs)\n", rec.epoch,
                     t.config().epochs, rec.train_loss, rec.val_soft_dice, rec.val_pixel_acc, rec.seconds);
    });
    for (const auto& w : out.history.warnings) std::cerr << "warning: " << w << '\n';
    if (!history) throw DataError("failed writing " + out.history_file.string());
    if (out.history.records.empty()) {
        trainer->save(out.last_checkpoint, norm);
        trainer->save_best(out.best_checkpoint, norm);
    }
    return out;
}

EvalOutputs cmd_eval(const fs::path& checkpoint, const fs::path& manifest, const std::string& split,
                     const fs::path& out_dir, double epsilon, double threshold) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const UNetConfig& cfg = ck.model.config();
    if (!fs::exists(manifest)) throw DataError("manifest not found: " + manifest.string());
    const auto scenes = load_scenes(read_manifest(manifest), split);
    if (scenes.empty()) throw DataError(manifest.string() + ": no scenes in split '" + split + "'");
    for (const auto& s : scenes) check_channels(s.image, cfg, "scene " + s.scene_id);
    const auto is = static_cast<std::size_t>(cfg.input_size);
    auto samples = tile_scenes(scenes, is, is);
    if (ck.normalization.fitted()) normalize_samples(samples, ck.normalization);

    EvalOutputs out;
    out.report = evaluate(ck.model, samples, epsilon, threshold);
    out.record = format_metric_record(cfg.name(), cfg, out.report);
    ensure_dir(out_dir);
    out.metrics_file = out_dir / "metrics.csv";
    write_text(out.metrics_file, metric_record_header() + "\n" + out.record + "\n");
    return out;
}

std::vector<std::size_t> covering_offsets(std::size_t extent, std::size_t tile, std::size_t stride) {
    if (stride < 1) throw ConfigError("stride must be >= 1");
    if (tile > extent) throw DataError("scene extent " + std::to_string(extent) + " is smaller than the tile size " +
                                       std::to_string(tile));
    std::vector<std::size_t> out;
    for (std::size_t o = 0; o + tile <= extent; o += stride) out.push_back(o);
    if (out.back() + tile < extent) out.push_back(extent - tile);
    return out;
}

Image8 render_overlay(const Tensor& raw, const Tensor& pred, const Tensor& truth) {
    const std::size_t C = raw.dim(0), H = raw.dim(1), W = raw.dim(2);
    if (pred.shape() != Shape{1, H, W} || truth.shape() != Shape{1, H, W}) throw ShapeError("render_overlay: size mismatch");
    Image8 img{W, H, 3, std::vector<std::uint8_t>(3 * H * W)};
    const auto truth_at = [&](long y, long x) {
        if (y < 0 || x < 0 || y >= static_cast<long>(H) || x >= static_cast<long>(W)) return false;
        return truth[y * W + x] > 0.5f;
    };
    constexpr double alpha = 0.4;
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            const std::size_t p = y * W + x;
            double rgb[3];
            for (std::size_t c = 0; c < 3; ++c) rgb[c] = std::clamp<double>(raw[(std::min(c, C - 1) * H + y) * W + x], 0, 255);
            const bool pr = pred[p] > 0.5f, gt = truth[p] > 0.5f;
            if (pr || gt) {
                const double fill[3] = {pr && !gt ? 230.0 : 0.0, pr && gt ? 200.0 : 0.0, !pr && gt ? 230.0 : 0.0};
                for (std::size_t c = 0; c < 3; ++c) rgb[c] = (1 - alpha) * rgb[c] + alpha * fill[c];
            }
            const long yy = static_cast<long>(y), xx = static_cast<long>(x);
            if (gt && !(truth_at(yy - 1, xx) && truth_at(yy + 1, xx) && truth_at(yy, xx - 1) && truth_at(yy, xx + 1))) {
                rgb[0] = 255, rgb[1] = 255, rgb[2] = 0;
            }
            for (std::size_t c = 0; c < 3; ++c) img.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(rgb[c]));
        }
    }
    return img;
}

PredictOutputs cmd_predict(const fs::path& checkpoint, const fs::path& image, const fs::path& out_dir,
                           std::size_t stride, const std::optional<fs::path>& label, double threshold) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const UNetConfig& cfg = ck.model.config();
    const Tensor raw = load_scene_image(image);
    check_channels(raw, cfg, image.string());
    const std::size_t H = raw.dim(1), W = raw.dim(2), is = static_cast<std::size_t>(cfg.input_size);
    if (H < is || W < is) {
        throw DataError(image.string() + " is " + std::to_string(H) + "x" + std::to_string(W) + ", smaller than IS " +
                        std::to_string(is));
    }
    const Tensor norm = ck.normalization.fitted() ? normalize(raw, ck.normalization) : raw;
    if (stride == 0) stride = is;

    std::vector<TilePrediction> tiles;
    std::vector<Sample> batch;
    const auto flush = [&] {
        if (batch.empty()) return;
        const auto probs = predict_samples(ck.model, batch, batch.size());
        for (std::size_t i = 0; i < batch.size(); ++i) tiles.push_back({batch[i].origin, probs[i]});
        batch.clear();
    };
    const std::string id = image.stem().string();
    for (std::size_t y : covering_offsets(H, is, stride)) {
        for (std::size_t x : covering_offsets(W, is, stride)) {
            batch.push_back({crop(norm, x, y, is), Tensor(Shape{1, is, is}), {id, x, y}});
            if (batch.size() == 8) flush();
        }
    }
    flush();

    PredictOutputs out;
    out.probabilities = stitch(tiles, H, W);
    const Tensor mask = binarize(out.probabilities, threshold);
    ensure_dir(out_dir);
    out.probability_file = out_dir / (id + "_prob.cseg");
    out.probability_image = out_dir / (id + "_prob.png");
    out.mask_file = out_dir / (id + "_mask.png");
    save_tensor(out.probability_file, out.probabilities);
    Tensor scaled = out.probabilities;
    for (float& v : scaled.values()) v *= 255.0f;
    write_png(out.probability_image, tensor_to_image(scaled));
    write_mask_png(out.mask_file, mask);
    if (label) {
        const LabelDocument doc = read_label_file(*label);
        const Tensor truth = rasterize(doc.polygons, W, H);
        out.overlay_file = out_dir / (id + "_overlay.png");
        write_png(*out.overlay_file, render_overlay(raw, mask, truth));
    }
    return out;
}

GradcheckReport cmd_gradcheck(GradcheckScope scope, const std::optional<fs::path>& out_dir) {
    GradcheckReport report = gradient_check(scope);
    if (out_dir) {
        ensure_dir(*out_dir);
        write_text(*out_dir / "gradcheck.csv", report.table());
    }
    return report;
}

std::string benchmark_header() { return "ARCHITECTURE,IS,N,MF,DICE,SEED,SECONDS"; }

std::string format_benchmark_row(const BenchmarkRow& r) {
    char buf[128];
    std::snprintf(buf, sizeof buf, ",%d,%d,%d,%.4f,%llu,%.1f", r.config.input_size, r.config.depth,
                  r.config.max_filters, r.dice, static_cast<unsigned long long>(r.seed), r.seconds);
    return r.architecture + buf;
}

std::vector<BenchmarkRow> cmd_benchmark(const std::vector<std::string>& names, const RunConfig& config) {
    config.validate();
    // Every name must parse before any training starts.
    std::vector<UNetConfig> configs;
    for (const auto& n : names) {
        UNetConfig c = parse_config_name(n);
        c.in_channels = config.model.in_channels;
        c.se_ratio = config.model.se_ratio;
        c.batchnorm = config.model.batchnorm;
        c.validate();
        configs.push_back(c);
    }
    apply_runtime(config);
    ensure_dir(config.output_dir);
    const fs::path table = config.output_dir / "benchmark.csv";
    std::string text = benchmark_header() + "\n";
    write_text(table, text);

    std::vector<BenchmarkRow> rows;
    for (std::size_t i = 0; i < names.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        PreparedData data = prepare_data(config, configs[i]);
        for (const auto& w : data.warnings) std::cerr << "warning: " << names[i] << ": " << w << '\n';
        Trainer trainer(Model(configs[i], config.train.seed), config.train);
        trainer.fit(data.train, data.val);
        const fs::path dir = config.output_dir / names[i];
        ensure_dir(dir);
        trainer.save_best(dir / "best.ckpt", data.normalization);
        const auto& scored = data.val.empty() ? data.train : data.val;
        const MetricReport r =
            evaluate(trainer.best_model(), scored, config.train.dice_epsilon, config.train.threshold, config.train.batch_size);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        BenchmarkRow row{names[i], configs[i], r.soft_dice, config.train.seed, reference_mode() ? 0.0 : secs};
        std::cerr << format_benchmark_row(row) << '\n';
        text += format_benchmark_row(row) + "\n";
        write_text(table, text);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace cseg
