#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cseg/gradcheck.hpp"
#include "cseg/image_io.hpp"
#include "cseg/metrics.hpp"
#include "cseg/run_config.hpp"
#include "cseg/train.hpp"

namespace cseg {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitNumeric = 3, kExitGradcheck = 4 };

// ConfigError -> 1, NumericError -> 3, any other library error -> 2, anything else -> 1.
int exit_code_for(const std::exception& e);

// Applies reference_mode / threads from the config to the process-wide settings.
void apply_runtime(const RunConfig& config);

struct SynthOutputs {
    std::filesystem::path manifest;
    std::vector<std::filesystem::path> images;
    std::vector<std::filesystem::path> labels;
    std::vector<std::filesystem::path> masks;
};

// Writes images/<id>.png (or per-band files), labels/<id>.json, masks/<id>.png and
// manifest.csv. The last round(val_fraction * n) scenes are marked "val", the rest "train".
SynthOutputs cmd_synth(const std::filesystem::path& out_dir, std::size_t n_scenes, std::size_t size,
                       std::uint64_t seed, std::size_t channels = 3, double val_fraction = 0.25);

// Normalized training and validation tiles for one architecture.
struct PreparedData {
    std::vector<Sample> train;
    std::vector<Sample> val;
    NormalizationStats normalization;
    std::vector<std::string> warnings;
};
PreparedData prepare_data(const RunConfig& config, const UNetConfig& model);

struct TrainOutputs {
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
    std::filesystem::path history_file;
    History history;  // epochs run by this invocation
};

// Writes best.ckpt, last.ckpt and history.csv under the output dir. With `resume`, continues
// from last.ckpt (and best.ckpt) if present.
TrainOutputs cmd_train(const RunConfig& config, bool resume = false);

struct EvalOutputs {
    MetricReport report;
    std::string record;  // one metric line without header
    std::filesystem::path metrics_file;
};

EvalOutputs cmd_eval(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                     const std::string& split, const std::filesystem::path& out_dir,
                     double epsilon = kDefaultDiceEpsilon, double threshold = kDefaultThreshold);

struct PredictOutputs {
    Tensor probabilities;  // [1,H,W]
    std::filesystem::path probability_file;  // tensor snapshot
    std::filesystem::path probability_image;
    std::filesystem::path mask_file;
    std::optional<std::filesystem::path> overlay_file;
};

// Sliding-window inference. Tile origins step by `stride` (0 = IS); an extra row/column of
// tiles flush with the bottom/right edge is added when the stride does not land there.
PredictOutputs cmd_predict(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                           const std::filesystem::path& out_dir, std::size_t stride = 0,
                           const std::optional<std::filesystem::path>& label = std::nullopt,
                           double threshold = kDefaultThreshold);

// Origins used by cmd_predict.
std::vector<std::size_t> covering_offsets(std::size_t extent, std::size_t tile, std::size_t stride);

// Ground-truth boundary over the raw image with the prediction as a translucent fill:
// agreement green, false positive red, missed crop blue.
Image8 render_overlay(const Tensor& raw_image, const Tensor& predicted_mask, const Tensor& truth_mask);

// With `out_dir` set, also writes gradcheck.csv there.
GradcheckReport cmd_gradcheck(GradcheckScope scope, const std::optional<std::filesystem::path>& out_dir = std::nullopt);

struct BenchmarkRow {
    std::string architecture;
    UNetConfig config;
    double dice = 0;
    std::uint64_t seed = 0;
    double seconds = 0;
};

std::string benchmark_header();  // ARCHITECTURE,IS,N,MF,DICE,SEED,SECONDS
std::string format_benchmark_row(const BenchmarkRow& row);

// Parses every name before training anything; trains each from scratch with the same seed,
// evaluates the best checkpoint on the validation tiles and writes benchmark.csv.
std::vector<BenchmarkRow> cmd_benchmark(const std::vector<std::string>& names, const RunConfig& config);

}  // namespace cseg
