#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cseg/config.hpp"
#include "cseg/train.hpp"

namespace cseg {

struct DataSection {
    std::filesystem::path manifest;
    std::string train_split = "train";
    std::string val_split = "val";
    std::size_t tile_stride = 0;  // 0: stride equals the tile size
    // Share of training scenes held out for validation when the manifest has no val rows.
    double val_fraction = 0.25;
};

struct SynthSection {
    std::size_t n_scenes = 16;
    std::size_t size = 192;
    std::size_t channels = 3;
    std::uint64_t seed = 0;
    double val_fraction = 0.25;  // share of scenes marked "val" in the manifest
};

// Everything a command may need, read from one JSON document. Sections:
//   model         name or input_size/max_filters/depth/use_se, plus use_residual, in_channels,
//                 se_ratio, batchnorm
//   train         optimizer, learning_rate, beta1, beta2, eps, momentum, batch_size, epochs,
//                 seed, bce_weight, patience, dice_epsilon, threshold, max_grad_norm, target_dice
//   augmentation  hflip, vflip, rot90, brightness
//   data          manifest, train_split, val_split, tile_stride, val_fraction
//   synth         n_scenes, size, channels, seed, val_fraction
//   benchmark     names
// and top-level output_dir, reference_mode, threads. Relative paths resolve against the
// directory of the config file. Unknown keys are errors.
struct RunConfig {
    UNetConfig model;
    TrainConfig train;
    DataSection data;
    SynthSection synth;
    std::vector<std::string> benchmark_names;
    bool benchmark_names_set = false;
    std::filesystem::path output_dir = "out";
    bool reference_mode = false;
    std::size_t threads = 0;  // 0: hardware concurrency

    void validate() const;
};

RunConfig parse_run_config(const std::string& json_text, const std::filesystem::path& base_dir = {},
                           const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical JSON with every key spelled out.
std::string run_config_to_json(const RunConfig& config);

}  // namespace cseg
