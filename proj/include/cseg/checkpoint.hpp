#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cseg/normalize.hpp"
#include "cseg/optim.hpp"
#include "cseg/unet.hpp"

namespace cseg {

// Loop bookkeeping needed to resume training exactly where it stopped.
struct TrainerState {
    std::uint32_t epoch = 0;  // completed epochs
    double best_score = -1.0;
    std::uint32_t best_epoch = 0;
    std::uint32_t stale_epochs = 0;
    bool stopped = false;

    bool operator==(const TrainerState&) const = default;
};

struct Checkpoint {
    Model model;
    OptimizerState<float> optimizer;
    TrainerState trainer;
    std::string rng_state;  // textual std::mt19937_64 state
    NormalizationStats normalization;
};

// Layout (little-endian):
//   "CSEGCKPT", u32 version
//   string config text (u32 length + bytes, UNetConfig::to_text)
//   u32 tensor count, then each model tensor (trainable + buffers, visit order) as a snapshot
//   string optimizer kind, u64 step, u32 n_first, snapshots, u32 n_second, snapshots
//   u32 epoch, f64 best_score, u32 best_epoch, u32 stale_epochs, u32 stopped
//   string rng state
//   u32 channels, then f32 max[c], mean[c], std[c]
//   "END!"
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Model& model, const OptimizerState<float>& optimizer = {},
                     const TrainerState& trainer = {}, const std::string& rng_state = {},
                     const NormalizationStats& normalization = {});

// Throws FormatError on bad magic, version mismatch, truncation or shape disagreement.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace cseg
