#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cseg/checkpoint.hpp"
#include "cseg/dataset.hpp"
#include "cseg/metrics.hpp"
#include "cseg/optim.hpp"
#include "cseg/unet.hpp"

namespace cseg {

struct TrainConfig {
    OptimizerConfig optimizer;
    std::size_t batch_size = 8;
    std::size_t epochs = 50;
    std::uint64_t seed = 0;
    double bce_weight = 0.0;  // loss = (1 - w) * dice_loss + w * bce
    std::size_t patience = 20;  // 0 disables early stopping
    double dice_epsilon = kDefaultDiceEpsilon;
    double threshold = kDefaultThreshold;
    double max_grad_norm = 0.0;  // 0 disables clipping
    double target_dice = 0.0;    // > 0: stop as soon as validation soft Dice reaches it
    AugmentationSpec augmentation;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0;
    double val_soft_dice = 0;
    double val_pixel_acc = 0;
    double seconds = 0;  // wall time; 0 in reference mode so histories compare bitwise
    bool operator==(const EpochRecord&) const = default;
};

struct History {
    std::vector<EpochRecord> records;
    std::vector<std::string> warnings;
};

std::string history_header();  // epoch,train_loss,val_soft_dice,val_pixel_acc,seconds
std::string format_history_row(const EpochRecord& r);
void write_history(const std::filesystem::path& path, const History& history);

// Batch-joint metrics over all samples in eval mode. Throws DataError on an empty set.
MetricReport evaluate(const Model& model, std::span<const Sample> samples, double epsilon = kDefaultDiceEpsilon,
                      double threshold = kDefaultThreshold, std::size_t batch_size = 8);

// Eval-mode probabilities for every sample, each [1,IS,IS].
std::vector<Tensor> predict_samples(const Model& model, std::span<const Sample> samples, std::size_t batch_size = 8);

// Epoch loop with seeded shuffling, on-the-fly augmentation, best-on-validation selection
// and early stopping. All mutable state (parameters, optimizer, loop counters, rng) can be
// captured in a checkpoint and restored with resume().
class Trainer {
public:
    Trainer(Model model, TrainConfig config);

    // Restores from a checkpoint of this trainer. `best` holds the best-so-far parameters; when
    // absent the checkpoint parameters stand in for them.
    static Trainer resume(const Checkpoint& checkpoint, TrainConfig config, std::optional<Model> best = std::nullopt);

    using EpochCallback = std::function<void(const Trainer&, const EpochRecord&)>;

    // Runs until config.epochs epochs are complete in total or early stopping fires.
    // With an empty validation set early stopping is disabled and the last model is kept.
    History fit(std::span<const Sample> train, std::span<const Sample> val, const EpochCallback& on_epoch = {});

    // One pass over `train`, returning the mean batch loss. Throws NumericError on a
    // non-finite loss, naming the epoch and batch.
    double train_epoch(std::span<const Sample> train);

    const Model& model() const { return model_; }
    const Model& best_model() const { return best_; }
    const TrainConfig& config() const { return config_; }
    const TrainerState& state() const { return state_; }
    const OptimizerState<float>& optimizer_state() const { return optimizer_; }
    std::string rng_state() const;
    bool finished() const { return state_.stopped || state_.epoch >= config_.epochs; }

    void save(const std::filesystem::path& path, const NormalizationStats& norm = {}) const;
    void save_best(const std::filesystem::path& path, const NormalizationStats& norm = {}) const;

private:
    Model model_;
    Model best_;
    TrainConfig config_;
    TrainerState state_;
    OptimizerState<float> optimizer_;
    std::mt19937_64 rng_;
};

// Convenience wrapper: fresh trainer, fit, return the best model and its history.
struct TrainResult {
    Model model;
    History history;
};
TrainResult train(Model model, std::span<const Sample> train, std::span<const Sample> val, const TrainConfig& config);

}  // namespace cseg
