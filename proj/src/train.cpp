#include "cseg/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "cseg/parallel.hpp"

namespace cseg {

void TrainConfig::validate() const {
    optimizer.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(bce_weight >= 0.0 && bce_weight <= 1.0)) throw ConfigError("bce_weight must be in [0, 1]");
    if (!(dice_epsilon >= 0.0)) throw ConfigError("dice_epsilon must be >= 0");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0, 1)");
    if (!(max_grad_norm >= 0.0)) throw ConfigError("max_grad_norm must be >= 0");
    if (!(target_dice >= 0.0 && target_dice <= 1.0)) throw ConfigError("target_dice must be in [0, 1]");
    if (!(augmentation.brightness >= 0.0 && augmentation.brightness < 1.0)) {
        throw ConfigError("augmentation brightness must be in [0, 1)");
    }
}

std::string history_header() { return "epoch,train_loss,val_soft_dice,val_pixel_acc,seconds"; }

std::string format_history_row(const EpochRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.3f", r.epoch, r.train_loss, r.val_soft_dice, r.val_pixel_acc,
                  r.seconds);
    return buf;
}

void write_history(const std::filesystem::path& path, const History& history) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os << history_header() << '\n';
    for (const auto& r : history.records) os << format_history_row(r) << '\n';
    if (!os) throw DataError("failed writing " + path.string());
}

namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

}  // namespace

std::vector<Tensor> predict_samples(const Model& model, std::span<const Sample> samples, std::size_t batch_size) {
    std::vector<Tensor> out;
    const auto idx = iota_indices(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, samples.size() - start);
        auto [images, masks] = make_batch(samples, std::span(idx).subspan(start, n));
        const Tensor probs = model.predict(images);
        const std::size_t per = probs.size() / n;
        for (std::size_t b = 0; b < n; ++b) {
            const Shape s{probs.dim(1), probs.dim(2), probs.dim(3)};
            out.emplace_back(s, std::vector<float>(probs.data() + b * per, probs.data() + (b + 1) * per));
        }
    }
    return out;
}

MetricReport evaluate(const Model& model, std::span<const Sample> samples, double epsilon, double threshold,
                      std::size_t batch_size) {
    if (samples.empty()) throw DataError("evaluate: empty sample set");
    // Joint reduction over the whole set, identical to compute_report on the stacked predictions.
    double inter = 0, sum_p = 0, sum_t = 0, hard_inter = 0, hard_p = 0, correct = 0, total = 0;
    const auto idx = iota_indices(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t n = std::min(batch_size, samples.size() - start);
        auto [images, masks] = make_batch(samples, std::span(idx).subspan(start, n));
        const Tensor probs = model.predict(images);
        for (std::size_t i = 0; i < probs.size(); ++i) {
            const double p = probs[i], t = masks[i];
            const double h = p >= threshold ? 1.0 : 0.0;
            inter += p * t;
            sum_p += p;
            sum_t += t;
            hard_inter += h * t;
            hard_p += h;
            correct += (h == t) ? 1.0 : 0.0;
        }
        total += static_cast<double>(probs.size());
    }
    MetricReport r;
    r.threshold = threshold;
    r.epsilon = epsilon;
    const double den = sum_p + sum_t + epsilon;
    r.soft_dice = den > 0 ? (2 * inter + epsilon) / den : 1.0;
    const double hden = hard_p + sum_t + epsilon;
    r.hard_dice = hden > 0 ? (2 * hard_inter + epsilon) / hden : 1.0;
    r.pixel_accuracy = correct / total;
    return r;
}

Trainer::Trainer(Model model, TrainConfig config)
    : model_(std::move(model)), best_(model_), config_(std::move(config)), rng_(config_.seed) {
    config_.validate();
    optimizer_.kind = config_.optimizer.kind;
}

Trainer Trainer::resume(const Checkpoint& checkpoint, TrainConfig config, std::optional<Model> best) {
    Trainer t(checkpoint.model, std::move(config));
    if (checkpoint.optimizer.kind != t.config_.optimizer.kind && checkpoint.optimizer.step > 0) {
        throw ConfigError("checkpoint optimizer " + to_string(checkpoint.optimizer.kind) + " differs from configured " +
                          to_string(t.config_.optimizer.kind));
    }
    t.optimizer_ = checkpoint.optimizer;
    t.optimizer_.kind = t.config_.optimizer.kind;
    t.state_ = checkpoint.trainer;
    if (!checkpoint.rng_state.empty()) {
        std::istringstream is(checkpoint.rng_state);
        is >> t.rng_;
        if (!is) throw FormatError("corrupt rng state in checkpoint");
    }
    if (best) {
        if (!(best->config() == checkpoint.model.config())) throw ConfigError("best model config differs from checkpoint");
        t.best_ = std::move(*best);
    }
    return t;
}

std::string Trainer::rng_state() const {
    std::ostringstream os;
    os << rng_;
    return os.str();
}

void Trainer::save(const std::filesystem::path& path, const NormalizationStats& norm) const {
    save_checkpoint(path, model_, optimizer_, state_, rng_state(), norm);
}

void Trainer::save_best(const std::filesystem::path& path, const NormalizationStats& norm) const {
    save_checkpoint(path, best_, {}, state_, {}, norm);
}

double Trainer::train_epoch(std::span<const Sample> train) {
    if (train.empty()) throw DataError("training set is empty");
    auto order = iota_indices(train.size());
    std::shuffle(order.begin(), order.end(), rng_);

    const bool augmenting = config_.augmentation.enabled();
    std::vector<Sample> batch_samples;
    auto params = model_.parameters();
    double loss_sum = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
        const std::size_t n = std::min(config_.batch_size, order.size() - start);
        batch_samples.clear();
        for (std::size_t k = 0; k < n; ++k) {
            const Sample& s = train[order[start + k]];
            batch_samples.push_back(augmenting ? augment(s, config_.augmentation, rng_) : s);
        }
        const auto local = iota_indices(n);
        auto [images, masks] = make_batch(batch_samples, local);

        model_.zero_grad();
        ag::Tape<float> tape(true);
        ag::Var pred = model_.forward(tape, tape.constant(std::move(images)), Mode::train);
        ag::Var loss = ag::dice_loss(tape, pred, masks, config_.dice_epsilon);
        if (config_.bce_weight > 0) {
            ag::Var bce = ag::bce_loss(tape, pred, masks);
            loss = ag::weighted_sum(tape, loss, 1.0 - config_.bce_weight, bce, config_.bce_weight);
        }
        const double value = tape.value(loss)[0];
        if (!std::isfinite(value)) {
            throw NumericError("non-finite loss at epoch " + std::to_string(state_.epoch + 1) + ", batch " +
                               std::to_string(batches));
        }
        tape.backward(loss);
        if (config_.max_grad_norm > 0) clip_grad_norm<float>(params, config_.max_grad_norm);
        optimizer_step<float>(params, optimizer_, config_.optimizer);
        loss_sum += value;
        ++batches;
    }
    // Releasing gradient buffers keeps best-model snapshots and checkpoints lean.
    for (auto& p : params) p.tensor->drop_grad();
    return loss_sum / static_cast<double>(batches);
}

History Trainer::fit(std::span<const Sample> train, std::span<const Sample> val, const EpochCallback& on_epoch) {
    History history;
    if (config_.epochs == 0 || finished()) return history;
    if (train.empty()) throw DataError("training set is empty");
    if (val.empty()) history.warnings.push_back("validation set is empty: early stopping disabled, last model kept");

    while (!finished()) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.train_loss = train_epoch(train);
        ++state_.epoch;
        rec.epoch = state_.epoch;
        if (val.empty()) {
            rec.val_soft_dice = std::numeric_limits<double>::quiet_NaN();
            rec.val_pixel_acc = std::numeric_limits<double>::quiet_NaN();
            best_ = model_;
            state_.best_epoch = state_.epoch;
        } else {
            const MetricReport r = evaluate(model_, val, config_.dice_epsilon, config_.threshold, config_.batch_size);
            rec.val_soft_dice = r.soft_dice;
            rec.val_pixel_acc = r.pixel_accuracy;
            if (r.soft_dice > state_.best_score) {
                state_.best_score = r.soft_dice;
                state_.best_epoch = state_.epoch;
                state_.stale_epochs = 0;
                best_ = model_;
            } else {
                ++state_.stale_epochs;
            }
            if (config_.patience > 0 && state_.stale_epochs >= config_.patience) state_.stopped = true;
            if (config_.target_dice > 0 && r.soft_dice >= config_.target_dice) state_.stopped = true;
        }
        const auto t1 = std::chrono::steady_clock::now();
        rec.seconds = reference_mode() ? 0.0 : std::chrono::duration<double>(t1 - t0).count();
        history.records.push_back(rec);
        if (on_epoch) on_epoch(*this, rec);
    }
    return history;
}

TrainResult train(Model model, std::span<const Sample> train_set, std::span<const Sample> val, const TrainConfig& config) {
    Trainer trainer(std::move(model), config);
    History h = trainer.fit(train_set, val);
    return {trainer.best_model(), std::move(h)};
}

}  // namespace cseg
