#include "cseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "cseg/config.hpp"

namespace cseg {

namespace {

constexpr double kProbClamp = 1e-7;

template <typename T>
void check_pair(const BasicTensor<T>& pred, const BasicTensor<T>& target, const char* what) {
    if (pred.shape() != target.shape()) {
        throw ShapeError(std::string(what) + ": shape mismatch " + pred.shape().str() + " vs " +
                         target.shape().str());
    }
}

template <typename T>
void check_probabilities(const BasicTensor<T>& pred, const char* what) {
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (!(pred[i] >= T(0) && pred[i] <= T(1))) {
            throw NumericError(std::string(what) + ": prediction outside [0,1] at element " + std::to_string(i));
        }
    }
}

struct DiceSums {
    double intersection = 0;
    double total = 0;  // sum(p) + sum(t)
};

template <typename T>
DiceSums dice_sums(const BasicTensor<T>& pred, const BasicTensor<T>& target, double epsilon, const char* what) {
    check_pair(pred, target, what);
    check_probabilities(pred, what);
    if (epsilon < 0) throw ConfigError(std::string(what) + ": epsilon must be >= 0");
    DiceSums s;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        s.intersection += static_cast<double>(pred[i]) * static_cast<double>(target[i]);
        s.total += static_cast<double>(pred[i]) + static_cast<double>(target[i]);
    }
    return s;
}

}  // namespace

template <typename T>
double soft_dice(const BasicTensor<T>& pred, const BasicTensor<T>& target, double epsilon) {
    const DiceSums s = dice_sums(pred, target, epsilon, "soft_dice");
    // Both empty with no smoothing: treat as perfect agreement.
    if (s.total + epsilon <= 0) return 1.0;
    return (2.0 * s.intersection + epsilon) / (s.total + epsilon);
}

template <typename T>
double dice_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target, double epsilon) {
    return 1.0 - soft_dice(pred, target, epsilon);
}

template <typename T>
BasicTensor<T> dice_loss_grad(const BasicTensor<T>& pred, const BasicTensor<T>& target, double epsilon) {
    const DiceSums s = dice_sums(pred, target, epsilon, "dice_loss_grad");
    const double num = 2.0 * s.intersection + epsilon;
    const double den = s.total + epsilon;
    BasicTensor<T> g(pred.shape());
    if (den <= 0) return g;
    for (std::size_t i = 0; i < g.size(); ++i) {
        // dD/dp_i = (2 t_i den - num) / den^2
        g[i] = static_cast<T>(-(2.0 * target[i] * den - num) / (den * den));
    }
    return g;
}

template <typename T>
double bce_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
    check_pair(pred, target, "bce_loss");
    double acc = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double p = std::clamp(static_cast<double>(pred[i]), kProbClamp, 1.0 - kProbClamp);
        const double t = target[i];
        acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    return acc / static_cast<double>(pred.size());
}

template <typename T>
BasicTensor<T> bce_loss_grad(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
    check_pair(pred, target, "bce_loss_grad");
    BasicTensor<T> g(pred.shape());
    const double n = static_cast<double>(pred.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double raw = pred[i];
        if (raw <= kProbClamp || raw >= 1.0 - kProbClamp) continue;  // clamped region is flat
        const double t = target[i];
        g[i] = static_cast<T>((-t / raw + (1.0 - t) / (1.0 - raw)) / n);
    }
    return g;
}

template <typename T>
BasicTensor<T> binarize(const BasicTensor<T>& pred, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("binarize: threshold must be in (0, 1)");
    BasicTensor<T> out(pred.shape());
    for (std::size_t i = 0; i < pred.size(); ++i) out[i] = static_cast<double>(pred[i]) >= threshold ? T(1) : T(0);
    return out;
}

template <typename T>
double pixel_accuracy(const BasicTensor<T>& pred_binary, const BasicTensor<T>& target) {
    check_pair(pred_binary, target, "pixel_accuracy");
    if (pred_binary.empty()) throw ShapeError("pixel_accuracy: empty input");
    std::size_t agree = 0;
    for (std::size_t i = 0; i < pred_binary.size(); ++i) agree += (pred_binary[i] == target[i]) ? 1 : 0;
    return static_cast<double>(agree) / static_cast<double>(pred_binary.size());
}

template <typename T>
MetricReport compute_report(const BasicTensor<T>& pred, const BasicTensor<T>& target, double epsilon,
                            double threshold) {
    MetricReport r;
    r.epsilon = epsilon;
    r.threshold = threshold;
    r.soft_dice = soft_dice(pred, target, epsilon);
    const BasicTensor<T> hard = binarize(pred, threshold);
    r.hard_dice = soft_dice(hard, target, epsilon);
    r.pixel_accuracy = pixel_accuracy(hard, target);
    return r;
}

std::string metric_record_header() { return "name,IS,N,MF,soft_dice,hard_dice,pixel_acc"; }

std::string format_metric_record(const std::string& name, const UNetConfig& config, const MetricReport& report) {
    char buf[160];
    std::snprintf(buf, sizeof buf, ",%d,%d,%d,%.6f,%.6f,%.6f", config.input_size, config.depth, config.max_filters,
                  report.soft_dice, report.hard_dice, report.pixel_accuracy);
    return name + buf;
}

#define CSEG_INSTANTIATE_METRICS(T)                                                                      \
    template double soft_dice(const BasicTensor<T>&, const BasicTensor<T>&, double);                     \
    template double dice_loss(const BasicTensor<T>&, const BasicTensor<T>&, double);                     \
    template BasicTensor<T> dice_loss_grad(const BasicTensor<T>&, const BasicTensor<T>&, double);        \
    template double bce_loss(const BasicTensor<T>&, const BasicTensor<T>&);                              \
    template BasicTensor<T> bce_loss_grad(const BasicTensor<T>&, const BasicTensor<T>&);                 \
    template BasicTensor<T> binarize(const BasicTensor<T>&, double);                                     \
    template double pixel_accuracy(const BasicTensor<T>&, const BasicTensor<T>&);                        \
    template MetricReport compute_report(const BasicTensor<T>&, const BasicTensor<T>&, double, double);

CSEG_INSTANTIATE_METRICS(float)
CSEG_INSTANTIATE_METRICS(double)

#undef CSEG_INSTANTIATE_METRICS

}  // namespace cseg
