#pragma once

#include <string>

#include "cseg/tensor.hpp"

namespace cseg {

inline constexpr double kDefaultDiceEpsilon = 1.0;
inline constexpr double kDefaultThreshold = 0.5;

struct MetricReport {
    double soft_dice = 0;
    double hard_dice = 0;
    double pixel_accuracy = 0;
    double threshold = kDefaultThreshold;
    double epsilon = kDefaultDiceEpsilon;
};

// Smoothed continuous Dice, D = (2*sum(p*t) + eps) / (sum(p) + sum(t) + eps), summed
// jointly over every element (batch included). With eps = 0 an empty union scores 1.
template <typename T>
double soft_dice(const BasicTensor<T>& pred, const BasicTensor<T>& target, double epsilon = kDefaultDiceEpsilon);

template <typename T>
double dice_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target, double epsilon = kDefaultDiceEpsilon);

// d(1 - D)/d pred
template <typename T>
BasicTensor<T> dice_loss_grad(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                              double epsilon = kDefaultDiceEpsilon);

// Mean binary cross-entropy with predictions clamped away from {0, 1}.
template <typename T>
double bce_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);

template <typename T>
BasicTensor<T> bce_loss_grad(const BasicTensor<T>& pred, const BasicTensor<T>& target);

// 1 where pred >= threshold; threshold must lie in (0, 1).
template <typename T>
BasicTensor<T> binarize(const BasicTensor<T>& pred, double threshold = kDefaultThreshold);

template <typename T>
double pixel_accuracy(const BasicTensor<T>& pred_binary, const BasicTensor<T>& target);

// Full report for probabilities vs binary target.
template <typename T>
MetricReport compute_report(const BasicTensor<T>& pred, const BasicTensor<T>& target,
                            double epsilon = kDefaultDiceEpsilon, double threshold = kDefaultThreshold);

struct UNetConfig;

// Header and record for the flat metric line: name,IS,N,MF,soft_dice,hard_dice,pixel_acc
std::string metric_record_header();
std::string format_metric_record(const std::string& name, const UNetConfig& config, const MetricReport& report);

}  // namespace cseg
