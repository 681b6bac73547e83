#pragma once

#include <span>
#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

// Per-channel statistics fitted on the training split: images are first divided by the
// channel max, then standardized with the mean/std of the scaled values. A channel with
// zero variance keeps std = 0 and is only centred (so a constant channel maps to zeros).
struct NormalizationStats {
    std::vector<float> max;
    std::vector<float> mean;
    std::vector<float> std;

    std::size_t channels() const { return max.size(); }
    bool fitted() const { return !max.empty(); }
    bool operator==(const NormalizationStats&) const = default;
};

// images: raw intensities >= 0, each [C,H,W] with a common C.
NormalizationStats fit_normalization(std::span<const Tensor> images);

// Works on [C,H,W] or [B,C,H,W].
Tensor normalize(const Tensor& image, const NormalizationStats& stats);

}  // namespace cseg
