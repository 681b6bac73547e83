#include "cseg/normalize.hpp"

#include <algorithm>
#include <cmath>

namespace cseg {

namespace {

constexpr double kMinStd = 1e-12;

}  // namespace

NormalizationStats fit_normalization(std::span<const Tensor> images) {
    if (images.empty()) throw DataError("fit_normalization: no images");
    const std::size_t C = images.front().dim(0);
    std::vector<double> max(C, 0.0), sum(C, 0.0), sq(C, 0.0);
    std::size_t count = 0;
    for (const auto& img : images) {
        if (img.rank() != 3 || img.dim(0) != C) throw ShapeError("fit_normalization: inconsistent image shapes");
        const std::size_t P = img.dim(1) * img.dim(2);
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < P; ++i) {
                const float v = img[c * P + i];
                if (!(v >= 0.0f) || !std::isfinite(v)) throw DataError("fit_normalization: negative or non-finite intensity");
                max[c] = std::max(max[c], static_cast<double>(v));
            }
        }
        count += P;
    }
    for (auto& m : max) {
        if (m <= 0) m = 1.0;
    }
    // Two passes over the scaled values: mean, then centred sum of squares.
    for (const auto& img : images) {
        const std::size_t P = img.dim(1) * img.dim(2);
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < P; ++i) sum[c] += img[c * P + i] / max[c];
        }
    }
    std::vector<double> mean(C);
    for (std::size_t c = 0; c < C; ++c) mean[c] = sum[c] / static_cast<double>(count);
    for (const auto& img : images) {
        const std::size_t P = img.dim(1) * img.dim(2);
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < P; ++i) {
                const double d = img[c * P + i] / max[c] - mean[c];
                sq[c] += d * d;
            }
        }
    }
    NormalizationStats s;
    for (std::size_t c = 0; c < C; ++c) {
        const double sd = std::sqrt(sq[c] / static_cast<double>(count));
        s.max.push_back(static_cast<float>(max[c]));
        s.mean.push_back(static_cast<float>(mean[c]));
        s.std.push_back(sd > kMinStd ? static_cast<float>(sd) : 0.0f);
    }
    return s;
}

Tensor normalize(const Tensor& image, const NormalizationStats& stats) {
    if (!stats.fitted()) throw DataError("normalize: statistics not fitted");
    const std::size_t rank = image.rank();
    if (rank != 3 && rank != 4) throw ShapeError("normalize: expected [C,H,W] or [B,C,H,W]");
    const std::size_t B = rank == 4 ? image.dim(0) : 1;
    const std::size_t C = image.dim(rank - 3);
    const std::size_t P = image.dim(rank - 2) * image.dim(rank - 1);
    if (C != stats.channels()) {
        throw ShapeError("normalize: image has " + std::to_string(C) + " channels, stats have " +
                         std::to_string(stats.channels()));
    }
    Tensor out(image.shape());
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const double mx = stats.max[c], mu = stats.mean[c], sd = stats.std[c];
            const std::size_t off = (b * C + c) * P;
            for (std::size_t i = 0; i < P; ++i) {
                double v = image[off + i] / mx - mu;
                if (sd > 0) v /= sd;
                out[off + i] = static_cast<float>(v);
            }
        }
    }
    return out;
}

}  // namespace cseg
