#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cseg/normalize.hpp"
#include "cseg/polygon.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

struct Scene {
    std::string scene_id;
    Tensor image;  // [C,H,W] raw intensities
    Tensor mask;   // [1,H,W] of {0,1}
    std::string source;
    std::vector<PolygonLabel> polygons;
};

struct TileOrigin {
    std::string scene_id;
    std::size_t x0 = 0;
    std::size_t y0 = 0;
    bool operator==(const TileOrigin&) const = default;
    auto operator<=>(const TileOrigin&) const = default;
};

struct Sample {
    Tensor image;  // [C,IS,IS]
    Tensor mask;   // [1,IS,IS]
    TileOrigin origin;
};

// Crops [C,H,W] at (x0, y0) to [C,size,size].
Tensor crop(const Tensor& chw, std::size_t x0, std::size_t y0, std::size_t size);

// Row-major over origins (j*stride, i*stride) that fit entirely inside the scene.
std::vector<Sample> tile_scene(const Scene& scene, std::size_t tile_size, std::size_t stride);
std::vector<TileOrigin> tile_origins(const std::string& scene_id, std::size_t height, std::size_t width,
                                     std::size_t tile_size, std::size_t stride);

struct TilePrediction {
    TileOrigin origin;
    Tensor values;  // [C,S,S]
};

// Per-pixel mean over all tiles covering the pixel. Throws DataError on an uncovered pixel.
Tensor stitch(std::span<const TilePrediction> tiles, std::size_t height, std::size_t width);

struct AugmentationSpec {
    bool hflip = true;
    bool vflip = true;
    bool rot90 = true;
    double brightness = 0.1;  // image scaled by u ~ U[1 - b, 1 + b]

    static AugmentationSpec none() { return {false, false, false, 0.0}; }
    bool enabled() const { return hflip || vflip || rot90 || brightness > 0.0; }
    bool operator==(const AugmentationSpec&) const = default;
};

// Geometric part of an augmentation: optional flips then `rot90` quarter turns counter-clockwise.
struct Geometry {
    bool hflip = false;
    bool vflip = false;
    unsigned rot90 = 0;
};

// Applies to [C,H,W] or [B,C,H,W] with H == W whenever rot90 is odd.
Tensor apply_geometry(const Tensor& t, const Geometry& g);

// Draw order per sample: hflip, vflip, rot90, brightness (only for enabled parts).
Sample augment(const Sample& sample, const AugmentationSpec& spec, std::mt19937_64& rng);

// Scene-level split: the sorted scene ids are shuffled with `seed` and the first
// round(fraction * n) (clamped to [1, n-1]) scenes go to validation.
std::pair<std::vector<Sample>, std::vector<Sample>> split_by_scene(std::span<const Sample> samples, double fraction,
                                                                   std::uint64_t seed);

struct ManifestEntry {
    std::filesystem::path image;
    std::filesystem::path label;
    std::string split;
    bool operator==(const ManifestEntry&) const = default;
};

// CSV with header "image,label,split". Relative paths are resolved against the manifest
// directory on read and written verbatim.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

Scene load_scene(const ManifestEntry& entry);
std::vector<Scene> load_scenes(std::span<const ManifestEntry> entries, const std::string& split);

std::vector<Sample> tile_scenes(std::span<const Scene> scenes, std::size_t tile_size, std::size_t stride);
NormalizationStats fit_normalization(std::span<const Sample> samples);
void normalize_samples(std::vector<Sample>& samples, const NormalizationStats& stats);

// Stacks samples[indices] into [B,C,S,S] images and [B,1,S,S] masks.
std::pair<Tensor, Tensor> make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices);

}  // namespace cseg
