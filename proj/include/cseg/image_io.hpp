#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

// 8-bit raster, interleaved (row-major, channel fastest). 1 or 3 channels.
struct Image8 {
    std::size_t width = 0;
    std::size_t height = 0;
    std::size_t channels = 0;
    std::vector<std::uint8_t> pixels;

    bool operator==(const Image8&) const = default;
};

Image8 read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image8& image);

// [C,H,W] float tensor holding the 0..255 values.
Tensor image_to_tensor(const Image8& image);
// Rounds and clamps to 0..255. Accepts [C,H,W] with C of 1 or 3.
Image8 tensor_to_image(const Tensor& chw);

// Loads a scene. If `path` exists it is read directly (gray or RGB); otherwise the
// per-band files "<stem>_band0<ext>", "<stem>_band1<ext>", ... are stacked.
Tensor load_scene_image(const std::filesystem::path& path);

// Writes [C,H,W]: a single RGB file for C == 3, a single gray file for C == 1, otherwise
// one gray file per band with the "_band{k}" suffix.
void save_scene_image(const std::filesystem::path& path, const Tensor& chw);

std::filesystem::path band_path(const std::filesystem::path& path, std::size_t band);

// Binary [1,H,W] mask -> gray PNG, background 0, crop 255.
void write_mask_png(const std::filesystem::path& path, const Tensor& mask);
// Gray PNG -> [1,H,W] with 1 where the pixel is nonzero.
Tensor read_mask_png(const std::filesystem::path& path);

}  // namespace cseg
