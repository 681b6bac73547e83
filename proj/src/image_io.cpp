#include "cseg/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace cseg {

Image8 read_png(const std::filesystem::path& path) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw DataError("cannot read PNG " + path.string() + ": " + img.message);
    }
    const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
    img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    Image8 out{img.width, img.height, color ? 3u : 1u, {}};
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
        png_image_free(&img);
        throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
    }
    return out;
}

void write_png(const std::filesystem::path& path, const Image8& image) {
    if (image.channels != 1 && image.channels != 3) throw DataError("write_png: only 1 or 3 channels supported");
    if (image.pixels.size() != image.width * image.height * image.channels) throw DataError("write_png: size mismatch");
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
        throw DataError("cannot write PNG " + path.string() + ": " + img.message);
    }
}

Tensor image_to_tensor(const Image8& image) {
    const std::size_t C = image.channels, H = image.height, W = image.width;
    Tensor t(Shape{C, H, W});
    for (std::size_t y = 0; y < H; ++y) {
        for (std::size_t x = 0; x < W; ++x) {
            for (std::size_t c = 0; c < C; ++c) t[(c * H + y) * W + x] = image.pixels[(y * W + x) * C + c];
        }
    }
    return t;
}

Image8 tensor_to_image(const Tensor& chw) {
    if (chw.rank() != 3 || (chw.dim(0) != 1 && chw.dim(0) != 3)) {
        throw ShapeError("tensor_to_image: expected [1|3,H,W], got " + chw.shape().str());
    }
    const std::size_t C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
    Image8 img{W, H, C, std::vector<std::uint8_t>(C * H * W)};
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                const float v = std::clamp(std::round(chw[(c * H + y) * W + x]), 0.0f, 255.0f);
                img.pixels[(y * W + x) * C + c] = static_cast<std::uint8_t>(v);
            }
        }
    }
    return img;
}

std::filesystem::path band_path(const std::filesystem::path& path, std::size_t band) {
    auto p = path;
    p.replace_filename(path.stem().string() + "_band" + std::to_string(band) + path.extension().string());
    return p;
}

Tensor load_scene_image(const std::filesystem::path& path) {
    if (std::filesystem::exists(path)) return image_to_tensor(read_png(path));
    std::vector<Tensor> bands;
    for (std::size_t k = 0; std::filesystem::exists(band_path(path, k)); ++k) {
        Image8 img = read_png(band_path(path, k));
        if (img.channels != 1) throw DataError(band_path(path, k).string() + ": band files must be single-channel");
        bands.push_back(image_to_tensor(img));
        if (bands.back().shape() != bands.front().shape()) throw DataError(path.string() + ": band sizes differ");
    }
    if (bands.empty()) throw DataError("scene image not found: " + path.string());
    const std::size_t H = bands[0].dim(1), W = bands[0].dim(2);
    Tensor out(Shape{bands.size(), H, W});
    for (std::size_t k = 0; k < bands.size(); ++k) std::copy_n(bands[k].data(), H * W, out.data() + k * H * W);
    return out;
}

void save_scene_image(const std::filesystem::path& path, const Tensor& chw) {
    if (chw.rank() != 3) throw ShapeError("save_scene_image: expected [C,H,W]");
    const std::size_t C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
    if (C == 1 || C == 3) {
        write_png(path, tensor_to_image(chw));
        return;
    }
    for (std::size_t k = 0; k < C; ++k) {
        Tensor band(Shape{1, H, W}, std::vector<float>(chw.data() + k * H * W, chw.data() + (k + 1) * H * W));
        write_png(band_path(path, k), tensor_to_image(band));
    }
}

void write_mask_png(const std::filesystem::path& path, const Tensor& mask) {
    if (mask.rank() != 3 || mask.dim(0) != 1) throw ShapeError("write_mask_png: expected [1,H,W]");
    Image8 img{mask.dim(2), mask.dim(1), 1, std::vector<std::uint8_t>(mask.size())};
    for (std::size_t i = 0; i < mask.size(); ++i) img.pixels[i] = mask[i] > 0.5f ? 255 : 0;
    write_png(path, img);
}

Tensor read_mask_png(const std::filesystem::path& path) {
    Image8 img = read_png(path);
    if (img.channels != 1) throw DataError(path.string() + ": mask must be single-channel");
    Tensor t(Shape{1, img.height, img.width});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = img.pixels[i] ? 1.0f : 0.0f;
    return t;
}

}  // namespace cseg
