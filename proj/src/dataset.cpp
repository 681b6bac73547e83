#include "cseg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "cseg/image_io.hpp"

namespace cseg {

Tensor crop(const Tensor& chw, std::size_t x0, std::size_t y0, std::size_t size) {
    if (chw.rank() != 3) throw ShapeError("crop: expected [C,H,W], got " + chw.shape().str());
    const std::size_t C = chw.dim(0), H = chw.dim(1), W = chw.dim(2);
    if (x0 + size > W || y0 + size > H) throw ShapeError("crop: window outside the raster");
    Tensor out(Shape{C, size, size});
    for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t y = 0; y < size; ++y) {
            const float* src = chw.data() + (c * H + y0 + y) * W + x0;
            std::copy_n(src, size, out.data() + (c * size + y) * size);
        }
    }
    return out;
}

std::vector<TileOrigin> tile_origins(const std::string& scene_id, std::size_t height, std::size_t width,
                                     std::size_t tile_size, std::size_t stride) {
    if (stride < 1) throw ConfigError("tile stride must be >= 1");
    if (tile_size < 1) throw ConfigError("tile size must be >= 1");
    if (tile_size > height || tile_size > width) {
        throw DataError("scene " + scene_id + " (" + std::to_string(height) + "x" + std::to_string(width) +
                        ") is smaller than the tile size " + std::to_string(tile_size));
    }
    std::vector<TileOrigin> out;
    for (std::size_t y = 0; y + tile_size <= height; y += stride) {
        for (std::size_t x = 0; x + tile_size <= width; x += stride) out.push_back({scene_id, x, y});
    }
    return out;
}

std::vector<Sample> tile_scene(const Scene& scene, std::size_t tile_size, std::size_t stride) {
    const std::size_t H = scene.image.dim(1), W = scene.image.dim(2);
    if (scene.mask.shape() != Shape{1, H, W}) {
        throw ShapeError("scene " + scene.scene_id + ": mask " + scene.mask.shape().str() + " does not match image " +
                         scene.image.shape().str());
    }
    std::vector<Sample> out;
    for (auto& o : tile_origins(scene.scene_id, H, W, tile_size, stride)) {
        out.push_back({crop(scene.image, o.x0, o.y0, tile_size), crop(scene.mask, o.x0, o.y0, tile_size), o});
    }
    return out;
}

Tensor stitch(std::span<const TilePrediction> tiles, std::size_t height, std::size_t width) {
    if (tiles.empty()) throw DataError("stitch: no tiles");
    const std::size_t C = tiles[0].values.dim(0);
    std::vector<double> sum(C * height * width, 0.0);
    std::vector<std::uint32_t> count(height * width, 0);
    for (const auto& t : tiles) {
        const auto& v = t.values;
        if (v.rank() != 3 || v.dim(0) != C || v.dim(1) != v.dim(2)) {
            throw ShapeError("stitch: tile values must be [C,S,S], got " + v.shape().str());
        }
        const std::size_t S = v.dim(1);
        if (t.origin.x0 + S > width || t.origin.y0 + S > height) throw ShapeError("stitch: tile outside the raster");
        for (std::size_t y = 0; y < S; ++y) {
            for (std::size_t x = 0; x < S; ++x) {
                const std::size_t p = (t.origin.y0 + y) * width + t.origin.x0 + x;
                ++count[p];
                for (std::size_t c = 0; c < C; ++c) sum[c * height * width + p] += v[(c * S + y) * S + x];
            }
        }
    }
    Tensor out(Shape{C, height, width});
    for (std::size_t p = 0; p < height * width; ++p) {
        if (count[p] == 0) {
            throw DataError("stitch: pixel (" + std::to_string(p % width) + ", " + std::to_string(p / width) +
                            ") is not covered by any tile");
        }
        for (std::size_t c = 0; c < C; ++c) {
            out[c * height * width + p] = static_cast<float>(sum[c * height * width + p] / count[p]);
        }
    }
    return out;
}

Tensor apply_geometry(const Tensor& t, const Geometry& g) {
    if (t.rank() != 3 && t.rank() != 4) throw ShapeError("apply_geometry: expected rank 3 or 4");
    const std::size_t H = t.dim(t.rank() - 2), W = t.dim(t.rank() - 1);
    const unsigned rot = g.rot90 % 4;
    if (rot % 2 == 1 && H != W) throw ShapeError("apply_geometry: odd rotation needs a square raster");
    const std::size_t planes = t.size() / (H * W);
    Tensor out(t.shape());
    for (std::size_t p = 0; p < planes; ++p) {
        const float* src = t.data() + p * H * W;
        float* dst = out.data() + p * H * W;
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                // Undo the rotation to find the source of output (y, x), then undo the flips.
                std::size_t sy = y, sx = x;
                for (unsigned r = 0; r < rot; ++r) {
                    const std::size_t ny = sx, nx = W - 1 - sy;
                    sy = ny;
                    sx = nx;
                }
                if (g.vflip) sy = H - 1 - sy;
                if (g.hflip) sx = W - 1 - sx;
                dst[y * W + x] = src[sy * W + sx];
            }
        }
    }
    return out;
}

Sample augment(const Sample& sample, const AugmentationSpec& spec, std::mt19937_64& rng) {
    Geometry g;
    std::bernoulli_distribution coin(0.5);
    if (spec.hflip) g.hflip = coin(rng);
    if (spec.vflip) g.vflip = coin(rng);
    if (spec.rot90) g.rot90 = static_cast<unsigned>(std::uniform_int_distribution<int>(0, 3)(rng));
    float scale = 1.0f;
    if (spec.brightness > 0.0) {
        scale = static_cast<float>(std::uniform_real_distribution<double>(1.0 - spec.brightness, 1.0 + spec.brightness)(rng));
    }
    Sample out{sample.image, sample.mask, sample.origin};
    if (g.hflip || g.vflip || g.rot90 != 0) {
        out.image = apply_geometry(sample.image, g);
        out.mask = apply_geometry(sample.mask, g);
    }
    if (scale != 1.0f) {
        for (float& v : out.image.values()) v *= scale;
    }
    return out;
}

std::pair<std::vector<Sample>, std::vector<Sample>> split_by_scene(std::span<const Sample> samples, double fraction,
                                                                   std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must be in (0, 1)");
    std::set<std::string> id_set;
    for (const auto& s : samples) id_set.insert(s.origin.scene_id);
    if (id_set.size() < 2) {
        throw DataError("scene-level split needs at least 2 scenes, got " + std::to_string(id_set.size()));
    }
    std::vector<std::string> ids(id_set.begin(), id_set.end());
    std::mt19937_64 rng(seed);
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n = static_cast<long>(ids.size());
    const long n_val = std::clamp(std::lround(fraction * static_cast<double>(n)), 1L, n - 1);
    const std::set<std::string> val_ids(ids.begin(), ids.begin() + n_val);

    std::pair<std::vector<Sample>, std::vector<Sample>> out;
    for (const auto& s : samples) (val_ids.count(s.origin.scene_id) ? out.second : out.first).push_back(s);
    return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open manifest " + path.string());
    const auto base = path.parent_path();
    std::string line;
    if (!std::getline(is, line)) throw DataError(path.string() + ": empty manifest");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "image,label,split") throw DataError(path.string() + ": expected header 'image,label,split'");
    std::vector<ManifestEntry> out;
    for (std::size_t lineno = 2; std::getline(is, line); ++lineno) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 3 || f[0].empty() || f[2].empty()) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'image,label,split'");
        }
        ManifestEntry e{f[0], f[1], f[2]};
        if (e.image.is_relative()) e.image = base / e.image;
        if (!e.label.empty() && e.label.is_relative()) e.label = base / e.label;
        out.push_back(std::move(e));
    }
    return out;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os << "image,label,split\n";
    for (const auto& e : entries) os << e.image.string() << ',' << e.label.string() << ',' << e.split << '\n';
    if (!os) throw DataError("failed writing " + path.string());
}

Scene load_scene(const ManifestEntry& entry) {
    Scene scene;
    scene.image = load_scene_image(entry.image);
    scene.source = entry.image.filename().string();
    const std::size_t H = scene.image.dim(1), W = scene.image.dim(2);
    if (entry.label.empty()) {
        scene.scene_id = entry.image.stem().string();
        scene.mask = Tensor(Shape{1, H, W});
        return scene;
    }
    LabelDocument doc = read_label_file(entry.label);
    scene.scene_id = doc.scene_id.empty() ? entry.image.stem().string() : doc.scene_id;
    try {
        scene.mask = rasterize(doc.polygons, W, H);
    } catch (const DataError& e) {
        throw DataError(entry.label.string() + ": " + e.what());
    }
    scene.polygons = std::move(doc.polygons);
    return scene;
}

std::vector<Scene> load_scenes(std::span<const ManifestEntry> entries, const std::string& split) {
    std::vector<Scene> out;
    for (const auto& e : entries) {
        if (split.empty() || e.split == split) out.push_back(load_scene(e));
    }
    return out;
}

std::vector<Sample> tile_scenes(std::span<const Scene> scenes, std::size_t tile_size, std::size_t stride) {
    std::vector<Sample> out;
    for (const auto& s : scenes) {
        auto tiles = tile_scene(s, tile_size, stride);
        std::move(tiles.begin(), tiles.end(), std::back_inserter(out));
    }
    return out;
}

NormalizationStats fit_normalization(std::span<const Sample> samples) {
    std::vector<Tensor> images;
    images.reserve(samples.size());
    for (const auto& s : samples) images.push_back(s.image);
    return fit_normalization(std::span<const Tensor>(images));
}

void normalize_samples(std::vector<Sample>& samples, const NormalizationStats& stats) {
    for (auto& s : samples) s.image = normalize(s.image, stats);
}

std::pair<Tensor, Tensor> make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices) {
    if (indices.empty()) throw DataError("make_batch: empty batch");
    const Shape is = samples[indices[0]].image.shape();
    const Shape ms = samples[indices[0]].mask.shape();
    Tensor images(Shape{indices.size(), is[0], is[1], is[2]});
    Tensor masks(Shape{indices.size(), ms[0], ms[1], ms[2]});
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto& s = samples[indices[b]];
        if (s.image.shape() != is || s.mask.shape() != ms) throw ShapeError("make_batch: samples differ in shape");
        std::copy_n(s.image.data(), is.numel(), images.data() + b * is.numel());
        std::copy_n(s.mask.data(), ms.numel(), masks.data() + b * ms.numel());
    }
    return {std::move(images), std::move(masks)};
}

}  // namespace cseg
