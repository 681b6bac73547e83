#include "cseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace cseg {

namespace {

struct Field {
    PolygonLabel polygon;
    Tensor mask;
};

Ring random_quad(std::mt19937_64& rng, double size) {
    std::uniform_real_distribution<double> centre(0.1 * size, 0.9 * size);
    std::uniform_real_distribution<double> radius(0.12 * size, 0.45 * size);
    std::uniform_real_distribution<double> jitter(-0.5, 0.5);
    std::uniform_real_distribution<double> phase(0.0, std::numbers::pi / 2);
    const double cx = centre(rng), cy = centre(rng), r = radius(rng), p = phase(rng);
    // Vertices on a circle in angular order always form a convex polygon.
    Ring ring;
    for (int k = 0; k < 4; ++k) {
        const double a = p + k * std::numbers::pi / 2 + jitter(rng);
        ring.push_back({cx + r * std::cos(a), cy + r * std::sin(a)});
    }
    return ring;
}

double coverage(const Tensor& mask) {
    double n = 0;
    for (float v : mask.values()) n += v;
    return n / static_cast<double>(mask.size());
}

}  // namespace

std::vector<Scene> synth_dataset(std::size_t n_scenes, std::size_t size, std::uint64_t seed,
                                 const SynthOptions& options) {
    if (size < 8) throw ConfigError("synthetic scene size must be >= 8");
    if (options.channels < 1) throw ConfigError("synthetic scenes need at least one channel");
    if (options.min_fields < 1 || options.max_fields < options.min_fields) throw ConfigError("bad field count range");

    std::mt19937_64 rng(seed);
    const std::size_t C = options.channels, S = size;
    std::vector<Scene> scenes;
    for (std::size_t n = 0; n < n_scenes; ++n) {
        Scene scene;
        scene.scene_id = "synth_" + std::to_string(n);
        scene.source = "synthetic";
        scene.mask = Tensor(Shape{1, S, S});

        const auto n_fields = std::uniform_int_distribution<std::size_t>(options.min_fields, options.max_fields)(rng);
        std::vector<Field> fields;
        for (int attempt = 0; fields.size() < n_fields && attempt < 1000; ++attempt) {
            PolygonLabel poly{scene.scene_id, {random_quad(rng, static_cast<double>(S))}};
            Tensor m = rasterize(std::span<const PolygonLabel>(&poly, 1), S, S);
            const double cov = coverage(m);
            if (cov < options.min_coverage || cov > options.max_coverage) continue;
            bool overlaps = false;
            for (std::size_t i = 0; i < m.size() && !overlaps; ++i) overlaps = m[i] > 0 && scene.mask[i] > 0;
            if (overlaps) continue;
            for (std::size_t i = 0; i < m.size(); ++i) scene.mask[i] = std::max(scene.mask[i], m[i]);
            fields.push_back({std::move(poly), std::move(m)});
        }
        if (fields.empty()) throw DataError("synthetic generator failed to place a field");

        // Soil background: per-scene base colour plus pixel noise.
        std::uniform_real_distribution<double> soil(90.0, 150.0);
        std::normal_distribution<double> noise(0.0, 12.0);
        std::vector<double> base(C);
        for (auto& b : base) b = soil(rng);
        std::vector<double> pixels(C * S * S);
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t i = 0; i < S * S; ++i) pixels[c * S * S + i] = base[c] + noise(rng);
        }

        // Crop rows: a sinusoidal stripe pattern at a random angle and period, with
        // vegetation brighter in the second channel and darker elsewhere.
        for (const auto& f : fields) {
            const double angle = std::uniform_real_distribution<double>(0.0, std::numbers::pi)(rng);
            const double period = std::uniform_real_distribution<double>(4.0, 8.0)(rng);
            const double amp = std::uniform_real_distribution<double>(35.0, 60.0)(rng);
            const double dx = std::cos(angle), dy = std::sin(angle);
            for (std::size_t y = 0; y < S; ++y) {
                for (std::size_t x = 0; x < S; ++x) {
                    if (f.mask[y * S + x] == 0.0f) continue;
                    const double t = (x * dx + y * dy) * 2.0 * std::numbers::pi / period;
                    const double row = 0.5 * (1.0 + std::sin(t));
                    for (std::size_t c = 0; c < C; ++c) {
                        const double sign = (C > 1 && c == 1) ? 1.0 : -0.6;
                        pixels[(c * S + y) * S + x] += sign * amp * row;
                    }
                }
            }
            scene.polygons.push_back(f.polygon);
        }

        scene.image = Tensor(Shape{C, S, S});
        for (std::size_t i = 0; i < pixels.size(); ++i) {
            scene.image[i] = static_cast<float>(std::clamp(std::round(pixels[i]), 0.0, 255.0));
        }
        scenes.push_back(std::move(scene));
    }
    return scenes;
}

}  // namespace cseg
