#pragma once

#include <cstdint>
#include <vector>

#include "cseg/dataset.hpp"

namespace cseg {

struct SynthOptions {
    std::size_t channels = 3;
    std::size_t min_fields = 1;
    std::size_t max_fields = 2;
    double min_coverage = 0.01;  // per polygon, fraction of the scene area
    double max_coverage = 0.60;
};

// Noise backgrounds with convex quadrilateral fields filled by parallel crop rows. Pixel
// values are integers in [0, 255] so scenes survive an 8-bit round trip unchanged.
// Scene masks are rasterize(polygons) exactly.
std::vector<Scene> synth_dataset(std::size_t n_scenes, std::size_t size, std::uint64_t seed,
                                 const SynthOptions& options = {});

}  // namespace cseg
