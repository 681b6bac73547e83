#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cseg/tensor.hpp"

namespace cseg {

// Pixel coordinates: x to the right, y down; pixel (i, j) covers [i, i+1) x [j, j+1).
struct Point {
    double x = 0;
    double y = 0;
    bool operator==(const Point&) const = default;
};

using Ring = std::vector<Point>;

// One labelled field: first ring is the outer boundary, later rings are holes.
struct PolygonLabel {
    std::string scene_id;
    std::vector<Ring> rings;
};

// Contents of one per-scene label file:
//   {"scene_id": "...", "polygons": [{"rings": [[[x, y], ...], ...]}, ...]}
struct LabelDocument {
    std::string scene_id;
    std::vector<PolygonLabel> polygons;
};

// Appends the first vertex if the ring is open. Throws DataError if fewer than
// three distinct vertices remain.
Ring close_ring(const Ring& ring, std::size_t ring_index = 0);

// Pixel (x, y) is set iff its centre (x + 0.5, y + 0.5) lies inside some polygon under
// the even-odd rule (holes subtract). Vertices may lie outside the raster.
Tensor rasterize(std::span<const PolygonLabel> polygons, std::size_t width, std::size_t height);

LabelDocument read_label_file(const std::filesystem::path& path);
void write_label_file(const std::filesystem::path& path, const LabelDocument& doc);

std::string label_to_json(const LabelDocument& doc);
LabelDocument label_from_json(const std::string& text, const std::string& origin = "<memory>");

}  // namespace cseg
