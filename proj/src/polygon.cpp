#include "cseg/polygon.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace cseg {

namespace {

struct Edge {
    double x0, y0, x1, y1;
};

}  // namespace

Ring close_ring(const Ring& ring, std::size_t ring_index) {
    std::vector<Point> distinct;
    for (const auto& p : ring) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) {
            throw DataError("ring " + std::to_string(ring_index) + " has a non-finite vertex");
        }
        if (std::find(distinct.begin(), distinct.end(), p) == distinct.end()) distinct.push_back(p);
    }
    if (distinct.size() < 3) {
        throw DataError("degenerate ring " + std::to_string(ring_index) + ": fewer than 3 distinct vertices");
    }
    Ring closed = ring;
    if (!(closed.front() == closed.back())) closed.push_back(closed.front());
    return closed;
}

Tensor rasterize(std::span<const PolygonLabel> polygons, std::size_t width, std::size_t height) {
    Tensor mask(Shape{1, height, width});
    std::vector<double> crossings;
    for (const auto& poly : polygons) {
        std::vector<Edge> edges;
        for (std::size_t r = 0; r < poly.rings.size(); ++r) {
            const Ring ring = close_ring(poly.rings[r], r);
            for (std::size_t i = 0; i + 1 < ring.size(); ++i) {
                edges.push_back({ring[i].x, ring[i].y, ring[i + 1].x, ring[i + 1].y});
            }
        }
        for (std::size_t y = 0; y < height; ++y) {
            const double yc = static_cast<double>(y) + 0.5;
            crossings.clear();
            for (const auto& e : edges) {
                if ((e.y0 > yc) != (e.y1 > yc)) {
                    crossings.push_back((e.x1 - e.x0) * (yc - e.y0) / (e.y1 - e.y0) + e.x0);
                }
            }
            std::sort(crossings.begin(), crossings.end());
            // A centre is inside when an odd number of crossings lie strictly to its right,
            // i.e. when it falls in [c[2k], c[2k+1]).
            for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
                const double a = crossings[k], b = crossings[k + 1];
                if (b <= 0.0 || a >= static_cast<double>(width)) continue;
                const auto lo = static_cast<std::size_t>(std::max(0.0, std::floor(a) - 1.0));
                const auto hi = static_cast<std::size_t>(std::min(static_cast<double>(width), std::ceil(b) + 1.0));
                for (std::size_t x = lo; x < hi; ++x) {
                    const double xc = static_cast<double>(x) + 0.5;
                    if (xc >= a && xc < b) mask[y * width + x] = 1.0f;
                }
            }
        }
    }
    return mask;
}

std::string label_to_json(const LabelDocument& doc) {
    nlohmann::json j;
    j["scene_id"] = doc.scene_id;
    j["polygons"] = nlohmann::json::array();
    for (const auto& poly : doc.polygons) {
        nlohmann::json rings = nlohmann::json::array();
        for (const auto& ring : poly.rings) {
            nlohmann::json pts = nlohmann::json::array();
            for (const auto& p : ring) pts.push_back({p.x, p.y});
            rings.push_back(std::move(pts));
        }
        j["polygons"].push_back({{"rings", std::move(rings)}});
    }
    return j.dump(1);
}

LabelDocument label_from_json(const std::string& text, const std::string& origin) {
    LabelDocument doc;
    try {
        const auto j = nlohmann::json::parse(text);
        doc.scene_id = j.at("scene_id").get<std::string>();
        for (const auto& jp : j.at("polygons")) {
            PolygonLabel poly;
            poly.scene_id = doc.scene_id;
            for (const auto& jr : jp.at("rings")) {
                Ring ring;
                for (const auto& pt : jr) {
                    if (!pt.is_array() || pt.size() != 2) throw DataError("vertex must be [x, y]");
                    ring.push_back({pt[0].get<double>(), pt[1].get<double>()});
                }
                poly.rings.push_back(std::move(ring));
            }
            if (poly.rings.empty()) throw DataError("polygon without rings");
            doc.polygons.push_back(std::move(poly));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(origin + ": invalid label document: " + e.what());
    } catch (const DataError& e) {
        throw DataError(origin + ": " + e.what());
    }
    return doc;
}

LabelDocument read_label_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open label file " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return label_from_json(ss.str(), path.string());
}

void write_label_file(const std::filesystem::path& path, const LabelDocument& doc) {
    std::ofstream os(path);
    if (!os) throw DataError("cannot open " + path.string() + " for writing");
    os << label_to_json(doc) << '\n';
    if (!os) throw DataError("failed writing " + path.string());
}

}  // namespace cseg
