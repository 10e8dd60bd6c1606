#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "aerialgen/core/image.hpp"
#include "aerialgen/core/layout.hpp"
#include "aerialgen/forge/synthetic.hpp"

namespace aerialgen::forge {

enum class GeometryKind { polygon, line };

struct VectorFeature {
    std::string tag;
    GeometryKind kind = GeometryKind::polygon;
    std::vector<GeoLocation> points;
    double width_m = 6.0;  // stroke width for lines
};

struct RasterFrame {
    GeoLocation center;
    // Metres per output pixel.
    double ground_sample_distance = 0.5;
    int size = 128;
};

// Web-Mercator metres per pixel of a 256-px tile pyramid at `zoom`.
double ground_sample_distance(double lat, double zoom);

// Maps an OSM-like tag or class name to a layout class; unknown -> others.
LayoutClass class_for_tag(const std::string& tag, bool* known = nullptr);

// Rasterizes in the fixed draw order
// others < forest < water < playground < parking < path < road < building.
LayoutMap render_vector_layout(const std::vector<VectorFeature>& features, const RasterFrame& frame);

std::vector<VectorFeature> parse_vector_features(const nlohmann::json& j);

class TileClient {
public:
    virtual ~TileClient() = default;
    // Returns an RGB image of exactly size x size pixels.
    virtual Image fetch(double lat, double lon, double zoom, int size) = 0;
};

// Serves recorded tiles from a directory indexed by fixtures.json:
// [{"lat":..,"lon":..,"zoom":..,"file":"x.png"}]. Picks the nearest entry.
class FixtureTileClient : public TileClient {
public:
    explicit FixtureTileClient(std::filesystem::path dir);
    Image fetch(double lat, double lon, double zoom, int size) override;

private:
    struct Entry {
        double lat, lon, zoom;
        std::string file;
    };
    std::filesystem::path dir_;
    std::vector<Entry> entries_;
};

// Retries a flaky client a bounded number of times with doubling backoff.
class RetryingTileClient : public TileClient {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;
    RetryingTileClient(std::shared_ptr<TileClient> inner, int max_attempts = 3,
                       std::chrono::milliseconds backoff = std::chrono::milliseconds(200), Sleeper sleeper = {});
    Image fetch(double lat, double lon, double zoom, int size) override;

private:
    std::shared_ptr<TileClient> inner_;
    int max_attempts_;
    std::chrono::milliseconds backoff_;
    Sleeper sleeper_;
};

}  // namespace aerialgen::forge
