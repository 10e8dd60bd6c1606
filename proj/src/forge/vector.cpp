#include "aerialgen/forge/vector.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <thread>

#include <spdlog/spdlog.h>

#include "aerialgen/core/error.hpp"

namespace aerialgen::forge {

namespace {

constexpr double kEarthCircumference = 40075016.686;

struct PixelPoint {
    double x, y;
};

// Local equirectangular approximation; tiles are a few hundred metres wide.
PixelPoint to_pixel(const GeoLocation& p, const RasterFrame& f) {
    const double m_per_deg_lat = kEarthCircumference / 360.0;
    const double m_per_deg_lon = m_per_deg_lat * std::cos(f.center.lat * std::numbers::pi / 180.0);
    const double east          = (p.lon - f.center.lon) * m_per_deg_lon;
    const double north         = (p.lat - f.center.lat) * m_per_deg_lat;
    return {f.size / 2.0 + east / f.ground_sample_distance, f.size / 2.0 - north / f.ground_sample_distance};
}

void fill_polygon(LayoutMap& out, const std::vector<PixelPoint>& poly, std::uint8_t cls) {
    if (poly.size() < 3) return;
    std::vector<double> xs;
    for (int y = 0; y < out.height; ++y) {
        const double cy = y + 0.5;
        xs.clear();
        for (std::size_t i = 0; i < poly.size(); ++i) {
            const auto& a = poly[i];
            const auto& b = poly[(i + 1) % poly.size()];
            if ((a.y <= cy) != (b.y <= cy)) xs.push_back(a.x + (cy - a.y) / (b.y - a.y) * (b.x - a.x));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
            const int x0 = std::max(0, static_cast<int>(std::ceil(xs[i] - 0.5)));
            const int x1 = std::min(out.width - 1, static_cast<int>(std::ceil(xs[i + 1] - 0.5)) - 1);
            for (int x = x0; x <= x1; ++x) out.at(y, x) = cls;
        }
    }
}

double segment_distance(PixelPoint p, PixelPoint a, PixelPoint b) {
    const double dx = b.x - a.x, dy = b.y - a.y;
    const double len2 = dx * dx + dy * dy;
    double t          = len2 > 0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
    t                 = std::clamp(t, 0.0, 1.0);
    return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

void stroke_line(LayoutMap& out, const std::vector<PixelPoint>& line, double half_width, std::uint8_t cls) {
    for (std::size_t s = 0; s + 1 < line.size(); ++s) {
        const auto a = line[s], b = line[s + 1];
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - half_width)));
        const int x1 = std::min(out.width - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + half_width)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - half_width)));
        const int y1 = std::min(out.height - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + half_width)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                if (segment_distance({x + 0.5, y + 0.5}, a, b) <= half_width) out.at(y, x) = cls;
            }
        }
    }
}

int draw_rank(LayoutClass c) {
    switch (c) {
        case LayoutClass::others: return 0;
        case LayoutClass::forest: return 1;
        case LayoutClass::water: return 2;
        case LayoutClass::playground: return 3;
        case LayoutClass::parking: return 4;
        case LayoutClass::path: return 5;
        case LayoutClass::road: return 6;
        case LayoutClass::building: return 7;
    }
    return 0;
}

}  // namespace

double ground_sample_distance(double lat, double zoom) {
    return kEarthCircumference * std::cos(lat * std::numbers::pi / 180.0) / (256.0 * std::pow(2.0, zoom));
}

LayoutClass class_for_tag(const std::string& tag, bool* known) {
    static const std::map<std::string, LayoutClass> table = {
        {"building", LayoutClass::building},     {"parking", LayoutClass::parking},
        {"amenity=parking", LayoutClass::parking}, {"playground", LayoutClass::playground},
        {"leisure=playground", LayoutClass::playground}, {"forest", LayoutClass::forest},
        {"wood", LayoutClass::forest},           {"landuse=forest", LayoutClass::forest},
        {"natural=wood", LayoutClass::forest},   {"park", LayoutClass::forest},
        {"water", LayoutClass::water},           {"natural=water", LayoutClass::water},
        {"path", LayoutClass::path},             {"footway", LayoutClass::path},
        {"highway=footway", LayoutClass::path},  {"sidewalk", LayoutClass::path},
        {"road", LayoutClass::road},             {"highway", LayoutClass::road},
        {"others", LayoutClass::others},
    };
    auto it = table.find(tag);
    if (known) *known = it != table.end();
    return it == table.end() ? LayoutClass::others : it->second;
}

LayoutMap render_vector_layout(const std::vector<VectorFeature>& features, const RasterFrame& frame) {
    if (frame.size <= 0 || !(frame.ground_sample_distance > 0)) throw ConfigError("invalid raster frame");
    LayoutMap out(frame.size, frame.size);

    std::vector<std::pair<LayoutClass, const VectorFeature*>> ordered;
    for (const auto& f : features) {
        bool known       = false;
        LayoutClass cls  = class_for_tag(f.tag, &known);
        if (!known) spdlog::warn("unknown map tag '{}' rendered as others", f.tag);
        ordered.emplace_back(cls, &f);
    }
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const auto& a, const auto& b) { return draw_rank(a.first) < draw_rank(b.first); });

    for (const auto& [cls, f] : ordered) {
        std::vector<PixelPoint> pts;
        for (const auto& p : f->points) pts.push_back(to_pixel(p, frame));
        if (f->kind == GeometryKind::polygon) {
            fill_polygon(out, pts, class_index(cls));
        } else {
            stroke_line(out, pts, f->width_m / frame.ground_sample_distance / 2.0, class_index(cls));
        }
    }
    return out;
}

std::vector<VectorFeature> parse_vector_features(const nlohmann::json& j) {
    std::vector<VectorFeature> out;
    for (const auto& e : j) {
        VectorFeature f;
        f.tag     = e.at("tag").get<std::string>();
        f.kind    = e.value("kind", std::string("polygon")) == "line" ? GeometryKind::line : GeometryKind::polygon;
        f.width_m = e.value("width_m", 6.0);
        for (const auto& p : e.at("points")) f.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
        out.push_back(std::move(f));
    }
    return out;
}

FixtureTileClient::FixtureTileClient(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::ifstream in(dir_ / "fixtures.json");
    if (!in) throw IoError("no fixtures.json in " + dir_.string());
    const auto j = nlohmann::json::parse(in);
    for (const auto& e : j) {
        entries_.push_back({e.at("lat").get<double>(), e.at("lon").get<double>(), e.value("zoom", 18.5),
                            e.at("file").get<std::string>()});
    }
    if (entries_.empty()) throw IoError("fixture index is empty");
}

Image FixtureTileClient::fetch(double lat, double lon, double zoom, int size) {
    if (size <= 0) throw ConfigError("tile size must be positive");
    const Entry* best = nullptr;
    double best_d     = 0.0;
    for (const auto& e : entries_) {
        const double d = std::hypot(e.lat - lat, e.lon - lon) + std::abs(e.zoom - zoom);
        if (!best || d < best_d) {
            best   = &e;
            best_d = d;
        }
    }
    Image img = read_png(dir_ / best->file);
    if (img.channels != 3) throw IoError("fixture tile " + best->file + " is not RGB");
    return img.height == size && img.width == size ? img : resize(img, size, size);
}

RetryingTileClient::RetryingTileClient(std::shared_ptr<TileClient> inner, int max_attempts,
                                       std::chrono::milliseconds backoff, Sleeper sleeper)
    : inner_(std::move(inner)), max_attempts_(max_attempts), backoff_(backoff), sleeper_(std::move(sleeper)) {
    if (max_attempts_ < 1) throw ConfigError("max_attempts must be >= 1");
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

Image RetryingTileClient::fetch(double lat, double lon, double zoom, int size) {
    auto delay = backoff_;
    for (int attempt = 1;; ++attempt) {
        try {
            Image img = inner_->fetch(lat, lon, zoom, size);
            if (img.height != size || img.width != size) img = resize(img, size, size);
            return img;
        } catch (const IoError& e) {
            if (attempt >= max_attempts_) throw;
            spdlog::warn("tile fetch failed ({}), retry {}/{}", e.what(), attempt, max_attempts_ - 1);
            sleeper_(delay);
            delay *= 2;
        }
    }
}

}  // namespace aerialgen::forge
