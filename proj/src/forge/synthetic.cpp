#include "aerialgen/forge/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/parallel.hpp"
#include "aerialgen/core/random.hpp"
#include "aerialgen/prompt/describe.hpp"

namespace aerialgen::forge {

namespace {

constexpr auto kOthers     = class_index(LayoutClass::others);
constexpr auto kRoad       = class_index(LayoutClass::road);
constexpr auto kPath       = class_index(LayoutClass::path);
constexpr auto kBuilding   = class_index(LayoutClass::building);
constexpr auto kParking    = class_index(LayoutClass::parking);
constexpr auto kForest     = class_index(LayoutClass::forest);
constexpr auto kWater      = class_index(LayoutClass::water);
constexpr auto kPlayground = class_index(LayoutClass::playground);

void check_unit(double v, const char* what) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
}

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
bool chance(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

struct Road {
    double px, py;  // point on the centre line (pixel coordinates)
    double ux, uy;  // unit direction
    double half_width;
    bool sidewalks;

    double along(double x, double y) const { return (x - px) * ux + (y - py) * uy; }
    double across(double x, double y) const { return -(x - px) * uy + (y - py) * ux; }
};

Road make_road(Rng& rng, int n, double max_offset, bool axis_aligned_bias) {
    Road r{};
    double angle;
    if (axis_aligned_bias && chance(rng, 0.75)) angle = chance(rng, 0.5) ? 0.0 : std::numbers::pi / 2;
    else angle = uniform(rng, 0.0, std::numbers::pi);
    r.ux               = std::cos(angle);
    r.uy               = std::sin(angle);
    const double off   = uniform(rng, -max_offset, max_offset);
    r.px               = n / 2.0 - r.uy * off;
    r.py               = n / 2.0 + r.ux * off;
    r.half_width       = uniform_int(rng, 6, 10) / 2.0;
    r.sidewalks        = false;
    return r;
}

// Paints `cls` on pixels satisfying pred; when only_on is set, only pixels of
// that class are replaced. Returns painted count.
template <class Pred>
int paint(LayoutMap& layout, std::uint8_t cls, Pred&& pred, int only_on = -1) {
    int painted = 0;
    for (int y = 0; y < layout.height; ++y) {
        for (int x = 0; x < layout.width; ++x) {
            if (only_on >= 0 && layout.at(y, x) != only_on) continue;
            if (pred(x + 0.5, y + 0.5)) {
                layout.at(y, x) = cls;
                ++painted;
            }
        }
    }
    return painted;
}

double jitter(Rng& rng, double target) { return target * uniform(rng, 0.0, 2.0); }

void place_roadside_rects(LayoutMap& layout, Rng& rng, const std::vector<Road>& roads, std::uint8_t cls,
                          double probability, int len_lo, int len_hi, int depth_lo, int depth_hi) {
    const double reach = layout.width * 0.75;
    for (const Road& road : roads) {
        for (int side : {-1, 1}) {
            double t = -reach + uniform(rng, 0.0, 6.0);
            while (t < reach) {
                const double len   = uniform_int(rng, len_lo, len_hi);
                const double depth = uniform_int(rng, depth_lo, depth_hi);
                const double set   = road.half_width + (road.sidewalks ? 3.0 : 0.0) + uniform(rng, 1.5, 5.0);
                if (chance(rng, probability)) {
                    const double t0 = t;
                    paint(
                        layout, cls,
                        [&](double x, double y) {
                            const double a = road.along(x, y);
                            const double c = road.across(x, y) * side;
                            return a >= t0 && a < t0 + len && c >= set && c < set + depth;
                        },
                        kOthers);
                }
                t += len + uniform(rng, 3.0, 8.0);
            }
        }
    }
}

void place_blobs(LayoutMap& layout, Rng& rng, std::uint8_t cls, double area_target) {
    int painted = 0;
    for (int attempt = 0; attempt < 24 && painted < area_target; ++attempt) {
        const double cx = uniform(rng, 0.0, layout.width);
        const double cy = uniform(rng, 0.0, layout.height);
        const int circles = uniform_int(rng, 2, 4);
        std::vector<std::array<double, 3>> discs;
        for (int c = 0; c < circles; ++c) {
            discs.push_back({cx + uniform(rng, -10.0, 10.0), cy + uniform(rng, -10.0, 10.0), uniform(rng, 6.0, 16.0)});
        }
        painted += paint(
            layout, cls,
            [&](double x, double y) {
                for (const auto& d : discs) {
                    if ((x - d[0]) * (x - d[0]) + (y - d[1]) * (y - d[1]) < d[2] * d[2]) return true;
                }
                return false;
            },
            kOthers);
    }
}

void place_rects(LayoutMap& layout, Rng& rng, std::uint8_t cls, double area_target, int lo, int hi) {
    int painted = 0;
    for (int attempt = 0; attempt < 24 && painted < area_target; ++attempt) {
        const double w  = uniform_int(rng, lo, hi);
        const double h  = uniform_int(rng, lo, hi);
        const double x0 = uniform(rng, 0.0, layout.width - w);
        const double y0 = uniform(rng, 0.0, layout.height - h);
        painted += paint(
            layout, cls, [&](double x, double y) { return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h; }, kOthers);
    }
}

std::array<float, 3> rgb(std::uint8_t cls, float factor = 1.0f) {
    const Rgb8& p = kPalette[cls];
    return {p[0] / 255.0f * factor, p[1] / 255.0f * factor, p[2] / 255.0f * factor};
}

std::array<float, 3> sky_colour(int row, int horizon) {
    const float t = horizon > 1 ? static_cast<float>(row) / static_cast<float>(horizon - 1) : 1.0f;
    return {0.45f + 0.35f * t, 0.62f + 0.25f * t, 0.85f + 0.09f * t};
}

constexpr float kBandShade = 0.8f;

}  // namespace

void SyntheticCityConfig::validate() const {
    if (city.empty()) throw ConfigError("city name must not be empty");
    if (samples < 0) throw ConfigError("samples must be non-negative");
    if (layout_size < 16) throw ConfigError("layout_size must be at least 16");
    if (panorama_height < 8 || panorama_height % 2) throw ConfigError("panorama_height must be even and >= 8");
    check_unit(road_density, "road_density");
    check_unit(building_density, "building_density");
    check_unit(path_density, "path_density");
    check_unit(parking_frequency, "parking_frequency");
    check_unit(forest_frequency, "forest_frequency");
    check_unit(water_frequency, "water_frequency");
    check_unit(playground_frequency, "playground_frequency");
    if (parking_frequency + forest_frequency + water_frequency + playground_frequency > 1.0) {
        throw ConfigError("class frequency targets sum above 1");
    }
    if (!(texture_noise >= 0.0 && texture_noise < 0.25)) throw ConfigError("texture_noise must lie in [0, 0.25)");
    if (!(extent_degrees > 0.0)) throw ConfigError("extent_degrees must be positive");
}

SyntheticCityConfig SyntheticCityConfig::preset(const std::string& city, std::uint64_t seed, int samples) {
    SyntheticCityConfig c;
    c.city    = city;
    c.seed    = seed;
    c.samples = samples;
    if (city == "SyntheticA") {
        c.building_density = 0.75;
        c.path_density     = 0.6;
        c.forest_frequency = 0.03;
        c.water_frequency  = 0.01;
        c.center           = {47.61, -122.33};
    } else if (city == "SyntheticB") {
        c.building_density  = 0.55;
        c.forest_frequency  = 0.12;
        c.parking_frequency = 0.02;
        c.center            = {40.71, -74.01};
    } else if (city == "SyntheticC") {
        c.building_density  = 0.5;
        c.water_frequency   = 0.08;
        c.parking_frequency = 0.05;
        c.center            = {37.77, -122.42};
    } else if (city == "SyntheticD") {
        c.building_density     = 0.65;
        c.parking_frequency    = 0.08;
        c.playground_frequency = 0.03;
        c.center               = {41.88, -87.63};
    } else {
        c.center = {10.0 + static_cast<double>(hash_string(city) % 6000) / 100.0, 0.0};
    }
    return c;
}

std::vector<std::string> SyntheticCityConfig::preset_names() {
    return {"SyntheticA", "SyntheticB", "SyntheticC", "SyntheticD"};
}

void to_json(nlohmann::json& j, const SyntheticCityConfig& c) {
    j = nlohmann::json{{"city", c.city},
                       {"seed", c.seed},
                       {"samples", c.samples},
                       {"layout_size", c.layout_size},
                       {"panorama_height", c.panorama_height},
                       {"road_density", c.road_density},
                       {"building_density", c.building_density},
                       {"path_density", c.path_density},
                       {"parking_frequency", c.parking_frequency},
                       {"forest_frequency", c.forest_frequency},
                       {"water_frequency", c.water_frequency},
                       {"playground_frequency", c.playground_frequency},
                       {"texture_noise", c.texture_noise},
                       {"center", {c.center.lat, c.center.lon}},
                       {"extent_degrees", c.extent_degrees}};
}

void from_json(const nlohmann::json& j, SyntheticCityConfig& c) {
    c = SyntheticCityConfig::preset(j.value("city", std::string("SyntheticA")), j.value("seed", std::uint64_t{1}),
                                    j.value("samples", 500));
    c.layout_size          = j.value("layout_size", c.layout_size);
    c.panorama_height      = j.value("panorama_height", c.panorama_height);
    c.road_density         = j.value("road_density", c.road_density);
    c.building_density     = j.value("building_density", c.building_density);
    c.path_density         = j.value("path_density", c.path_density);
    c.parking_frequency    = j.value("parking_frequency", c.parking_frequency);
    c.forest_frequency     = j.value("forest_frequency", c.forest_frequency);
    c.water_frequency      = j.value("water_frequency", c.water_frequency);
    c.playground_frequency = j.value("playground_frequency", c.playground_frequency);
    c.texture_noise        = j.value("texture_noise", c.texture_noise);
    c.extent_degrees       = j.value("extent_degrees", c.extent_degrees);
    if (j.contains("center")) c.center = {j["center"].at(0).get<double>(), j["center"].at(1).get<double>()};
}

std::string sample_id(const std::string& city, int index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", index);
    return city + "_" + buf;
}

LayoutMap generate_layout(const SyntheticCityConfig& config, int index) {
    config.validate();
    const int n = config.layout_size;
    Rng rng     = make_rng({config.seed, hash_string(config.city), static_cast<std::uint64_t>(index), 1});
    LayoutMap layout(n, n);

    std::vector<Road> roads;
    if (config.road_density > 0.0) {
        roads.push_back(make_road(rng, n, 0.1 * n, true));
        for (int extra = 0; extra < 2; ++extra) {
            if (chance(rng, config.road_density * 0.6)) roads.push_back(make_road(rng, n, 0.4 * n, true));
        }
    }
    for (Road& r : roads) r.sidewalks = chance(rng, config.path_density);
    for (const Road& r : roads) {
        paint(layout, kRoad, [&](double x, double y) { return std::abs(r.across(x, y)) <= r.half_width; });
    }
    for (const Road& r : roads) {
        if (!r.sidewalks) continue;
        paint(
            layout, kPath,
            [&](double x, double y) {
                const double a = std::abs(r.across(x, y));
                return a > r.half_width && a <= r.half_width + 3.0;
            },
            kOthers);
    }
    if (config.building_density > 0.0) {
        place_roadside_rects(layout, rng, roads, kBuilding, config.building_density, 10, 22, 10, 20);
    }
    const double area = static_cast<double>(n) * n;
    if (config.parking_frequency > 0.0) {
        const double target = jitter(rng, config.parking_frequency) * area;
        int painted         = 0;
        for (int attempt = 0; attempt < 12 && painted < target; ++attempt) {
            const auto before = layout.histogram()[kParking];
            if (!roads.empty()) place_roadside_rects(layout, rng, {roads[attempt % roads.size()]}, kParking, 0.15, 14, 26, 10, 18);
            else place_rects(layout, rng, kParking, target, 12, 24);
            painted += layout.histogram()[kParking] - before;
        }
    }
    if (config.playground_frequency > 0.0) place_rects(layout, rng, kPlayground, jitter(rng, config.playground_frequency) * area, 10, 16);
    if (config.water_frequency > 0.0) place_blobs(layout, rng, kWater, jitter(rng, config.water_frequency) * area);
    if (config.forest_frequency > 0.0) place_blobs(layout, rng, kForest, jitter(rng, config.forest_frequency) * area);
    return layout;
}

GeoLocation sample_location(const SyntheticCityConfig& config, int index) {
    Rng rng = make_rng({config.seed, hash_string(config.city), static_cast<std::uint64_t>(index), 2});
    const double h = config.extent_degrees / 2.0;
    return {config.center.lat + uniform(rng, -h, h), config.center.lon + uniform(rng, -h, h)};
}

Image render_aerial(const LayoutMap& layout, std::uint64_t seed, double texture_noise) {
    layout.validate();
    Image img = render_palette(layout);
    Rng rng(derive_seed({seed, 3}));
    std::uniform_real_distribution<float> noise(-1.0f, 1.0f);
    const auto amp = static_cast<float>(texture_noise);
    for (int y = 0; y < layout.height; ++y) {
        for (int x = 0; x < layout.width; ++x) {
            const auto cls = layout.at(y, x);
            float factor   = 1.0f;
            if (cls == kBuilding) {
                const bool edge = y == 0 || x == 0 || y == layout.height - 1 || x == layout.width - 1 ||
                                  layout.at(y - 1, x) != cls || layout.at(y + 1, x) != cls ||
                                  layout.at(y, x - 1) != cls || layout.at(y, x + 1) != cls;
                if (edge) factor = 0.85f;
            }
            const float n = noise(rng) * amp * (cls == kForest ? 1.5f : 1.0f);
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = std::clamp(img.at(c, y, x) * factor + n, 0.0f, 1.0f);
        }
    }
    return img;
}

bool is_standing(std::uint8_t cls) { return cls == kBuilding || cls == kForest; }

std::optional<RayHit> cast_ray(const LayoutMap& layout, double azimuth) {
    const double cx    = layout.width / 2.0;
    const double cy    = layout.height / 2.0;
    const double sx    = std::sin(azimuth);
    const double sy    = -std::cos(azimuth);
    const double limit = std::hypot(cx, cy);
    for (double d = 0.0; d <= limit; d += 0.25) {
        const int x = static_cast<int>(std::floor(cx + d * sx));
        const int y = static_cast<int>(std::floor(cy + d * sy));
        if (x < 0 || y < 0 || x >= layout.width || y >= layout.height) break;
        const auto cls = layout.at(y, x);
        if (is_standing(cls)) return RayHit{cls, d};
    }
    return std::nullopt;
}

Image render_ground_panorama(const LayoutMap& layout, const PanoramaSpec& spec) {
    layout.validate();
    if (spec.height < 8 || spec.height % 2) throw ConfigError("panorama height must be even and >= 8");
    const int h       = spec.height;
    const int w       = 2 * h;
    const int horizon = h / 2;
    Image pano(3, h, w);
    const double cx    = layout.width / 2.0;
    const double cy    = layout.height / 2.0;
    const double r_max = std::hypot(cx, cy);
    const std::array<float, 3> haze{0.78f, 0.80f, 0.82f};

    for (int x = 0; x < w; ++x) {
        const double azimuth = 2.0 * std::numbers::pi * x / w;
        for (int r = 0; r < horizon; ++r) {
            const auto s = sky_colour(r, horizon);
            for (int c = 0; c < 3; ++c) pano.at(c, r, x) = s[static_cast<std::size_t>(c)];
        }
        if (const auto hit = cast_ray(layout, azimuth)) {
            const double band = horizon / (1.0 + hit->distance * spec.band_scale);
            const double top  = horizon - band;
            const auto colour = rgb(hit->cls, kBandShade);
            for (int r = std::max(0, static_cast<int>(std::floor(top))); r < horizon; ++r) {
                const double cover = std::clamp(std::min<double>(r + 1, horizon) - std::max<double>(r, top), 0.0, 1.0);
                const auto s       = sky_colour(r, horizon);
                for (int c = 0; c < 3; ++c) {
                    const auto k     = static_cast<std::size_t>(c);
                    pano.at(c, r, x) = static_cast<float>(cover * colour[k] + (1.0 - cover) * s[k]);
                }
            }
        }
        const double sx = std::sin(azimuth);
        const double sy = -std::cos(azimuth);
        for (int r = horizon; r < h; ++r) {
            const double v    = (r - horizon + 0.5) / horizon;
            const double dist = r_max * (1.0 - v);
            const int lx      = static_cast<int>(std::floor(cx + dist * sx));
            const int ly      = static_cast<int>(std::floor(cy + dist * sy));
            std::uint8_t cls  = kOthers;
            if (lx >= 0 && ly >= 0 && lx < layout.width && ly < layout.height) cls = layout.at(ly, lx);
            const auto base = rgb(cls, 0.9f);
            const auto fog  = static_cast<float>(0.3 * (1.0 - v));
            for (int c = 0; c < 3; ++c) {
                const auto k     = static_cast<std::size_t>(c);
                pano.at(c, r, x) = base[k] * (1.0f - fog) + haze[k] * fog;
            }
        }
    }
    return pano;
}

std::optional<RayHit> decode_band(const Image& panorama, int column, const PanoramaSpec& spec) {
    const int horizon = panorama.height / 2;
    if (column < 0 || column >= panorama.width) throw ShapeError("decode_band: column out of range");
    auto pixel = [&](int r) {
        return std::array<float, 3>{panorama.at(0, r, column), panorama.at(1, r, column), panorama.at(2, r, column)};
    };
    auto close = [](const std::array<float, 3>& a, const std::array<float, 3>& b) {
        for (int c = 0; c < 3; ++c) {
            if (std::abs(a[static_cast<std::size_t>(c)] - b[static_cast<std::size_t>(c)]) > 2.5f / 255.0f) return false;
        }
        return true;
    };
    std::optional<std::uint8_t> cls;
    const auto first = pixel(horizon - 1);
    for (std::uint8_t k = 0; k < kNumClasses; ++k) {
        if (is_standing(k) && close(first, rgb(k, kBandShade))) cls = k;
    }
    if (!cls) return std::nullopt;
    const auto colour = rgb(*cls, kBandShade);
    int full          = 0;
    int r             = horizon - 1;
    while (r >= 0 && close(pixel(r), colour)) {
        ++full;
        --r;
    }
    double alpha = 0.0;
    if (r >= 0) {
        const auto s   = sky_colour(r, horizon);
        const auto p   = pixel(r);
        std::size_t ch = 0;
        for (std::size_t c = 1; c < 3; ++c) {
            if (std::abs(colour[c] - s[c]) > std::abs(colour[ch] - s[ch])) ch = c;
        }
        alpha = std::clamp((p[ch] - s[ch]) / (colour[ch] - s[ch]), 0.0f, 1.0f);
    }
    const double height = full + alpha;
    return RayHit{*cls, std::max(0.0, (horizon / height - 1.0) / spec.band_scale)};
}

Sample generate_sample(const SyntheticCityConfig& config, int index) {
    Sample s;
    s.id          = sample_id(config.city, index);
    s.city        = config.city;
    s.index       = index;
    s.location    = sample_location(config, index);
    s.layout      = generate_layout(config, index);
    s.aerial      = quantize8(render_aerial(
        s.layout, derive_seed({config.seed, hash_string(config.city), static_cast<std::uint64_t>(index)}),
        config.texture_noise));
    s.ground      = quantize8(render_ground_panorama(s.layout, PanoramaSpec{config.panorama_height}));
    s.description = prompt::synthetic_description(s.layout);
    return s;
}

std::vector<Sample> generate_synthetic_city(const SyntheticCityConfig& config, unsigned workers) {
    config.validate();
    std::vector<Sample> out(static_cast<std::size_t>(config.samples));
    parallel_for(
        config.samples, [&](int i) { out[static_cast<std::size_t>(i)] = generate_sample(config, i); }, workers);
    return out;
}

}  // namespace aerialgen::forge
