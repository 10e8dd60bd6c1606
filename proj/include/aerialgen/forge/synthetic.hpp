#pragma once

// Procedural "synthetic city" corpus: layouts, aerial renderings and a
// ray-cast ground panorama that follows the BEV azimuth convention.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aerialgen/core/image.hpp"
#include "aerialgen/core/layout.hpp"

namespace aerialgen::forge {

struct GeoLocation {
    double lat = 0.0;
    double lon = 0.0;
};

struct SyntheticCityConfig {
    std::string city = "SyntheticA";
    std::uint64_t seed = 1;
    int samples        = 500;
    int layout_size    = 128;
    int panorama_height = 256;

    // Probability of each optional road; any value > 0 guarantees one road
    // passing close to the observer.
    double road_density = 0.7;
    // Fraction of road-side slots that receive a building.
    double building_density = 0.6;
    // Probability that a road gets sidewalks.
    double path_density = 0.5;
    // Target area fractions (jittered per sample).
    double parking_frequency    = 0.04;
    double forest_frequency     = 0.06;
    double water_frequency      = 0.03;
    double playground_frequency = 0.02;
    double texture_noise        = 0.04;

    GeoLocation center{47.6, -122.3};
    double extent_degrees = 0.04;

    // Throws ConfigError for out-of-range values or frequencies summing above 1.
    void validate() const;

    // Four built-in city styles: SyntheticA..SyntheticD.
    static SyntheticCityConfig preset(const std::string& city, std::uint64_t seed, int samples);
    static std::vector<std::string> preset_names();
};

void to_json(nlohmann::json& j, const SyntheticCityConfig& c);
void from_json(const nlohmann::json& j, SyntheticCityConfig& c);

struct PanoramaSpec {
    int height = 256;  // width is 2 * height
    // Band height = (height/2) / (1 + distance * band_scale), distance in layout pixels.
    double band_scale = 0.05;
};

struct Sample {
    std::string id;
    std::string city;
    int index = 0;
    GeoLocation location;
    LayoutMap layout;
    Image aerial;
    Image ground;
    std::string description;
};

LayoutMap generate_layout(const SyntheticCityConfig& config, int index);
GeoLocation sample_location(const SyntheticCityConfig& config, int index);
Image render_aerial(const LayoutMap& layout, std::uint64_t seed, double texture_noise);
Image render_ground_panorama(const LayoutMap& layout, const PanoramaSpec& spec = {});

// Classes that rise above the horizon in the panorama.
bool is_standing(std::uint8_t cls);

struct RayHit {
    std::uint8_t cls  = 0;
    double distance   = 0.0;  // layout pixels from the centre
};

// First standing class along azimuth (0 = up, clockwise), if any.
std::optional<RayHit> cast_ray(const LayoutMap& layout, double azimuth);
// Recovers the band class and distance from one panorama column.
std::optional<RayHit> decode_band(const Image& panorama, int column, const PanoramaSpec& spec = {});

Sample generate_sample(const SyntheticCityConfig& config, int index);
std::vector<Sample> generate_synthetic_city(const SyntheticCityConfig& config, unsigned workers = 0);

std::string sample_id(const std::string& city, int index);

}  // namespace aerialgen::forge
