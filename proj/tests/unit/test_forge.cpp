#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/image.hpp"
#include "aerialgen/forge/manifest.hpp"
#include "aerialgen/forge/synthetic.hpp"
#include "aerialgen/forge/vector.hpp"

using namespace aerialgen;
using namespace aerialgen::forge;

namespace {

SyntheticCityConfig empty_world() {
    SyntheticCityConfig c;
    c.road_density         = 0;
    c.building_density     = 0;
    c.path_density         = 0;
    c.parking_frequency    = 0;
    c.forest_frequency     = 0;
    c.water_frequency      = 0;
    c.playground_frequency = 0;
    return c;
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("aerialgen_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

// Independent ray march at finer step than the generator.
std::optional<std::pair<std::uint8_t, double>> march(const LayoutMap& l, double az) {
    const double cx = l.width / 2.0, cy = l.height / 2.0;
    for (double d = 0; d < 200; d += 0.05) {
        const int x = static_cast<int>(std::floor(cx + d * std::sin(az)));
        const int y = static_cast<int>(std::floor(cy - d * std::cos(az)));
        if (x < 0 || y < 0 || x >= l.width || y >= l.height) return std::nullopt;
        const auto c = l.at(y, x);
        if (c == class_index(LayoutClass::building) || c == class_index(LayoutClass::forest)) return std::pair{c, d};
    }
    return std::nullopt;
}

}  // namespace

TEST_CASE("synthetic corpus is byte-identical across regenerations") {
    auto cfg    = SyntheticCityConfig::preset("SyntheticB", 7, 6);
    auto a      = generate_synthetic_city(cfg, 1);
    auto b      = generate_synthetic_city(cfg, 2);
    REQUIRE(a.size() == 6);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].layout == b[i].layout);
        CHECK(encode_png(a[i].aerial) == encode_png(b[i].aerial));
        CHECK(encode_png(a[i].ground) == encode_png(b[i].ground));
        CHECK(a[i].description == b[i].description);
    }
    auto other = generate_synthetic_city(SyntheticCityConfig::preset("SyntheticB", 8, 1));
    CHECK_FALSE(other[0].layout == a[0].layout);
}

TEST_CASE("aerial is a deterministic function of the layout") {
    const auto s = generate_sample(SyntheticCityConfig::preset("SyntheticA", 3, 1), 0);
    const auto x = render_aerial(s.layout, 99, 0.04);
    const auto y = render_aerial(s.layout, 99, 0.04);
    CHECK(x.data == y.data);
    CHECK(quantize_palette(render_aerial(s.layout, 1, 0.0)) == s.layout);
}

TEST_CASE("empty world gives others everywhere and a horizon-only panorama") {
    auto cfg    = empty_world();
    cfg.samples = 3;
    for (const auto& s : generate_synthetic_city(cfg)) {
        CHECK(s.layout.histogram()[class_index(LayoutClass::others)] == s.layout.height * s.layout.width);
        for (int r = 0; r < s.ground.height; ++r) {
            for (int x = 1; x < s.ground.width; ++x) {
                for (int c = 0; c < 3; ++c) REQUIRE(s.ground.at(c, r, x) == s.ground.at(c, r, 0));
            }
        }
        for (int x = 0; x < s.ground.width; x += 37) CHECK_FALSE(decode_band(s.ground, x).has_value());
    }
}

TEST_CASE("infeasible frequencies are rejected") {
    auto cfg              = SyntheticCityConfig::preset("SyntheticA", 1, 1);
    cfg.parking_frequency = 0.5;
    cfg.forest_frequency  = 0.6;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    CHECK_THROWS_AS(generate_synthetic_city(cfg), ConfigError);
}

TEST_CASE("every layout has a road when road density is positive") {
    for (const auto& name : SyntheticCityConfig::preset_names()) {
        auto cfg = SyntheticCityConfig::preset(name, 11, 125);
        for (int i = 0; i < cfg.samples; ++i) {
            const auto l = generate_layout(cfg, i);
            REQUIRE(l.histogram()[class_index(LayoutClass::road)] > 0);
        }
    }
}

TEST_CASE("a building due up produces a band centred at column 0") {
    LayoutMap l(128, 128);
    for (int y = 20; y < 30; ++y)
        for (int x = 60; x < 68; ++x) l.at(y, x) = class_index(LayoutClass::building);
    const auto pano = render_ground_panorama(l);
    std::vector<int> cols;
    for (int x = 0; x < pano.width; ++x) {
        if (decode_band(pano, x)) cols.push_back(x < pano.width / 2 ? x : x - pano.width);
    }
    REQUIRE(!cols.empty());
    double mean = 0;
    for (int c : cols) mean += c;
    mean /= static_cast<double>(cols.size());
    CHECK(std::abs(mean) < 0.5);
    CHECK(decode_band(pano, 0)->cls == class_index(LayoutClass::building));
    CHECK_FALSE(decode_band(pano, pano.width / 2).has_value());
}

TEST_CASE("nearer objects give strictly taller bands") {
    auto band_height = [](int gap) {
        LayoutMap l(128, 128);
        for (int y = 64 - gap - 4; y < 64 - gap; ++y)
            for (int x = 62; x < 66; ++x) l.at(y, x) = class_index(LayoutClass::building);
        const auto pano = render_ground_panorama(l);
        int rows        = 0;
        for (int r = 0; r < pano.height / 2; ++r) {
            if (std::abs(pano.at(0, r, 0) - 0xE0 / 255.0f * 0.8f) < 1e-3f) ++rows;
        }
        return rows;
    };
    CHECK(band_height(2) > band_height(10));
    CHECK(band_height(10) > band_height(30));
}

TEST_CASE("band decoding recovers the nearest standing class and ring") {
    int total = 0, correct = 0, dist_ok = 0;
    for (const auto& name : SyntheticCityConfig::preset_names()) {
        const auto cfg = SyntheticCityConfig::preset(name, 5, 10);
        for (int i = 0; i < cfg.samples; ++i) {
            const auto s = generate_sample(cfg, i);
            for (int u = 0; u < s.ground.width; u += 4) {
                const double az = 2.0 * std::numbers::pi * u / s.ground.width;
                const auto ref  = march(s.layout, az);
                if (!ref) continue;
                const auto got = decode_band(s.ground, u);
                ++total;
                if (!got) continue;
                // Forward convention: distance along azimuth from the centre.
                const double r = got->distance + 0.3;
                const int x    = static_cast<int>(std::floor(64 + r * std::sin(az)));
                const int y    = static_cast<int>(std::floor(64 - r * std::cos(az)));
                if (x >= 0 && y >= 0 && x < 128 && y < 128 && s.layout.at(y, x) == got->cls) ++correct;
                if (std::abs(got->distance - ref->second) < 1.0) ++dist_ok;
            }
        }
    }
    REQUIRE(total > 500);
    CHECK(static_cast<double>(correct) / total >= 0.95);
    CHECK(static_cast<double>(dist_ok) / total >= 0.95);
}

TEST_CASE("palette colours are mutually distinguishable") {
    for (int a = 0; a < kNumClasses; ++a) {
        for (int b = a + 1; b < kNumClasses; ++b) {
            int linf = 0;
            for (int c = 0; c < 3; ++c) linf = std::max(linf, std::abs(kPalette[a][c] - kPalette[b][c]));
            CHECK(linf >= 32);
        }
    }
}

TEST_CASE("layout and image PNG round trip") {
    const auto s   = generate_sample(SyntheticCityConfig::preset("SyntheticC", 2, 1), 0);
    const auto dir = scratch("png");
    write_layout_png(dir / "l.png", s.layout);
    CHECK(read_layout_png(dir / "l.png") == s.layout);
    write_png(dir / "g.png", s.ground);
    CHECK(read_png(dir / "g.png").data == s.ground.data);
    CHECK_THROWS_AS(read_png(dir / "missing.png"), IoError);
}

TEST_CASE("geographic split: 10 distinct latitudes give top 8 train") {
    std::vector<SampleRecord> recs;
    for (int i = 0; i < 10; ++i) {
        SampleRecord r;
        r.id       = "c_" + std::to_string(i);
        r.city     = "c";
        r.location = {40.0 + 0.01 * ((i * 7) % 10), 0.0};
        recs.push_back(r);
    }
    const auto s = split_geographic(recs);
    int test     = 0;
    for (const auto& r : recs) {
        const bool south = r.location.lat <= 40.0 + 0.01 * 1 + 1e-9;
        CHECK((s.at(r.id) == Split::test) == south);
        test += s.at(r.id) == Split::test;
    }
    CHECK(test == 2);
    for (auto& r : recs) r.location.lat = 1.0;
    CHECK_THROWS_AS(split_geographic(recs), ConfigError);
}

TEST_CASE("manifest protocols and persistence") {
    std::vector<Sample> samples;
    for (const auto& name : SyntheticCityConfig::preset_names()) {
        for (auto& s : generate_synthetic_city(SyntheticCityConfig::preset(name, 4, 10))) samples.push_back(std::move(s));
    }
    const auto dir = scratch("manifest");
    Manifest m;
    m.root    = dir;
    m.samples = write_corpus(samples, dir);
    apply_protocol(m, Protocol::same_area);
    m.verify();
    CHECK(m.in_split(Split::train).size() == 32);
    CHECK(m.in_split(Split::test).size() == 8);

    apply_protocol(m, Protocol::cross_area, {"SyntheticA", "SyntheticB"}, {"SyntheticC", "SyntheticD"});
    m.verify();
    for (const auto* r : m.in_split(Split::train)) CHECK((r->city == "SyntheticA" || r->city == "SyntheticB"));
    for (const auto* r : m.in_split(Split::test)) CHECK((r->city == "SyntheticC" || r->city == "SyntheticD"));
    CHECK(m.in_split(Split::train).size() == 16);
    CHECK(m.in_split(Split::test).size() == 4);
    CHECK_THROWS_AS(apply_protocol(m, Protocol::cross_area, {"SyntheticA"}, {"SyntheticA"}), ConfigError);

    m.save(dir / "manifest.json");
    const auto back = Manifest::load(dir / "manifest.json");
    CHECK(back.samples.size() == m.samples.size());
    CHECK(back.splits == m.splits);
    CHECK(back.protocol == Protocol::cross_area);
    CHECK(back.load_layout(back.samples[3]) == samples[3].layout);

    std::filesystem::remove(dir / m.samples[0].dir / "aerial.png");
    CHECK_THROWS_AS(back.verify(), IoError);
}

TEST_CASE("vector layout rasterization") {
    RasterFrame f{{47.0, 8.0}, 1.0, 100};
    const double dlat = 1.0 / (40075016.686 / 360.0);
    const double dlon = dlat / std::cos(47.0 * std::numbers::pi / 180.0);
    auto at           = [&](double east, double north) { return GeoLocation{47.0 + north * dlat, 8.0 + east * dlon}; };

    SUBCASE("no features") {
        const auto l = render_vector_layout({}, f);
        CHECK(l.histogram()[class_index(LayoutClass::others)] == 10000);
    }
    SUBCASE("quarter-tile building polygon") {
        VectorFeature b{"building", GeometryKind::polygon, {at(-25, -25), at(25, -25), at(25, 25), at(-25, 25)}};
        const auto l   = render_vector_layout({b}, f);
        const double p = l.histogram()[class_index(LayoutClass::building)] / 10000.0;
        CHECK(std::abs(p - 0.25) <= 0.01);
        VectorFeature tri{"building", GeometryKind::polygon, {at(-50, -50), at(50, -50), at(-50, 50)}};
        const double q = render_vector_layout({tri}, f).histogram()[0] / 10000.0;
        CHECK(std::abs(q - 0.5) <= 0.01);
    }
    SUBCASE("building overwrites a crossing road regardless of input order") {
        VectorFeature b{"building", GeometryKind::polygon, {at(-10, -10), at(10, -10), at(10, 10), at(-10, 10)}};
        VectorFeature r{"highway", GeometryKind::line, {at(-50, 0), at(50, 0)}, 8.0};
        const auto l = render_vector_layout({b, r}, f);
        CHECK(l.at(50, 50) == class_index(LayoutClass::building));
        CHECK(l.at(50, 5) == class_index(LayoutClass::road));
    }
    SUBCASE("unknown tag maps to others") {
        VectorFeature u{"amenity=fountain", GeometryKind::polygon, {at(-10, -10), at(10, -10), at(10, 10)}};
        bool known = true;
        CHECK(class_for_tag(u.tag, &known) == LayoutClass::others);
        CHECK_FALSE(known);
        CHECK(render_vector_layout({u}, f).histogram()[class_index(LayoutClass::others)] == 10000);
    }
    CHECK(std::abs(ground_sample_distance(0.0, 0.0) - 156543.03) < 0.01);
}

TEST_CASE("tile clients honour size and bounded retries") {
    const auto dir = scratch("tiles");
    Image tile(3, 300, 300, 0.5f);
    write_png(dir / "t.png", tile);
    std::ofstream(dir / "fixtures.json") << R"([{"lat":47.0,"lon":8.0,"zoom":18.5,"file":"t.png"}])";
    auto fixture = std::make_shared<FixtureTileClient>(dir);
    CHECK(fixture->fetch(47.0, 8.0, 18.5, 128).height == 128);

    struct Flaky : TileClient {
        int calls = 0, fail = 0;
        Image fetch(double, double, double, int size) override {
            if (++calls <= fail) throw IoError("down");
            return Image(3, size, size);
        }
    };
    auto flaky  = std::make_shared<Flaky>();
    flaky->fail = 2;
    int sleeps  = 0;
    RetryingTileClient ok(flaky, 3, std::chrono::milliseconds(1), [&](auto) { ++sleeps; });
    CHECK(ok.fetch(0, 0, 18, 64).width == 64);
    CHECK(sleeps == 2);
    flaky->calls = 0;
    flaky->fail  = 5;
    RetryingTileClient bad(flaky, 3, std::chrono::milliseconds(1), [](auto) {});
    CHECK_THROWS_AS(bad.fetch(0, 0, 18, 64), IoError);
    CHECK(flaky->calls == 3);
}
