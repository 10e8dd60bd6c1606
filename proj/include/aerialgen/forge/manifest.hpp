#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "aerialgen/core/image.hpp"
#include "aerialgen/core/layout.hpp"
#include "aerialgen/forge/synthetic.hpp"

namespace aerialgen::forge {

enum class Split { train, test, excluded };
enum class Protocol { same_area, cross_area };

std::string to_string(Split s);
std::string to_string(Protocol p);
Split parse_split(const std::string& s);
Protocol parse_protocol(const std::string& s);

struct SampleRecord {
    std::string id;
    std::string city;
    int index = 0;
    GeoLocation location;
    // Sample directory relative to the manifest root.
    std::string dir;
    std::string description;
};

struct Manifest {
    int version = 1;
    std::filesystem::path root;
    std::vector<SampleRecord> samples;
    std::map<std::string, Split> splits;
    Protocol protocol = Protocol::same_area;
    std::vector<std::string> train_cities;
    std::vector<std::string> test_cities;

    std::vector<const SampleRecord*> in_split(Split s) const;
    const SampleRecord& find(const std::string& id) const;

    std::filesystem::path sample_dir(const SampleRecord& r) const { return root / r.dir; }
    Image load_ground(const SampleRecord& r) const;
    Image load_aerial(const SampleRecord& r) const;
    LayoutMap load_layout(const SampleRecord& r) const;

    // Throws IoError when referenced files are missing or splits are not total.
    void verify() const;
    void save(const std::filesystem::path& path) const;
    static Manifest load(const std::filesystem::path& path);
};

// Writes corpus/{city}/{id}/{ground,aerial,layout}.png plus meta.json under
// `root` and returns records in input order.
std::vector<SampleRecord> write_corpus(const std::vector<Sample>& samples, const std::filesystem::path& root);

// Generates every city in chunks, writes the corpus under `root`, applies the
// same_area split and saves root/manifest.json. Peak memory is one chunk.
Manifest build_synthetic_corpus(const std::vector<SyntheticCityConfig>& cities, const std::filesystem::path& root,
                                unsigned workers = 0, int chunk = 64);

// Per city: samples at or below the (1 - train_fraction) latitude quantile go
// to test, the rest (the north) to train.
std::map<std::string, Split> split_geographic(const std::vector<SampleRecord>& samples, double train_fraction = 0.8);

// same_area: every city contributes its north to train and south to test.
// cross_area: north of train_cities -> train, south of test_cities -> test,
// everything else excluded. The city lists must be disjoint.
void apply_protocol(Manifest& manifest, Protocol protocol, std::vector<std::string> train_cities = {},
                    std::vector<std::string> test_cities = {}, double train_fraction = 0.8);

}  // namespace aerialgen::forge
