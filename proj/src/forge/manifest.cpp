#include "aerialgen/forge/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <set>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/parallel.hpp"

namespace aerialgen::forge {

using nlohmann::json;

std::string to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::test: return "test";
        case Split::excluded: return "excluded";
    }
    return "excluded";
}

std::string to_string(Protocol p) { return p == Protocol::same_area ? "same_area" : "cross_area"; }

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test" || s == "val") return Split::test;
    if (s == "excluded") return Split::excluded;
    throw ConfigError("unknown split '" + s + "'");
}

Protocol parse_protocol(const std::string& s) {
    if (s == "same_area") return Protocol::same_area;
    if (s == "cross_area") return Protocol::cross_area;
    throw ConfigError("unknown protocol '" + s + "'");
}

std::vector<const SampleRecord*> Manifest::in_split(Split s) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : samples) {
        auto it = splits.find(r.id);
        if (it != splits.end() && it->second == s) out.push_back(&r);
    }
    return out;
}

const SampleRecord& Manifest::find(const std::string& id) const {
    for (const auto& r : samples) {
        if (r.id == id) return r;
    }
    throw ConfigError("manifest has no sample '" + id + "'");
}

Image Manifest::load_ground(const SampleRecord& r) const { return read_png(sample_dir(r) / "ground.png"); }
Image Manifest::load_aerial(const SampleRecord& r) const { return read_png(sample_dir(r) / "aerial.png"); }
LayoutMap Manifest::load_layout(const SampleRecord& r) const { return read_layout_png(sample_dir(r) / "layout.png"); }

void Manifest::verify() const {
    std::set<std::string> ids;
    for (const auto& r : samples) {
        if (!ids.insert(r.id).second) throw IoError("duplicate sample id " + r.id);
        for (const char* f : {"ground.png", "aerial.png", "layout.png", "meta.json"}) {
            if (!std::filesystem::exists(sample_dir(r) / f)) throw IoError("missing " + (sample_dir(r) / f).string());
        }
        if (!splits.contains(r.id)) throw IoError("sample " + r.id + " has no split");
    }
    if (splits.size() != samples.size()) throw IoError("split map references unknown samples");
}

void Manifest::save(const std::filesystem::path& path) const {
    json j;
    j["version"]      = version;
    j["protocol"]     = to_string(protocol);
    j["train_cities"] = train_cities;
    j["test_cities"]  = test_cities;
    j["samples"]      = json::array();
    for (const auto& r : samples) {
        j["samples"].push_back({{"id", r.id},
                                {"city", r.city},
                                {"index", r.index},
                                {"lat", r.location.lat},
                                {"lon", r.location.lon},
                                {"dir", r.dir},
                                {"description", r.description}});
    }
    j["splits"] = json::object();
    for (const auto& [id, s] : splits) j["splits"][id] = to_string(s);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(1);
}

Manifest Manifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read manifest " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + path.string() + ": " + e.what());
    }
    Manifest m;
    m.root         = path.parent_path();
    m.version      = j.value("version", 1);
    m.protocol     = parse_protocol(j.value("protocol", std::string("same_area")));
    m.train_cities = j.value("train_cities", std::vector<std::string>{});
    m.test_cities  = j.value("test_cities", std::vector<std::string>{});
    for (const auto& s : j.at("samples")) {
        SampleRecord r;
        r.id          = s.at("id").get<std::string>();
        r.city        = s.at("city").get<std::string>();
        r.index       = s.value("index", 0);
        r.location    = {s.at("lat").get<double>(), s.at("lon").get<double>()};
        r.dir         = s.at("dir").get<std::string>();
        r.description = s.value("description", std::string());
        m.samples.push_back(std::move(r));
    }
    for (const auto& [id, s] : j.at("splits").items()) m.splits[id] = parse_split(s.get<std::string>());
    return m;
}

std::vector<SampleRecord> write_corpus(const std::vector<Sample>& samples, const std::filesystem::path& root) {
    std::vector<SampleRecord> records;
    records.reserve(samples.size());
    for (const auto& s : samples) {
        SampleRecord r;
        r.id          = s.id;
        r.city        = s.city;
        r.index       = s.index;
        r.location    = s.location;
        r.dir         = (std::filesystem::path("corpus") / s.city / s.id).generic_string();
        r.description = s.description;
        const auto dir = root / r.dir;
        std::filesystem::create_directories(dir);
        write_png(dir / "ground.png", s.ground);
        write_png(dir / "aerial.png", s.aerial);
        write_layout_png(dir / "layout.png", s.layout);
        json meta{{"id", s.id},   {"city", s.city}, {"index", s.index}, {"lat", s.location.lat},
                  {"lon", s.location.lon}, {"description", s.description}};
        std::ofstream out(dir / "meta.json");
        if (!out) throw IoError("cannot write meta.json for " + s.id);
        out << meta.dump(1);
        records.push_back(std::move(r));
    }
    return records;
}

Manifest build_synthetic_corpus(const std::vector<SyntheticCityConfig>& cities, const std::filesystem::path& root,
                                unsigned workers, int chunk) {
    if (cities.empty()) throw ConfigError("no cities to generate");
    if (chunk < 1) throw ConfigError("chunk must be positive");
    Manifest m;
    m.root = root;
    for (const auto& city : cities) {
        city.validate();
        for (int start = 0; start < city.samples; start += chunk) {
            const int n = std::min(chunk, city.samples - start);
            std::vector<Sample> batch(static_cast<std::size_t>(n));
            parallel_for(
                n, [&](int i) { batch[static_cast<std::size_t>(i)] = generate_sample(city, start + i); }, workers);
            auto recs = write_corpus(batch, root);
            m.samples.insert(m.samples.end(), std::make_move_iterator(recs.begin()),
                             std::make_move_iterator(recs.end()));
        }
    }
    apply_protocol(m, Protocol::same_area);
    m.save(root / "manifest.json");
    return m;
}

std::map<std::string, Split> split_geographic(const std::vector<SampleRecord>& samples, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
    std::map<std::string, std::vector<const SampleRecord*>> by_city;
    for (const auto& r : samples) by_city[r.city].push_back(&r);
    std::map<std::string, Split> out;
    for (auto& [city, recs] : by_city) {
        std::vector<double> lats;
        for (const auto* r : recs) lats.push_back(r->location.lat);
        std::sort(lats.begin(), lats.end());
        if (lats.front() == lats.back()) {
            throw ConfigError("city " + city + " has a single latitude; a north/south split is undefined");
        }
        const auto n    = static_cast<double>(lats.size());
        const auto k    = static_cast<std::size_t>(std::ceil((1.0 - train_fraction) * n - 1e-9));
        const double th = k == 0 ? -1e300 : lats[k - 1];
        for (const auto* r : recs) out[r->id] = r->location.lat <= th ? Split::test : Split::train;
    }
    return out;
}

void apply_protocol(Manifest& manifest, Protocol protocol, std::vector<std::string> train_cities,
                    std::vector<std::string> test_cities, double train_fraction) {
    const auto geo = split_geographic(manifest.samples, train_fraction);
    std::set<std::string> all;
    for (const auto& r : manifest.samples) all.insert(r.city);
    manifest.protocol = protocol;
    if (protocol == Protocol::same_area) {
        manifest.splits       = geo;
        manifest.train_cities = {all.begin(), all.end()};
        manifest.test_cities  = manifest.train_cities;
        return;
    }
    if (train_cities.empty() && test_cities.empty()) {
        // Default: first half of the (sorted) cities trains, the rest tests.
        std::vector<std::string> sorted(all.begin(), all.end());
        const auto half = (sorted.size() + 1) / 2;
        train_cities.assign(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(half));
        test_cities.assign(sorted.begin() + static_cast<std::ptrdiff_t>(half), sorted.end());
    }
    const std::set<std::string> tr(train_cities.begin(), train_cities.end());
    const std::set<std::string> te(test_cities.begin(), test_cities.end());
    for (const auto& c : tr) {
        if (te.contains(c)) throw ConfigError("cross_area city " + c + " appears in both train and test sets");
    }
    if (tr.empty() || te.empty()) throw ConfigError("cross_area needs at least one train and one test city");
    manifest.splits.clear();
    for (const auto& r : manifest.samples) {
        const Split g = geo.at(r.id);
        Split s       = Split::excluded;
        if (tr.contains(r.city) && g == Split::train) s = Split::train;
        if (te.contains(r.city) && g == Split::test) s = Split::test;
        manifest.splits[r.id] = s;
    }
    manifest.train_cities = {tr.begin(), tr.end()};
    manifest.test_cities  = {te.begin(), te.end()};
}

}  // namespace aerialgen::forge
