#include "aerialgen/search/index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/image.hpp"

namespace aerialgen::search {

using nlohmann::json;

std::vector<float> to_float(const eval::Feature& f) { return {f.begin(), f.end()}; }

std::vector<SearchHit> RetrievalIndex::search(const std::vector<float>& query, int k) const {
    if (static_cast<int>(query.size()) != dim) {
        throw ShapeError("query has dimension " + std::to_string(query.size()) + ", index " + std::to_string(dim));
    }
    if (k < 1) throw ConfigError("k must be at least 1");
    std::vector<SearchHit> hits;
    hits.reserve(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
        double s = 0.0;
        for (int j = 0; j < dim; ++j) {
            const double d = static_cast<double>(query[static_cast<std::size_t>(j)]) - entries[i].vector[static_cast<std::size_t>(j)];
            s += d * d;
        }
        hits.push_back({static_cast<int>(i), std::sqrt(s)});
    }
    const auto n = std::min<std::size_t>(static_cast<std::size_t>(k), hits.size());
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(n), hits.end(),
                      [](const SearchHit& a, const SearchHit& b) {
                          return a.distance < b.distance || (a.distance == b.distance && a.entry < b.entry);
                      });
    hits.resize(n);
    return hits;
}

const IndexEntry* RetrievalIndex::find(const std::string& id) const {
    for (const auto& e : entries) {
        if (e.id == id) return &e;
    }
    return nullptr;
}

void RetrievalIndex::save(const std::filesystem::path& path) const {
    json items = json::array();
    for (const auto& e : entries) {
        items.push_back({{"id", e.id},
                         {"lat", e.location.lat},
                         {"lon", e.location.lon},
                         {"thumbnail", e.thumbnail.string()},
                         {"vector", e.vector}});
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write index " + path.string());
    out << json{{"version", 1}, {"embedder_fingerprint", embedder_fingerprint}, {"dim", dim}, {"entries", items}}.dump();
}

RetrievalIndex RetrievalIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read index " + path.string());
    const json j = json::parse(in);
    RetrievalIndex idx;
    idx.embedder_fingerprint = j.at("embedder_fingerprint").get<std::string>();
    idx.dim                  = j.at("dim").get<int>();
    for (const auto& e : j.at("entries")) {
        IndexEntry entry{e.at("id").get<std::string>(), e.at("vector").get<std::vector<float>>(),
                         {e.at("lat").get<double>(), e.at("lon").get<double>()},
                         e.at("thumbnail").get<std::string>()};
        if (static_cast<int>(entry.vector.size()) != idx.dim) throw IoError("index entry " + entry.id + " has wrong dimension");
        idx.entries.push_back(std::move(entry));
    }
    return idx;
}

RetrievalIndex build_index(const std::filesystem::path& aerial_dir, const eval::CvglEmbedder& embedder) {
    if (!std::filesystem::is_directory(aerial_dir)) throw IoError(aerial_dir.string() + " is not a directory");
    struct Found {
        std::string id;
        forge::GeoLocation loc;
        std::filesystem::path image;
    };
    std::vector<Found> found;
    for (const auto& it : std::filesystem::recursive_directory_iterator(aerial_dir)) {
        if (!it.is_regular_file() || it.path().filename() != "meta.json") continue;
        const auto image = it.path().parent_path() / "aerial.png";
        if (!std::filesystem::exists(image)) continue;
        std::ifstream in(it.path());
        const json meta = json::parse(in, nullptr, false);
        if (meta.is_discarded() || !meta.contains("id")) {
            spdlog::warn("skipping {}: unreadable meta.json", it.path().string());
            continue;
        }
        found.push_back({meta["id"].get<std::string>(), {meta.value("lat", 0.0), meta.value("lon", 0.0)}, image});
    }
    std::sort(found.begin(), found.end(), [](const Found& a, const Found& b) { return a.id < b.id; });

    RetrievalIndex idx;
    idx.embedder_fingerprint = embedder.fingerprint();
    idx.dim                  = embedder.dim();
    std::vector<Tensor> tensors;
    std::vector<const Found*> kept;
    for (const auto& f : found) {
        try {
            tensors.push_back(embedder.preprocess_aerial(read_png(f.image)));
            kept.push_back(&f);
        } catch (const std::exception& e) {
            spdlog::warn("skipping {}: {}", f.image.string(), e.what());
        }
    }
    if (kept.empty()) throw IoError("no readable aerials under " + aerial_dir.string());
    std::vector<const Tensor*> ptrs;
    for (const auto& t : tensors) ptrs.push_back(&t);
    const auto feats = embedder.aerial_features(ptrs);
    for (std::size_t i = 0; i < kept.size(); ++i) {
        idx.entries.push_back({kept[i]->id, to_float(feats[i]), kept[i]->loc, std::filesystem::absolute(kept[i]->image)});
    }
    return idx;
}

}  // namespace aerialgen::search
