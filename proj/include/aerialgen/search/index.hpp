#pragma once

// Exact nearest-neighbour retrieval over embedded, geo-tagged aerials.

#include <filesystem>
#include <string>
#include <vector>

#include "aerialgen/eval/embedder.hpp"
#include "aerialgen/forge/synthetic.hpp"

namespace aerialgen::search {

struct IndexEntry {
    std::string id;
    std::vector<float> vector;
    forge::GeoLocation location;
    std::filesystem::path thumbnail;
};

struct SearchHit {
    int entry = 0;
    double distance = 0.0;
};

class RetrievalIndex {
public:
    std::string embedder_fingerprint;
    int dim = 0;
    std::vector<IndexEntry> entries;

    // k nearest by Euclidean distance, ties to the lower entry index.
    std::vector<SearchHit> search(const std::vector<float>& query, int k) const;
    const IndexEntry* find(const std::string& id) const;

    void save(const std::filesystem::path& path) const;
    static RetrievalIndex load(const std::filesystem::path& path);
};

std::vector<float> to_float(const eval::Feature& f);

// Every directory under `aerial_dir` holding aerial.png and meta.json becomes
// one entry (ordered by id). Unreadable images are skipped with a warning.
RetrievalIndex build_index(const std::filesystem::path& aerial_dir, const eval::CvglEmbedder& embedder);

}  // namespace aerialgen::search
