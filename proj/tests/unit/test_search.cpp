#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "aerialgen/core/base64.hpp"
#include "aerialgen/core/error.hpp"
#include "aerialgen/core/image.hpp"
#include "aerialgen/core/random.hpp"
#include "aerialgen/forge/manifest.hpp"
#include "aerialgen/search/service.hpp"
#include "aerialgen/stage2/train.hpp"

using namespace aerialgen;
using namespace aerialgen::search;
using nlohmann::json;

namespace {

eval::CvglConfig small_cvgl() {
    eval::CvglConfig c;
    c.ground_height    = 16;
    c.ground_width     = 32;
    c.aerial_size      = 16;
    c.channels         = {4, 4, 4};
    c.feature_channels = 4;
    c.attention_maps   = 2;
    c.norm_groups      = 2;
    return c;
}

stage2::Stage2Config tiny_stage2() {
    stage2::Stage2Config c;
    c.image_size      = 16;
    c.channels        = {8, 8, 8};
    c.emb_dim         = 16;
    c.text_dim        = 16;
    c.norm_groups     = 4;
    c.diffusion_steps = 100;
    c.sample_steps    = 4;
    c.prompt_mode     = "dynamic";
    return c;
}

std::filesystem::path small_corpus(int n) {
    const auto root = std::filesystem::temp_directory_path() / ("aerialgen_search_" + std::to_string(n));
    if (!std::filesystem::exists(root / "manifest.json")) {
        auto city        = forge::SyntheticCityConfig::preset("SyntheticB", 5, n);
        city.layout_size = 32;
        city.panorama_height = 32;
        forge::build_synthetic_corpus({city}, root, 1, 16);
    }
    return root;
}

// Independent: full sort of all distances.
std::vector<int> sort_oracle(const RetrievalIndex& idx, const std::vector<float>& q, int k) {
    std::vector<std::pair<double, int>> d;
    for (std::size_t i = 0; i < idx.entries.size(); ++i) {
        long double s = 0;
        for (std::size_t j = 0; j < q.size(); ++j) {
            const long double diff = static_cast<long double>(q[j]) - idx.entries[i].vector[j];
            s += diff * diff;
        }
        d.push_back({static_cast<double>(std::sqrt(s)), static_cast<int>(i)});
    }
    std::stable_sort(d.begin(), d.end(), [](auto& a, auto& b) { return a.first < b.first; });
    std::vector<int> out;
    for (int i = 0; i < k && i < static_cast<int>(d.size()); ++i) out.push_back(d[static_cast<std::size_t>(i)].second);
    return out;
}

}  // namespace

TEST_CASE("exact search matches a full sort") {
    Rng rng(11);
    RetrievalIndex idx;
    idx.dim = 8;
    for (int i = 0; i < 300; ++i) {
        const Tensor t = Tensor::randn({8}, rng);
        idx.entries.push_back({"e" + std::to_string(i), {t.values().begin(), t.values().end()}, {}, {}});
    }
    // A few duplicates to exercise the tie rule.
    idx.entries.push_back({"dup", idx.entries[7].vector, {}, {}});
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor q = Tensor::randn({8}, rng);
        const std::vector<float> qv(q.values().begin(), q.values().end());
        for (int k : {1, 5, 17}) {
            const auto hits = idx.search(qv, k);
            const auto ref  = sort_oracle(idx, qv, k);
            REQUIRE(hits.size() == ref.size());
            for (std::size_t i = 0; i < hits.size(); ++i) CHECK(hits[i].entry == ref[i]);
        }
    }
    const auto self = idx.search(idx.entries[7].vector, 2);
    CHECK(self[0].entry == 7);
    CHECK(self[1].entry == 300);
    CHECK(self[0].distance == 0.0);
    CHECK(idx.search(idx.entries[0].vector, 1000).size() == idx.entries.size());
    CHECK_THROWS_AS(idx.search({1.0f}, 1), ShapeError);
    CHECK_THROWS_AS(idx.search(idx.entries[0].vector, 0), ConfigError);
}

TEST_CASE("adding an entry keeps the relative order of the others") {
    Rng rng(5);
    RetrievalIndex idx;
    idx.dim = 4;
    for (int i = 0; i < 50; ++i) {
        const Tensor t = Tensor::randn({4}, rng);
        idx.entries.push_back({"e" + std::to_string(i), {t.values().begin(), t.values().end()}, {}, {}});
    }
    const Tensor q = Tensor::randn({4}, rng);
    const std::vector<float> qv(q.values().begin(), q.values().end());
    const auto before = idx.search(qv, 50);
    const Tensor extra = Tensor::randn({4}, rng);
    idx.entries.push_back({"extra", {extra.values().begin(), extra.values().end()}, {}, {}});
    std::vector<int> after;
    for (const auto& h : idx.search(qv, 51)) {
        if (h.entry != 50) after.push_back(h.entry);
    }
    REQUIRE(after.size() == before.size());
    for (std::size_t i = 0; i < after.size(); ++i) CHECK(after[i] == before[i].entry);
}

TEST_CASE("index build, self retrieval and save/load") {
    const auto root = small_corpus(24);
    const eval::CvglEmbedder emb(small_cvgl());
    const auto idx = build_index(root, emb);
    REQUIRE(idx.entries.size() == 24);
    CHECK(std::is_sorted(idx.entries.begin(), idx.entries.end(), [](auto& a, auto& b) { return a.id < b.id; }));
    CHECK(idx.embedder_fingerprint == emb.fingerprint());
    for (const auto& e : idx.entries) {
        double n = 0;
        for (float v : e.vector) n += static_cast<double>(v) * v;
        CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
    }
    const auto again = build_index(root, emb);
    for (std::size_t i = 0; i < idx.entries.size(); ++i) CHECK(again.entries[i].vector == idx.entries[i].vector);

    const auto m = forge::Manifest::load(root / "manifest.json");
    int top1 = 0;
    for (const auto& r : m.samples) {
        const Tensor x = emb.preprocess_aerial(m.load_aerial(r));
        const auto q   = to_float(emb.aerial_features({&x}).front());
        const auto hit = idx.search(q, 1).front();
        top1 += idx.entries[static_cast<std::size_t>(hit.entry)].id == r.id;
        CHECK(idx.find(r.id)->location.lat == doctest::Approx(r.location.lat));
    }
    CHECK(top1 == 24);

    const auto path = std::filesystem::temp_directory_path() / "aerialgen_index_roundtrip.json";
    idx.save(path);
    const auto back = RetrievalIndex::load(path);
    REQUIRE(back.entries.size() == idx.entries.size());
    for (std::size_t i = 0; i < idx.entries.size(); ++i) {
        CHECK(back.entries[i].vector == idx.entries[i].vector);
        CHECK(back.entries[i].id == idx.entries[i].id);
    }
    CHECK_THROWS_AS(build_index(root / "missing", emb), IoError);
}

TEST_CASE("sketch parsing") {
    json grid = json::array();
    for (int y = 0; y < 4; ++y) grid.push_back(json::array({0, 1, 6, 7}));
    const auto l = parse_sketch(grid);
    CHECK(l.height == 4);
    CHECK(l.at(2, 2) == 6);

    const auto png = "data:image/png;base64," + base64_encode(encode_png(render_palette(l)));
    const auto from_png = parse_sketch(png);
    CHECK(from_png == l);

    CHECK_THROWS_AS(parse_sketch(json::array({json::array({0, 9})})), BadRequest);
    CHECK_THROWS_AS(parse_sketch(json::array({json::array({0, 1}), json::array({0})})), BadRequest);
    CHECK_THROWS_AS(parse_sketch(json("not-base64-png")), BadRequest);
    CHECK_THROWS_AS(parse_sketch(json(3)), BadRequest);
}

TEST_CASE("http api") {
    const auto root = small_corpus(24);
    auto emb        = std::make_shared<eval::CvglEmbedder>(small_cvgl());
    auto idx        = std::make_shared<RetrievalIndex>(build_index(root, *emb));
    auto model      = std::make_shared<stage2::Stage2Model>(tiny_stage2());
    SearchService service(idx, model, emb);
    HttpServer server(service);
    const int port = server.bind("127.0.0.1", 0);
    server.start();
    httplib::Client cli("127.0.0.1", port);
    cli.set_read_timeout(120, 0);

    auto health = cli.Get("/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(json::parse(health->body)["index_size"] == 24);
    CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

    auto classes = cli.Get("/classes");
    REQUIRE(classes);
    const auto cj = json::parse(classes->body);
    CHECK(cj["classes"].size() == 8);
    CHECK(cj["classes"][6]["name"] == "road");
    CHECK(cj["sketch_legend"]["streets"] == "road");

    json grid = json::array();
    for (int y = 0; y < 16; ++y) {
        json row = json::array();
        for (int x = 0; x < 16; ++x) row.push_back(x < 8 ? 0 : 6);
        grid.push_back(row);
    }
    const json req{{"sketch", grid}, {"text", "red roofs, a wide road"}, {"city", "Berlin"}, {"k", 3}};
    auto s1 = cli.Post("/search", req.dump(), "application/json");
    REQUIRE(s1);
    REQUIRE(s1->status == 200);
    const auto j1 = json::parse(s1->body);
    CHECK(j1["results"].size() == 3);
    CHECK(j1["prompt"].get<std::string>().find("Berlin") != std::string::npos);
    CHECK(j1["results"][0]["thumbnail_url"].get<std::string>().rfind("/thumbnails/", 0) == 0);
    for (std::size_t i = 1; i < 3; ++i) CHECK(j1["results"][i]["distance"] >= j1["results"][i - 1]["distance"]);
    const Image synth = decode_png(base64_decode(j1["synthesized_png_base64"].get<std::string>()));
    CHECK(synth.height == 16);

    // Same request, same seed, same answer.
    auto s2 = cli.Post("/search", req.dump(), "application/json");
    REQUIRE(s2);
    const auto j2 = json::parse(s2->body);
    CHECK(j2["synthesized_png_base64"] == j1["synthesized_png_base64"]);
    CHECK(j2["results"] == j1["results"]);

    auto thumb = cli.Get(j1["results"][0]["thumbnail_url"].get<std::string>());
    REQUIRE(thumb);
    CHECK(thumb->status == 200);
    CHECK(thumb->get_header_value("Content-Type") == "image/png");
    CHECK(cli.Get("/thumbnails/nope.png")->status == 404);

    auto syn = cli.Post("/synthesize", json{{"sketch", grid}, {"seed", 4}}.dump(), "application/json");
    REQUIRE(syn);
    CHECK(syn->status == 200);

    CHECK(cli.Post("/search", "{not json", "application/json")->status == 400);
    CHECK(cli.Post("/search", json{{"text", "x"}}.dump(), "application/json")->status == 400);
    CHECK(cli.Post("/search", json{{"sketch", grid}, {"k", 0}}.dump(), "application/json")->status == 400);

    auto opts = cli.Options("/search");
    REQUIRE(opts);
    CHECK(opts->status == 204);
    server.stop();
}

TEST_CASE("service rejects a mismatched index and a full queue") {
    const auto root = small_corpus(24);
    auto emb        = std::make_shared<eval::CvglEmbedder>(small_cvgl());
    auto idx        = std::make_shared<RetrievalIndex>(build_index(root, *emb));
    idx->embedder_fingerprint = "stale";
    auto model = std::make_shared<stage2::Stage2Model>(tiny_stage2());
    json grid  = json::array({json::array({0, 1}), json::array({2, 3})});
    SearchService svc(idx, model, emb);
    CHECK(svc.search(json{{"sketch", grid}}.dump()).status == 409);

    ServiceOptions slow;
    slow.timeout_seconds = 0.0;
    slow.max_concurrent  = 1;
    SearchService timed(nullptr, model, emb, slow);
    CHECK(timed.synthesize(json{{"sketch", grid}}.dump()).status == 504);
    // The abandoned job still holds the only slot until it finishes.
    const auto busy = timed.synthesize(json{{"sketch", grid}}.dump());
    CHECK((busy.status == 429 || busy.status == 504));
    while (timed.in_flight() > 0) std::this_thread::sleep_for(std::chrono::milliseconds(10));
}
