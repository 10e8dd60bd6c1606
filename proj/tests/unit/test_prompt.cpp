#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <random>
#include <set>
#include <thread>

#include <json.hpp>

#include "aerialgen/core/error.hpp"
#include "aerialgen/core/layout.hpp"
#include "aerialgen/prompt/describe.hpp"
#include "aerialgen/prompt/prompt.hpp"
#include "aerialgen/prompt/text.hpp"
#include "mmr_oracle.hpp"

using namespace aerialgen;
using namespace aerialgen::prompt;

namespace {

int count_of(const std::string& s, const std::string& needle) {
    int n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
}

}  // namespace

TEST_CASE("hashed trigram embedder is unit norm and deterministic") {
    HashedTrigramEmbedder e;
    for (const char* t : {"a red building", "", "x", "Trees along the road!"}) {
        const auto v = e.embed(t);
        double n     = 0;
        for (double x : v) n += x * x;
        CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-6);
        CHECK(v == e.embed(t));
    }
    CHECK(cosine(e.embed("Road"), e.embed("road")) == doctest::Approx(1.0));
}

TEST_CASE("candidate phrases respect stopwords, punctuation and N") {
    const auto c = candidate_phrases("The tall buildings, and a quiet road near trees.", 3);
    const std::set<std::string> s(c.begin(), c.end());
    CHECK(s.contains("tall buildings"));
    CHECK(s.contains("quiet road"));
    CHECK_FALSE(s.contains("buildings quiet"));
    CHECK_FALSE(s.contains("the"));
    for (const auto& p : c) CHECK(std::count(p.begin(), p.end(), ' ') <= 2);
    CHECK(candidate_phrases("the and of", 3).empty());
}

TEST_CASE("MMR greedy matches exhaustive oracle") {
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> g;
    for (double lambda : {0.0, 0.3, 1.0}) {
        for (int inst = 0; inst < 200; ++inst) {
            const int n   = 1 + inst % 7;
            const int dim = 3 + inst % 5;
            std::vector<std::string> phrases;
            std::vector<Embedding> emb;
            for (int i = 0; i < n; ++i) {
                phrases.push_back("p" + std::to_string((i * 5 + inst) % 11) + "_" + std::to_string(i));
                Embedding v(dim);
                for (double& x : v) x = g(rng);
                emb.push_back(v);
            }
            Embedding q(dim);
            for (double& x : q) x = g(rng);
            const int m = 1 + inst % 6;
            REQUIRE(mmr_select(phrases, emb, q, lambda, m) == oracle::mmr_exhaustive(phrases, emb, q, lambda, m));
        }
    }
}

TEST_CASE("MMR special cases") {
    SUBCASE("lambda 1 ranks by relevance") {
        std::vector<Embedding> emb = {{1, 0}, {0.6, 0.8}, {0.8, 0.6}, {0, 1}};
        const auto idx             = mmr_select({"a", "b", "c", "d"}, emb, {1, 0}, 1.0, 4);
        CHECK(idx == std::vector<int>{0, 2, 1, 3});
    }
    SUBCASE("lambda 0 picks the least similar second") {
        // cos(a,b) = 0.9, cos(a,c) = 0.1
        std::vector<Embedding> emb = {{1, 0}, {0.9, std::sqrt(1 - 0.81)}, {0.1, std::sqrt(1 - 0.01)}};
        const auto idx             = mmr_select({"a", "b", "c"}, emb, {1, 0}, 0.0, 2);
        CHECK(idx == std::vector<int>{0, 2});
    }
    SUBCASE("exact ties go to the smaller phrase and order of input does not matter") {
        std::vector<Embedding> emb = {{1, 0}, {1, 0}};
        CHECK(mmr_select({"zeta", "alpha"}, emb, {1, 0}, 0.3, 1) == std::vector<int>{1});
        CHECK(mmr_select({"alpha", "zeta"}, emb, {1, 0}, 0.3, 1) == std::vector<int>{0});
    }
    CHECK(mmr_select({}, {}, {1, 0}, 0.3, 5).empty());
    CHECK_THROWS_AS(mmr_select({"a"}, {{1.0}}, {1.0}, 1.5, 1), ConfigError);
}

TEST_CASE("key phrase extraction returns distinct phrases, at most m") {
    HashedTrigramEmbedder e;
    const std::string doc =
        "A busy urban street with tall brick buildings on both sides, parked cars, a wide asphalt road, "
        "sidewalks with trees and a small park to the north.";
    const auto k = extract_keyphrases_mmr(doc, e);
    CHECK(k.size() == 5);
    std::set<std::string> s;
    for (const auto& p : k) {
        s.insert(p.phrase);
        CHECK(p.relevance >= -1.0);
        CHECK(p.relevance <= 1.0);
    }
    CHECK(s.size() == k.size());
    CHECK(extract_keyphrases_mmr("the of and", e).empty());
}

TEST_CASE("prompt templates render exactly") {
    CHECK(assemble_prompt(PromptTemplate::constant, "Seattle", std::vector<std::string>{}, "").rendered ==
          "Realistic aerial satellite top view image with high-quality details with buildings and roads");
    const auto city = assemble_prompt(PromptTemplate::city_only, "Seattle", std::vector<std::string>{}, "");
    CHECK(count_of(city.rendered, "Seattle") == 2);
    const auto dyn = assemble_prompt(PromptTemplate::dynamic, "Seattle", std::vector<std::string>{"a", "b"}, "");
    CHECK(dyn.rendered.find("that probably has the following objects and characteristics: a, b") != std::string::npos);
    CHECK(dyn.rendered.ends_with(": a, b"));
    CHECK(dyn.rendered.starts_with(city.rendered));
    CHECK_FALSE(dyn.fell_back);
    const auto fb = assemble_prompt(PromptTemplate::dynamic, "Seattle", std::vector<std::string>{}, "");
    CHECK(fb.fell_back);
    CHECK(fb.rendered == city.rendered);
    CHECK(assemble_prompt(PromptTemplate::raw, "", std::vector<std::string>{}, "some text").rendered == "some text");
    CHECK_THROWS_AS(assemble_prompt(PromptTemplate::raw, "", std::vector<std::string>{}, ""), ConfigError);
    CHECK(dyn.rendered == assemble_prompt(PromptTemplate::dynamic, "Seattle", std::vector<std::string>{"a", "b"}, "").rendered);
    CHECK(parse_template("city") == PromptTemplate::city_only);
    CHECK_THROWS(parse_template("bogus"));
}

TEST_CASE("synthetic descriptions mention counts") {
    LayoutMap l(64, 64);
    for (int y = 30; y < 34; ++y)
        for (int x = 0; x < 64; ++x) l.at(y, x) = class_index(LayoutClass::road);
    for (int b = 0; b < 3; ++b)
        for (int y = 5; y < 15; ++y)
            for (int x = 5 + 20 * b; x < 15 + 20 * b; ++x) l.at(y, x) = class_index(LayoutClass::building);
    const auto d = synthetic_description(l);
    CHECK(d.find("building") != std::string::npos);
    CHECK((d.find("three") != std::string::npos || d.find('3') != std::string::npos));
    const auto words = std::count(d.begin(), d.end(), ' ') + 1;
    CHECK(words >= 25);
    CHECK(words <= 90);
}

TEST_CASE("description cache avoids repeated calls") {
    const auto dir = std::filesystem::temp_directory_path() / "aerialgen_test_desc";
    std::filesystem::remove_all(dir);
    DescriptionCache cache(dir);
    int calls = 0;
    SyntheticDescriptionClient client([&](const std::string&) {
        ++calls;
        return LayoutMap(32, 32);
    });
    const auto a = describe_ground("img1", client, &cache);
    const auto b = describe_ground("img1", client, &cache);
    CHECK(calls == 1);
    CHECK(a.text == b.text);
    CHECK(DescriptionCache(dir).get("img1")->text == a.text);

    std::vector<std::thread> ts;
    for (int t = 0; t < 4; ++t) {
        ts.emplace_back([&, t] {
            for (int i = 0; i < 20; ++i) {
                cache.put({"t" + std::to_string(i), DescriptionSource::synthetic, "id" + std::to_string(t)});
                (void)cache.get("id" + std::to_string((t + 1) % 4));
            }
        });
    }
    for (auto& t : ts) t.join();
    CHECK(cache.get("id2").has_value());
}

TEST_CASE("remote client sends the rule prompt and retries") {
    RemoteConfig cfg;
    cfg.endpoint     = "http://127.0.0.1:9/describe";
    cfg.max_attempts = 3;
    int calls        = 0;
    std::vector<std::chrono::milliseconds> waits;
    std::string last_body;
    RemoteDescriptionClient client(
        cfg, [](const std::string&) { return std::vector<std::uint8_t>{1, 2, 3}; },
        [&](const std::string& body) {
            last_body = body;
            return ++calls < 3 ? TransportResponse{503, ""} : TransportResponse{200, R"({"text":"a street"})"};
        },
        [&](std::chrono::milliseconds d) { waits.push_back(d); });
    CHECK(client.request_body("g1").find("be limited to about 50 words maximum") != std::string::npos);
    const auto j = nlohmann::json::parse(client.request_body("g1"));
    CHECK(j.at("image_id") == "g1");
    CHECK(j.at("image_png_base64") == "AQID");
    const auto d = client.describe("g1");
    CHECK(d.text == "a street");
    CHECK(d.source == DescriptionSource::llm);
    CHECK(calls == 3);
    REQUIRE(waits.size() == 2);
    CHECK(waits[1] == 2 * waits[0]);

    RemoteDescriptionClient failing(
        cfg, [](const std::string&) { return std::vector<std::uint8_t>{}; },
        [](const std::string&) -> TransportResponse { throw IoError("refused"); }, [](auto) {});
    CHECK_THROWS_AS(failing.describe("g2"), IoError);
}
