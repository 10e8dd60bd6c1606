#include "aerialgen/search/service.hpp"

#include <chrono>
#include <future>
#include <random>
#include <sstream>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "aerialgen/core/base64.hpp"
#include "aerialgen/core/error.hpp"
#include "aerialgen/core/random.hpp"
#include "aerialgen/nn/layers.hpp"
#include "aerialgen/prompt/text.hpp"
#include "aerialgen/stage2/train.hpp"

namespace aerialgen::search {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double millis_since(Clock::time_point t) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t).count();
}

ServiceResponse error_response(int status, const std::string& message, const std::string& trace = {}) {
    json j{{"error", message}};
    if (!trace.empty()) j["trace_id"] = trace;
    return {status, j.dump()};
}

std::string new_trace_id() {
    static std::atomic<std::uint64_t> counter{0};
    const auto now = static_cast<std::uint64_t>(Clock::now().time_since_epoch().count());
    return nn::fnv1a_hex(derive_seed({now, counter.fetch_add(1)}));
}

// Thrown inside handlers to return a specific status.
struct HttpFailure {
    ServiceResponse response;
};

}  // namespace

LayoutMap parse_sketch(const json& sketch) {
    constexpr int kMaxSide = 1024;
    if (sketch.is_array()) {
        const int h = static_cast<int>(sketch.size());
        if (h == 0 || h > kMaxSide || !sketch[0].is_array()) throw BadRequest("sketch grid must be a non-empty array of rows");
        const int w = static_cast<int>(sketch[0].size());
        if (w != h) throw BadRequest("sketch grid must be square");
        LayoutMap l(h, w);
        for (int y = 0; y < h; ++y) {
            const auto& row = sketch[static_cast<std::size_t>(y)];
            if (!row.is_array() || static_cast<int>(row.size()) != w) throw BadRequest("sketch rows must have equal length");
            for (int x = 0; x < w; ++x) {
                const auto& v = row[static_cast<std::size_t>(x)];
                if (!v.is_number_integer() || v.get<int>() < 0 || v.get<int>() >= kNumClasses) {
                    throw BadRequest("sketch values must be integers 0-7");
                }
                l.at(y, x) = static_cast<std::uint8_t>(v.get<int>());
            }
        }
        return l;
    }
    if (sketch.is_string()) {
        std::string text = sketch.get<std::string>();
        if (const auto comma = text.find(','); text.rfind("data:", 0) == 0 && comma != std::string::npos) {
            text = text.substr(comma + 1);
        }
        Image img;
        try {
            img = decode_png(base64_decode(text));
        } catch (const std::exception& e) {
            throw BadRequest(std::string("sketch PNG could not be decoded: ") + e.what());
        }
        if (img.height != img.width || img.height == 0 || img.height > kMaxSide) throw BadRequest("sketch PNG must be square");
        if (img.channels != 3) throw BadRequest("sketch PNG must be RGB");
        return quantize_palette(img);
    }
    throw BadRequest("sketch must be a class grid or a base64 PNG string");
}

SearchService::SearchService(std::shared_ptr<const RetrievalIndex> index,
                             std::shared_ptr<const stage2::Stage2Model> stage2,
                             std::shared_ptr<const eval::CvglEmbedder> embedder, ServiceOptions options)
    : index_(std::move(index)),
      stage2_(std::move(stage2)),
      embedder_(std::move(embedder)),
      options_(std::move(options)),
      in_flight_(std::make_shared<std::atomic<int>>(0)) {
    if (!stage2_ || !embedder_) throw ConfigError("the service needs a stage2 model and an embedder");
    if (options_.max_concurrent < 1) throw ConfigError("max_concurrent must be at least 1");
}

ServiceResponse SearchService::guarded(const std::function<ServiceResponse()>& fn) {
    try {
        return fn();
    } catch (const HttpFailure& f) {
        return f.response;
    } catch (const BadRequest& e) {
        return error_response(400, e.what());
    } catch (const json::exception& e) {
        return error_response(400, std::string("malformed JSON: ") + e.what());
    } catch (const std::exception& e) {
        const auto trace = new_trace_id();
        spdlog::error("request failed [{}]: {}", trace, e.what());
        return error_response(500, e.what(), trace);
    }
}

ServiceResponse SearchService::health() const {
    return {200, json{{"status", "ok"},
                      {"embedder_fingerprint", embedder_->fingerprint()},
                      {"index_size", index_ ? index_->entries.size() : 0}}
                     .dump()};
}

ServiceResponse SearchService::classes() const {
    json classes = json::array();
    for (int c = 0; c < kNumClasses; ++c) {
        char hex[8];
        std::snprintf(hex, sizeof(hex), "#%02X%02X%02X", kPalette[c][0], kPalette[c][1], kPalette[c][2]);
        classes.push_back({{"index", c}, {"name", std::string(kClassNames[c])}, {"color", hex}});
    }
    // Hand-drawn legend names mapped onto layout classes.
    const json legend{{"buildings", "building"}, {"streets", "road"}, {"sidewalks", "path"},
                      {"parking", "parking"},    {"trees", "forest"}};
    return {200, json{{"classes", classes}, {"sketch_legend", legend}}.dump()};
}

SearchService::Parsed SearchService::parse(const std::string& body, bool needs_k) const {
    const json j = json::parse(body);
    if (!j.is_object()) throw BadRequest("request body must be a JSON object");
    if (!j.contains("sketch")) throw BadRequest("missing sketch");
    Parsed p;
    p.layout = parse_sketch(j["sketch"]);
    p.text   = j.value("text", std::string());
    p.city   = j.value("city", options_.default_city);
    if (needs_k) {
        p.k = j.value("k", 5);
        if (p.k < 1 || p.k > options_.max_k) throw BadRequest("k must lie in [1, " + std::to_string(options_.max_k) + "]");
    }
    if (j.contains("seed") && !j["seed"].is_null()) {
        if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer()) throw BadRequest("seed must be an integer");
        p.seed = j["seed"].get<std::uint64_t>();
    } else {
        const std::string key = j["sketch"].dump() + '\n' + p.text + '\n' + p.city;
        p.seed                = hash_string(key);
    }
    return p;
}

SearchService::Synthesis SearchService::run_synthesis(const Parsed& req) {
    if (in_flight_->fetch_add(1) >= options_.max_concurrent) {
        in_flight_->fetch_sub(1);
        throw HttpFailure{error_response(429, "synthesis queue is full; retry later")};
    }
    auto slots = in_flight_;
    auto model = stage2_;
    const auto mode = req.text.empty() ? std::string("city") : model->config().prompt_mode;
    std::string prompt_text;
    try {
        prompt_text = stage2::build_prompt(mode, req.city, req.text, prompt::HashedTrigramEmbedder());
    } catch (const ConfigError& e) {
        slots->fetch_sub(1);
        throw BadRequest(e.what());
    }
    auto task = std::make_shared<std::packaged_task<Synthesis()>>([model, slots, prompt_text, req] {
        struct Release {
            std::shared_ptr<std::atomic<int>> s;
            ~Release() { s->fetch_sub(1); }
        } release{slots};
        const auto t0 = Clock::now();
        Synthesis s;
        s.image  = stage2::sample(*model, {req.layout, prompt_text, req.seed});
        s.prompt = prompt_text;
        s.seed   = req.seed;
        s.millis = millis_since(t0);
        return s;
    });
    auto future = task->get_future();
    std::thread([task] { (*task)(); }).detach();
    if (future.wait_for(std::chrono::duration<double>(options_.timeout_seconds)) != std::future_status::ready) {
        throw HttpFailure{error_response(504, "synthesis exceeded the request timeout")};
    }
    try {
        return future.get();
    } catch (const NumericError& e) {
        const auto trace = new_trace_id();
        spdlog::error("synthesis produced non-finite values [{}]: {}", trace, e.what());
        throw HttpFailure{error_response(500, std::string("synthesis failed: ") + e.what(), trace)};
    }
}

ServiceResponse SearchService::synthesize(const std::string& body) {
    return guarded([&] {
        const auto req = parse(body, false);
        const auto s   = run_synthesis(req);
        return ServiceResponse{200, json{{"image_png_base64", base64_encode(encode_png(s.image))},
                                         {"prompt", s.prompt},
                                         {"seed", s.seed},
                                         {"timings", {{"synthesis_ms", s.millis}}}}
                                        .dump()};
    });
}

ServiceResponse SearchService::search(const std::string& body) {
    return guarded([&] {
        if (!index_) throw HttpFailure{error_response(503, "no index loaded")};
        if (index_->embedder_fingerprint != embedder_->fingerprint()) {
            throw HttpFailure{error_response(409, "index was built with embedder " + index_->embedder_fingerprint +
                                                      ", service runs " + embedder_->fingerprint())};
        }
        const auto req = parse(body, true);
        const auto s   = run_synthesis(req);
        const auto t0  = Clock::now();
        const Tensor x = embedder_->preprocess_aerial(s.image);
        const auto f   = embedder_->aerial_features({&x}).front();
        const double embed_ms = millis_since(t0);
        const auto t1  = Clock::now();
        const auto hits = index_->search(to_float(f), req.k);
        const double search_ms = millis_since(t1);
        json results = json::array();
        for (const auto& h : hits) {
            const auto& e = index_->entries[static_cast<std::size_t>(h.entry)];
            results.push_back({{"id", e.id},
                               {"distance", h.distance},
                               {"location", {{"lat", e.location.lat}, {"lon", e.location.lon}}},
                               {"thumbnail_url", "/thumbnails/" + e.id + ".png"}});
        }
        return ServiceResponse{200, json{{"synthesized_png_base64", base64_encode(encode_png(s.image))},
                                         {"prompt", s.prompt},
                                         {"seed", s.seed},
                                         {"results", results},
                                         {"timings",
                                          {{"synthesis_ms", s.millis}, {"embedding_ms", embed_ms}, {"search_ms", search_ms}}}}
                                        .dump()};
    });
}

ServiceResponse SearchService::thumbnail(const std::string& id) const {
    const IndexEntry* e = index_ ? index_->find(id) : nullptr;
    if (!e) return error_response(404, "unknown id " + id);
    std::ifstream in(e->thumbnail, std::ios::binary);
    if (!in) return error_response(404, "thumbnail missing for " + id);
    std::ostringstream ss;
    ss << in.rdbuf();
    return {200, ss.str(), "image/png"};
}

HttpServer::HttpServer(SearchService& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
    auto& srv          = *server_;
    const auto origin  = service_.options().cors_origin;
    auto send = [origin](httplib::Response& res, const ServiceResponse& r) {
        res.status = r.status;
        res.set_content(r.body, r.content_type);
    };
    srv.set_post_routing_handler([origin](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", origin);
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
    });
    srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    srv.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, service_.health()); });
    srv.Get("/classes", [this, send](const httplib::Request&, httplib::Response& res) { send(res, service_.classes()); });
    srv.Post("/synthesize", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, service_.synthesize(req.body));
    });
    srv.Post("/search", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, service_.search(req.body));
    });
    srv.Get(R"(/thumbnails/([A-Za-z0-9_\-]+)\.png)", [this, send](const httplib::Request& req, httplib::Response& res) {
        send(res, service_.thumbnail(req.matches[1]));
    });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return bound;
}

void HttpServer::start() {
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

void HttpServer::run() { server_->listen_after_bind(); }

void HttpServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

}  // namespace aerialgen::search
