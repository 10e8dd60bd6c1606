#pragma once

// Sketch + text -> synthesized aerial -> embedding -> exact top-k retrieval,
// exposed over HTTP/JSON.

#include <atomic>
#include <memory>
#include <string>
#include <thread>

#include <json.hpp>

#include "aerialgen/core/layout.hpp"
#include "aerialgen/eval/embedder.hpp"
#include "aerialgen/search/index.hpp"
#include "aerialgen/stage2/model.hpp"

namespace httplib {
class Server;
}

namespace aerialgen::search {

struct ServiceOptions {
    int max_concurrent     = 2;      // synthesis jobs in flight; more get 429
    double timeout_seconds = 120.0;  // per synthesis job; exceeded -> 504
    std::string cors_origin = "*";
    std::string default_city = "Unknown";
    int max_k = 1000;
};

struct ServiceResponse {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

// Malformed client input; maps to HTTP 400.
class BadRequest : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Class grid (array of rows of 0-7) or palette PNG as base64 (an optional
// data-URL prefix is ignored; colours snap to the nearest palette entry).
LayoutMap parse_sketch(const nlohmann::json& sketch);

class SearchService {
public:
    SearchService(std::shared_ptr<const RetrievalIndex> index, std::shared_ptr<const stage2::Stage2Model> stage2,
                  std::shared_ptr<const eval::CvglEmbedder> embedder, ServiceOptions options = {});

    ServiceResponse health() const;
    ServiceResponse classes() const;
    ServiceResponse synthesize(const std::string& body);
    ServiceResponse search(const std::string& body);
    ServiceResponse thumbnail(const std::string& id) const;

    const ServiceOptions& options() const { return options_; }
    // Jobs still running, including ones whose request already timed out.
    int in_flight() const { return in_flight_->load(); }

private:
    struct Synthesis {
        Image image;
        std::string prompt;
        std::uint64_t seed = 0;
        double millis      = 0.0;
    };
    struct Parsed {
        LayoutMap layout;
        std::string text;
        std::string city;
        std::uint64_t seed = 0;
        int k              = 5;
    };
    Parsed parse(const std::string& body, bool needs_k) const;
    // Runs stage2 on the bounded pool; throws the HTTP mapping as ServiceResponse.
    Synthesis run_synthesis(const Parsed& req);
    ServiceResponse guarded(const std::function<ServiceResponse()>& fn);

    std::shared_ptr<const RetrievalIndex> index_;
    std::shared_ptr<const stage2::Stage2Model> stage2_;
    std::shared_ptr<const eval::CvglEmbedder> embedder_;
    ServiceOptions options_;
    std::shared_ptr<std::atomic<int>> in_flight_;
};

class HttpServer {
public:
    explicit HttpServer(SearchService& service);
    ~HttpServer();
    HttpServer(const HttpServer&)            = delete;
    HttpServer& operator=(const HttpServer&) = delete;

    // Port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    // Serves on a background thread until stop().
    void start();
    // Serves on the calling thread.
    void run();
    void stop();

private:
    SearchService& service_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

}  // namespace aerialgen::search
