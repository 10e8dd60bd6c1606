#include "aerialgen/prompt/describe.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <json.hpp>
#include <numbers>
#include <thread>

#include "aerialgen/core/base64.hpp"
#include "aerialgen/core/error.hpp"

namespace aerialgen::prompt {

using nlohmann::json;

const std::string_view kGroundDescriptionPrompt =
    "You are an AI visual assistant who greatly understands geospatial data. Please generate a paragraph to give a "
    "high-level description of the image below with the following constraints. Your output should only be this "
    "paragraph without any introductory sentences. Please follow the following rules:\n"
    "1. focus on giving a general description of the place in the image, don't include small-level details like "
    "pedestrians and cars.\n"
    "2. focus on the buildings, if any, their type, and the number of close-by buildings.\n"
    "3. Do not care about any weather conditions, we want a description of the geospatial area\n"
    "4. do not include the following words and or any similar words: 'panorama', '360', 'sky', 'car', 'truck', "
    "'pedestrian'\n"
    "5. describe the environment type, for example residential, highway, urban, rural .. etc\n"
    "6. be limited to about 50 words maximum\n"
    "7. if there are people do not pay attention to them and consider them blurred out\n"
    "8. please only generate the output directly, do not add any introductory sentences, and only output the "
    "description paragraph\n"
    "9. If you have any limitations do not mention them, never talk about them\n"
    "10. Only output in English";

std::string_view to_string(DescriptionSource s) { return s == DescriptionSource::llm ? "llm" : "synthetic"; }

namespace {

DescriptionSource parse_source(std::string_view s) {
    return s == "llm" ? DescriptionSource::llm : DescriptionSource::synthetic;
}

struct Blob {
    int pixels = 0;
    double cy  = 0.0;
    double cx  = 0.0;
};

std::vector<Blob> components(const LayoutMap& layout, LayoutClass cls, int min_pixels) {
    const auto id = class_index(cls);
    std::vector<int> label(layout.classes.size(), -1);
    std::vector<Blob> blobs;
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < layout.height; ++y) {
        for (int x = 0; x < layout.width; ++x) {
            const std::size_t start = static_cast<std::size_t>(y) * layout.width + x;
            if (layout.classes[start] != id || label[start] >= 0) continue;
            Blob blob;
            stack.assign(1, {y, x});
            label[start] = 1;
            while (!stack.empty()) {
                auto [cy, cx] = stack.back();
                stack.pop_back();
                ++blob.pixels;
                blob.cy += cy;
                blob.cx += cx;
                const int ny[4] = {cy - 1, cy + 1, cy, cy};
                const int nx[4] = {cx, cx, cx - 1, cx + 1};
                for (int k = 0; k < 4; ++k) {
                    if (ny[k] < 0 || ny[k] >= layout.height || nx[k] < 0 || nx[k] >= layout.width) continue;
                    const std::size_t idx = static_cast<std::size_t>(ny[k]) * layout.width + nx[k];
                    if (layout.classes[idx] != id || label[idx] >= 0) continue;
                    label[idx] = 1;
                    stack.emplace_back(ny[k], nx[k]);
                }
            }
            if (blob.pixels < min_pixels) continue;
            blob.cy /= blob.pixels;
            blob.cx /= blob.pixels;
            blobs.push_back(blob);
        }
    }
    return blobs;
}

std::string direction_word(const LayoutMap& layout, double cy, double cx) {
    const double east  = cx + 0.5 - layout.width / 2.0;
    const double north = layout.height / 2.0 - (cy + 0.5);
    if (std::hypot(east, north) < 0.12 * layout.width) return "center";
    static const char* names[8] = {"north", "north-east", "east", "south-east",
                                   "south", "south-west", "west", "north-west"};
    double angle = std::atan2(east, north);
    if (angle < 0) angle += 2 * std::numbers::pi;
    const int sector = static_cast<int>(std::floor(angle / (std::numbers::pi / 4) + 0.5)) % 8;
    return names[sector];
}

std::string where(const LayoutMap& layout, const Blob& b) {
    const std::string dir = direction_word(layout, b.cy, b.cx);
    return dir == "center" ? "in the middle" : "to the " + dir;
}

Blob largest(std::vector<Blob> blobs) {
    return *std::max_element(blobs.begin(), blobs.end(), [](const Blob& a, const Blob& b) { return a.pixels < b.pixels; });
}

std::string road_orientation(const LayoutMap& layout) {
    double sy = 0, sx = 0, syy = 0, sxx = 0, sxy = 0;
    int n         = 0;
    const auto id = class_index(LayoutClass::road);
    for (int y = 0; y < layout.height; ++y) {
        for (int x = 0; x < layout.width; ++x) {
            if (layout.at(y, x) != id) continue;
            sy += y;
            sx += x;
            syy += static_cast<double>(y) * y;
            sxx += static_cast<double>(x) * x;
            sxy += static_cast<double>(x) * y;
            ++n;
        }
    }
    if (n == 0) return {};
    const double my = sy / n, mx = sx / n;
    const double cyy = syy / n - my * my, cxx = sxx / n - mx * mx, cxy = sxy / n - mx * my;
    const double angle = 0.5 * std::atan2(2 * cxy, cxx - cyy);  // principal axis, 0 = east-west
    const double deg   = std::abs(angle * 180.0 / std::numbers::pi);
    if (deg < 25.0) return "from east to west";
    if (deg > 65.0) return "from north to south";
    return "diagonally";
}

}  // namespace

std::string synthetic_description(const LayoutMap& layout) {
    layout.validate();
    const auto hist    = layout.histogram();
    const double total = static_cast<double>(layout.classes.size());
    auto frac          = [&](LayoutClass c) { return hist[class_index(c)] / total; };

    const auto buildings = components(layout, LayoutClass::building, 8);
    const double bf = frac(LayoutClass::building), ff = frac(LayoutClass::forest), wf = frac(LayoutClass::water);
    std::string env = "quiet suburban";
    if (bf > 0.22) env = "dense urban";
    else if (bf > 0.10) env = "residential";
    else if (ff > 0.15) env = "green park-like";
    else if (wf > 0.06) env = "waterfront";

    std::string text = "This is a " + env + " area ";
    const int n      = static_cast<int>(buildings.size());
    if (n == 0) text += "with no buildings close by.";
    else text += "with " + std::to_string(n) + (n == 1 ? " building" : " buildings") + " close to the street.";

    const std::string road = road_orientation(layout);
    if (road.empty()) {
        text += " There is no paved road in sight.";
    } else {
        text += std::string(frac(LayoutClass::road) > 0.18 ? " A wide road" : " A narrow road") + " runs " + road;
        text += frac(LayoutClass::path) > 0.01 ? " with sidewalks along its edges." : " without sidewalks.";
    }
    if (n > 0) {
        const Blob big = largest(buildings);
        text += " The largest building stands " + where(layout, big) + ".";
    }
    if (ff > 0.005) text += " Trees and green vegetation grow " + where(layout, largest(components(layout, LayoutClass::forest, 1))) + ".";
    if (wf > 0.005) text += " A body of water lies " + where(layout, largest(components(layout, LayoutClass::water, 1))) + ".";
    if (frac(LayoutClass::parking) > 0.005) {
        text += " A parking lot sits " + where(layout, largest(components(layout, LayoutClass::parking, 1))) + ".";
    }
    if (frac(LayoutClass::playground) > 0.003) {
        text += " A small playground is " + where(layout, largest(components(layout, LayoutClass::playground, 1))) + ".";
    }
    text += bf > 0.15 ? " The surroundings feel busy and built up." : " The surroundings feel open and calm.";
    return text;
}

RawDescription SyntheticDescriptionClient::describe(const std::string& image_id) {
    return {synthetic_description(lookup_(image_id)), DescriptionSource::synthetic, image_id};
}

RemoteConfig RemoteConfig::from_environment() {
    RemoteConfig c;
    if (const char* e = std::getenv("AERIALGEN_LLM_ENDPOINT")) c.endpoint = e;
    if (const char* k = std::getenv("AERIALGEN_LLM_KEY")) c.api_key = k;
    if (c.endpoint.empty()) throw ConfigError("AERIALGEN_LLM_ENDPOINT is not set");
    return c;
}

namespace {

RemoteDescriptionClient::Transport http_transport(const RemoteConfig& config) {
    const auto& url            = config.endpoint;
    const auto scheme_end      = url.find("://");
    const auto host_start      = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start      = url.find('/', host_start);
    const std::string base     = path_start == std::string::npos ? url : url.substr(0, path_start);
    const std::string path     = path_start == std::string::npos ? "/" : url.substr(path_start);
    const std::string key      = config.api_key;
    const auto timeout_seconds = config.timeout.count();
    return [base, path, key, timeout_seconds](const std::string& body) {
        httplib::Client client(base);
        client.set_connection_timeout(static_cast<time_t>(timeout_seconds));
        client.set_read_timeout(static_cast<time_t>(timeout_seconds));
        httplib::Headers headers;
        if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
        auto res = client.Post(path, headers, body, "application/json");
        if (!res) return TransportResponse{0, httplib::to_string(res.error())};
        return TransportResponse{res->status, res->body};
    };
}

}  // namespace

RemoteDescriptionClient::RemoteDescriptionClient(RemoteConfig config, ImageLoader loader, Transport transport,
                                                 Sleeper sleeper)
    : config_(std::move(config)), loader_(std::move(loader)), transport_(std::move(transport)),
      sleeper_(std::move(sleeper)) {
    if (config_.max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
    if (!transport_) transport_ = http_transport(config_);
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string RemoteDescriptionClient::request_body(const std::string& image_id) const {
    json body;
    body["prompt"]           = std::string(kGroundDescriptionPrompt);
    body["image_id"]         = image_id;
    body["image_png_base64"] = base64_encode(loader_(image_id));
    return body.dump();
}

RawDescription RemoteDescriptionClient::describe(const std::string& image_id) {
    const std::string body = request_body(image_id);
    auto backoff           = config_.initial_backoff;
    std::string last_error;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
        const TransportResponse res = transport_(body);
        if (res.status >= 200 && res.status < 300) {
            try {
                const auto parsed = json::parse(res.body);
                std::string text  = parsed.at("text").get<std::string>();
                if (text.empty()) throw IoError("empty description");
                return {std::move(text), DescriptionSource::llm, image_id};
            } catch (const std::exception& e) {
                last_error = std::string("malformed response: ") + e.what();
            }
        } else {
            last_error = "status " + std::to_string(res.status) + ": " + res.body.substr(0, 200);
        }
        spdlog::warn("description request for {} failed (attempt {}/{}): {}", image_id, attempt, config_.max_attempts,
                     last_error);
        if (attempt < config_.max_attempts) {
            sleeper_(backoff);
            backoff *= 2;
        }
    }
    throw IoError("description request for " + image_id + " failed after " + std::to_string(config_.max_attempts) +
                  " attempts: " + last_error);
}

DescriptionCache::DescriptionCache(std::filesystem::path directory) : directory_(std::move(directory)) {
    std::filesystem::create_directories(directory_);
}

std::filesystem::path DescriptionCache::path_for(const std::string& image_id) const {
    std::string safe = image_id;
    for (char& c : safe) {
        if (c == '/' || c == '\\' || c == ':') c = '_';
    }
    return directory_ / (safe + ".json");
}

std::optional<RawDescription> DescriptionCache::get(const std::string& image_id) const {
    std::shared_lock lock(mutex_);
    std::ifstream in(path_for(image_id));
    if (!in) return std::nullopt;
    try {
        const auto j = json::parse(in);
        return RawDescription{j.at("text").get<std::string>(), parse_source(j.at("source").get<std::string>()), image_id};
    } catch (const std::exception& e) {
        spdlog::warn("ignoring unreadable cache entry for {}: {}", image_id, e.what());
        return std::nullopt;
    }
}

void DescriptionCache::put(const RawDescription& description) {
    std::unique_lock lock(mutex_);
    json j;
    j["text"]      = description.text;
    j["source"]    = std::string(to_string(description.source));
    j["timestamp"] = std::chrono::duration_cast<std::chrono::seconds>(
                         std::chrono::system_clock::now().time_since_epoch())
                         .count();
    const auto path = path_for(description.ground_image_id);
    const auto tmp  = path.string() + ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot write " + tmp);
        out << j.dump(2);
    }
    std::filesystem::rename(tmp, path);
}

RawDescription describe_ground(const std::string& image_id, DescriptionClient& client, DescriptionCache* cache) {
    if (cache) {
        if (auto hit = cache->get(image_id)) return *hit;
    }
    RawDescription d = client.describe(image_id);
    if (d.text.empty()) throw IoError("empty description for " + image_id);
    d.ground_image_id = image_id;
    if (cache) cache->put(d);
    return d;
}

}  // namespace aerialgen::prompt
