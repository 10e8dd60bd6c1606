#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "aerialgen/core/layout.hpp"

namespace aerialgen::prompt {

enum class DescriptionSource { llm, synthetic };

std::string_view to_string(DescriptionSource s);

struct RawDescription {
    std::string text;
    DescriptionSource source = DescriptionSource::synthetic;
    std::string ground_image_id;
};

// Instruction sent alongside the ground image in remote mode.
extern const std::string_view kGroundDescriptionPrompt;

// About fifty words summarising class counts and positions of a layout.
std::string synthetic_description(const LayoutMap& layout);

class DescriptionClient {
public:
    virtual ~DescriptionClient() = default;
    virtual RawDescription describe(const std::string& image_id) = 0;
};

class SyntheticDescriptionClient final : public DescriptionClient {
public:
    using LayoutLookup = std::function<LayoutMap(const std::string& image_id)>;
    explicit SyntheticDescriptionClient(LayoutLookup lookup) : lookup_(std::move(lookup)) {}
    RawDescription describe(const std::string& image_id) override;

private:
    LayoutLookup lookup_;
};

struct TransportResponse {
    int status = 0;
    std::string body;
};

struct RemoteConfig {
    std::string endpoint;  // http://host:port/path
    std::string api_key;
    int max_attempts = 4;
    std::chrono::milliseconds initial_backoff{500};
    std::chrono::seconds timeout{60};

    // Reads AERIALGEN_LLM_ENDPOINT and AERIALGEN_LLM_KEY.
    static RemoteConfig from_environment();
};

// Posts {"prompt", "image_id", "image_png_base64"} as JSON and expects
// {"text": ...} back. Retries non-2xx and transport failures with exponential
// backoff, then throws IoError.
class RemoteDescriptionClient final : public DescriptionClient {
public:
    using Transport   = std::function<TransportResponse(const std::string& json_body)>;
    using ImageLoader = std::function<std::vector<std::uint8_t>(const std::string& image_id)>;
    using Sleeper     = std::function<void(std::chrono::milliseconds)>;

    RemoteDescriptionClient(RemoteConfig config, ImageLoader loader, Transport transport = {}, Sleeper sleeper = {});
    RawDescription describe(const std::string& image_id) override;

    // The JSON request body for an image (exposed for inspection).
    std::string request_body(const std::string& image_id) const;

private:
    RemoteConfig config_;
    ImageLoader loader_;
    Transport transport_;
    Sleeper sleeper_;
};

// One JSON file per image id: {text, source, timestamp}.
class DescriptionCache {
public:
    explicit DescriptionCache(std::filesystem::path directory);
    std::optional<RawDescription> get(const std::string& image_id) const;
    void put(const RawDescription& description);

private:
    std::filesystem::path path_for(const std::string& image_id) const;
    std::filesystem::path directory_;
    mutable std::shared_mutex mutex_;
};

RawDescription describe_ground(const std::string& image_id, DescriptionClient& client, DescriptionCache* cache);

}  // namespace aerialgen::prompt
