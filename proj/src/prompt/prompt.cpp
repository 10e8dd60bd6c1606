#include "aerialgen/prompt/prompt.hpp"

#include <spdlog/spdlog.h>

#include "aerialgen/core/error.hpp"

namespace aerialgen::prompt {

std::string_view to_string(PromptTemplate t) {
    switch (t) {
        case PromptTemplate::constant: return "constant";
        case PromptTemplate::city_only: return "city_only";
        case PromptTemplate::raw: return "raw";
        case PromptTemplate::dynamic: return "dynamic";
    }
    return "constant";
}

PromptTemplate parse_template(std::string_view name) {
    if (name == "constant") return PromptTemplate::constant;
    if (name == "city" || name == "city_only") return PromptTemplate::city_only;
    if (name == "raw") return PromptTemplate::raw;
    if (name == "dynamic") return PromptTemplate::dynamic;
    throw ConfigError("unknown prompt template '" + std::string(name) + "'");
}

namespace {

std::string city_sentence(std::string_view city) {
    std::string s = "Realistic ";
    s += city;
    s += " aerial satellite top view image with high-quality details with buildings and roads in ";
    s += city;
    return s;
}

}  // namespace

DynamicPrompt assemble_prompt(PromptTemplate template_id, std::string_view city,
                              const std::vector<std::string>& keyphrases, std::string_view raw) {
    DynamicPrompt p;
    p.template_id = template_id;
    p.city        = std::string(city);
    switch (template_id) {
        case PromptTemplate::constant:
            p.rendered = std::string(kConstantPrompt);
            break;
        case PromptTemplate::raw:
            if (raw.empty()) throw ConfigError("raw prompt template needs a description");
            p.rendered = std::string(raw);
            break;
        case PromptTemplate::city_only:
            if (city.empty()) throw ConfigError("city_only prompt template needs a city");
            p.rendered = city_sentence(city);
            break;
        case PromptTemplate::dynamic:
            if (city.empty()) throw ConfigError("dynamic prompt template needs a city");
            p.rendered = city_sentence(city);
            if (keyphrases.empty()) {
                spdlog::warn("dynamic prompt without key phrases, falling back to city_only");
                p.fell_back   = true;
                p.template_id = PromptTemplate::city_only;
                break;
            }
            p.keyphrases = keyphrases;
            p.rendered += " that probably has the following objects and characteristics: ";
            for (std::size_t i = 0; i < keyphrases.size(); ++i) {
                if (i) p.rendered += ", ";
                p.rendered += keyphrases[i];
            }
            break;
    }
    return p;
}

DynamicPrompt assemble_prompt(PromptTemplate template_id, std::string_view city,
                              const std::vector<KeyPhrase>& keyphrases, std::string_view raw) {
    std::vector<std::string> phrases;
    phrases.reserve(keyphrases.size());
    for (const auto& k : keyphrases) phrases.push_back(k.phrase);
    return assemble_prompt(template_id, city, phrases, raw);
}

}  // namespace aerialgen::prompt
