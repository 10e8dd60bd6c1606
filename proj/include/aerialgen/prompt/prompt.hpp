#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "aerialgen/prompt/text.hpp"

namespace aerialgen::prompt {

enum class PromptTemplate { constant, city_only, raw, dynamic };

std::string_view to_string(PromptTemplate t);
// Accepts constant, city, city_only, raw, dynamic.
PromptTemplate parse_template(std::string_view name);

inline constexpr std::string_view kConstantPrompt =
    "Realistic aerial satellite top view image with high-quality details with buildings and roads";

struct DynamicPrompt {
    PromptTemplate template_id = PromptTemplate::constant;
    std::string city;
    std::vector<std::string> keyphrases;
    std::string rendered;
    // Set when the dynamic template had no key phrases and city_only was used.
    bool fell_back = false;
};

DynamicPrompt assemble_prompt(PromptTemplate template_id, std::string_view city,
                              const std::vector<std::string>& keyphrases, std::string_view raw);
DynamicPrompt assemble_prompt(PromptTemplate template_id, std::string_view city,
                              const std::vector<KeyPhrase>& keyphrases, std::string_view raw);

}  // namespace aerialgen::prompt
