#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace aerialgen {

std::string base64_encode(const std::vector<std::uint8_t>& bytes);
// Throws IoError on characters outside the base64 alphabet.
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace aerialgen
