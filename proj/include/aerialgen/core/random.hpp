#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

#include "aerialgen/core/tensor.hpp"

namespace aerialgen {

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_string(std::string_view s);
// Order-sensitive mix of several seed components.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);
inline Rng make_rng(std::initializer_list<std::uint64_t> parts) { return Rng(derive_seed(parts)); }

}  // namespace aerialgen
