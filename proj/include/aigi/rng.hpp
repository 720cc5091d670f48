#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace aigi {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);
std::uint64_t hash_string(std::string_view s);

/// Generator for stream `stream` of `seed`, e.g. one per image index.
Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0);

}  // namespace aigi
