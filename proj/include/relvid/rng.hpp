#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace relvid {

using Rng = std::mt19937_64;

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Derives an independent seed for a named stage or worker from a parent seed.
std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) noexcept;
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept;

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes) noexcept;

/// Uniform integer in [lo, hi] (inclusive).
std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi);

double uniform_real(Rng& rng, double lo, double hi);

}  // namespace relvid

namespace relvid {

/// Standard normal via Box-Muller on the portable uniform source.
double standard_normal(Rng& rng);

}  // namespace relvid
