// Copyright 2026 The stylecomp Authors
// SPDX-License-Identifier: Apache-2.0
//
// Portable draws on top of std::mt19937_64. The standard distributions are
// implementation-defined, so data generation uses these instead.

#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "stylecomp/hash.hpp"

namespace stylecomp {

using Rng = std::mt19937_64;

/// Uniform double in [0, 1).
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Uniform integer in [lo, hi].
inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(rng() % span);
}

/// Independent stream for (seed, tag).
inline std::uint64_t sub_seed(std::uint64_t seed, std::string_view tag) {
  Fnv1a h;
  h.update(&seed, sizeof seed);
  h.update(tag);
  return h.digest();
}

}  // namespace stylecomp
