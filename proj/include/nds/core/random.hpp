#pragma once

#include <cstdint>
#include <random>

#include "nds/core/hashing.hpp"

namespace nds {

using Rng = std::mt19937_64;

// Independent stream for (seed, stream): experts, folds and sampling passes
// each get their own generator without sharing state.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
    return Rng(mix64(seed ^ mix64(stream + 0x5bd1e995ULL)));
}

// Uniform in the open interval (0, 1); never returns 0 so log() is safe.
inline double uniform_open01(Rng& rng) {
    return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace nds
