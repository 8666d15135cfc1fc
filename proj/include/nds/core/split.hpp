#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nds/core/manifest.hpp"

namespace nds {

struct SplitSpec {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
};

struct SplitResult {
    std::vector<std::string> train;
    std::vector<std::string> val;
};

// Deterministic train/validation split keyed on a seeded hash of each item
// id. Ids are ranked by (hash, id); the first round(fraction * N) go to
// train, clamped so each side keeps at least one item. The result depends
// only on the set of ids and the spec, never on input order.
SplitResult split(std::span<const std::string> ids, const SplitSpec& spec);
SplitResult split(const DatasetManifest& manifest, const SplitSpec& spec);

}  // namespace nds
