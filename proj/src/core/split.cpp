#include "nds/core/split.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "nds/core/hashing.hpp"
#include "nds/error.hpp"

namespace nds {

SplitResult split(std::span<const std::string> ids, const SplitSpec& spec) {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
        throw Error(ErrorCode::validation, fmt::format("train_fraction {} is outside (0, 1)", spec.train_fraction));
    }
    const std::size_t n = ids.size();
    if (n < 2) throw Error(ErrorCode::too_few_items, fmt::format("cannot split {} item(s); need at least 2", n));

    const std::uint64_t salt = mix64(spec.seed);
    std::vector<std::pair<std::uint64_t, const std::string*>> ranked;
    ranked.reserve(n);
    for (const auto& id : ids) ranked.emplace_back(mix64(fnv1a64(id) ^ salt), &id);
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first < b.first : *a.second < *b.second;
    });

    const auto wanted = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
    const std::size_t n_train = std::clamp<std::size_t>(wanted, 1, n - 1);

    SplitResult out;
    out.train.reserve(n_train);
    out.val.reserve(n - n_train);
    for (std::size_t i = 0; i < n; ++i) (i < n_train ? out.train : out.val).push_back(*ranked[i].second);
    return out;
}

SplitResult split(const DatasetManifest& manifest, const SplitSpec& spec) {
    std::vector<std::string> ids;
    ids.reserve(manifest.items.size());
    for (const auto& item : manifest.items) ids.push_back(item.id);
    return split(ids, spec);
}

}  // namespace nds
