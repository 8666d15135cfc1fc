#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "nds/core/manifest.hpp"
#include "nds/core/matrix.hpp"

namespace nds::gating {

enum class Scheme { superclass, unsupervised };

std::string_view to_string(Scheme scheme) noexcept;
Scheme scheme_from_string(std::string_view name);

struct GatingConfig {
    std::size_t k = 1;
    Scheme scheme = Scheme::unsupervised;
    std::uint64_t seed = 0;
    std::size_t max_iters = 100;
    double tol = 1e-6;
    std::size_t restarts = 10;
};

void to_json(nlohmann::json& j, const GatingConfig& cfg);
void from_json(const nlohmann::json& j, GatingConfig& cfg);

// Non-owning view of a hard gating: expert index per item plus subset sizes.
// Several partitions can be concatenated into one view (multi-dataset bundles).
struct GatingView {
    std::span<const std::uint32_t> assignment;
    std::span<const std::size_t> sizes;
};

// Hard gating of a source manifest into K disjoint subsets S_0..S_{K-1}.
class Partition {
public:
    static constexpr int kFormatVersion = 1;

    Partition() = default;
    Partition(Scheme scheme, std::uint64_t seed, std::vector<std::string> item_ids, std::vector<std::uint32_t> assignment,
              Matrix centroids);

    std::size_t k() const noexcept { return sizes_.size(); }
    Scheme scheme() const noexcept { return scheme_; }
    std::uint64_t seed() const noexcept { return seed_; }
    const std::vector<std::string>& item_ids() const noexcept { return item_ids_; }
    const std::vector<std::uint32_t>& assignment() const noexcept { return assignment_; }
    const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
    const Matrix& centroids() const noexcept { return centroids_; }
    std::size_t total_items() const noexcept { return item_ids_.size(); }

    // Index of the unique expert whose gate is 1 for this item.
    std::size_t gate(std::string_view item_id) const;
    // Positions (into item_ids) of the members of subset i, in manifest order.
    std::vector<std::size_t> members(std::size_t subset) const;

    GatingView view() const noexcept { return {assignment_, sizes_}; }

    nlohmann::json to_json() const;
    static Partition from_json(const nlohmann::json& j);

    friend bool operator==(const Partition& a, const Partition& b) {
        return a.scheme_ == b.scheme_ && a.seed_ == b.seed_ && a.item_ids_ == b.item_ids_ &&
               a.assignment_ == b.assignment_ && a.sizes_ == b.sizes_ && a.centroids_ == b.centroids_;
    }

private:
    void check_invariants() const;

    Scheme scheme_ = Scheme::unsupervised;
    std::uint64_t seed_ = 0;
    std::vector<std::string> item_ids_;
    std::vector<std::uint32_t> assignment_;
    std::vector<std::size_t> sizes_;
    Matrix centroids_;
    std::unordered_map<std::string, std::uint32_t> index_;
};

Partition unsupervised_partition(const DatasetManifest& source, const GatingConfig& cfg);
Partition superclass_partition(const DatasetManifest& source, const GatingConfig& cfg);
// Dispatches on cfg.scheme.
Partition build_partition(const DatasetManifest& source, const GatingConfig& cfg);

}  // namespace nds::gating
