#include "nds/gating/partition.hpp"

#include <algorithm>
#include <map>

#include <fmt/format.h>

#include "nds/error.hpp"
#include "nds/gating/kmeans.hpp"
#include "nds/simd/kernels.hpp"

namespace nds::gating {

using nlohmann::json;

std::string_view to_string(Scheme scheme) noexcept {
    return scheme == Scheme::superclass ? "superclass" : "unsupervised";
}

Scheme scheme_from_string(std::string_view name) {
    if (name == "superclass") return Scheme::superclass;
    if (name == "unsupervised") return Scheme::unsupervised;
    throw Error(ErrorCode::validation, fmt::format("unknown gating scheme '{}'", name));
}

void to_json(json& j, const GatingConfig& cfg) {
    j = json{{"k", cfg.k},
             {"scheme", std::string(to_string(cfg.scheme))},
             {"seed", cfg.seed},
             {"max_iters", cfg.max_iters},
             {"tol", cfg.tol},
             {"restarts", cfg.restarts}};
}

void from_json(const json& j, GatingConfig& cfg) {
    GatingConfig defaults;
    cfg.k = j.value("k", defaults.k);
    cfg.scheme = scheme_from_string(j.value("scheme", std::string(to_string(defaults.scheme))));
    cfg.seed = j.value("seed", defaults.seed);
    cfg.max_iters = j.value("max_iters", defaults.max_iters);
    cfg.tol = j.value("tol", defaults.tol);
    cfg.restarts = j.value("restarts", defaults.restarts);
    if (cfg.k == 0) throw Error(ErrorCode::validation, "gating k must be >= 1");
    if (cfg.restarts == 0) throw Error(ErrorCode::validation, "gating restarts must be >= 1");
    if (!(cfg.tol >= 0.0)) throw Error(ErrorCode::validation, "gating tol must be non-negative");
}

Partition::Partition(Scheme scheme, std::uint64_t seed, std::vector<std::string> item_ids,
                     std::vector<std::uint32_t> assignment, Matrix centroids)
    : scheme_(scheme),
      seed_(seed),
      item_ids_(std::move(item_ids)),
      assignment_(std::move(assignment)),
      sizes_(centroids.rows(), 0),
      centroids_(std::move(centroids)) {
    if (item_ids_.size() != assignment_.size()) {
        throw Error(ErrorCode::validation, "partition ids and assignment differ in length");
    }
    index_.reserve(item_ids_.size());
    for (std::size_t i = 0; i < item_ids_.size(); ++i) {
        if (assignment_[i] >= sizes_.size()) {
            throw Error(ErrorCode::validation, fmt::format("item '{}' gated to expert {} of {}", item_ids_[i], assignment_[i], sizes_.size()));
        }
        ++sizes_[assignment_[i]];
        if (!index_.emplace(item_ids_[i], assignment_[i]).second) {
            throw Error(ErrorCode::duplicate_id, fmt::format("item '{}' appears twice in partition", item_ids_[i]), item_ids_[i]);
        }
    }
    check_invariants();
}

void Partition::check_invariants() const {
    if (sizes_.empty()) throw Error(ErrorCode::validation, "partition has no subsets");
    for (std::size_t i = 0; i < sizes_.size(); ++i) {
        if (sizes_[i] == 0) throw Error(ErrorCode::validation, fmt::format("partition subset {} is empty", i));
    }
}

std::size_t Partition::gate(std::string_view item_id) const {
    auto it = index_.find(std::string(item_id));
    if (it == index_.end()) throw Error(ErrorCode::unknown_item, fmt::format("item '{}' is not in the partition", item_id));
    return it->second;
}

std::vector<std::size_t> Partition::members(std::size_t subset) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment_.size(); ++i) {
        if (assignment_[i] == subset) out.push_back(i);
    }
    return out;
}

json Partition::to_json() const {
    json centroids = json::array();
    for (std::size_t c = 0; c < centroids_.rows(); ++c) {
        auto row = centroids_.row(c);
        centroids.push_back(std::vector<double>(row.begin(), row.end()));
    }
    json assignment = json::array();
    for (std::size_t i = 0; i < item_ids_.size(); ++i) assignment.push_back(json::array({item_ids_[i], assignment_[i]}));
    return json{{"version", kFormatVersion},
                {"k", k()},
                {"scheme", std::string(gating::to_string(scheme_))},
                {"seed", seed_},
                {"sizes", sizes_},
                {"centroids", std::move(centroids)},
                {"assignment", std::move(assignment)}};
}

Partition Partition::from_json(const json& j) {
    try {
        if (j.at("version").get<int>() != kFormatVersion) {
            throw Error(ErrorCode::version_mismatch, fmt::format("partition format version {} is not supported", j.at("version").dump()));
        }
        const auto k = j.at("k").get<std::size_t>();
        Matrix centroids;
        for (const auto& row : j.at("centroids")) centroids.append_row(row.get<std::vector<double>>());
        if (centroids.rows() != k) throw Error(ErrorCode::corrupt_store, "partition centroid count differs from k");
        std::vector<std::string> ids;
        std::vector<std::uint32_t> assignment;
        for (const auto& pair : j.at("assignment")) {
            ids.push_back(pair.at(0).get<std::string>());
            assignment.push_back(pair.at(1).get<std::uint32_t>());
        }
        Partition p(scheme_from_string(j.at("scheme").get<std::string>()), j.at("seed").get<std::uint64_t>(), std::move(ids),
                    std::move(assignment), std::move(centroids));
        if (p.sizes() != j.at("sizes").get<std::vector<std::size_t>>()) {
            throw Error(ErrorCode::corrupt_store, "partition sizes disagree with its assignment");
        }
        return p;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::corrupt_store, fmt::format("malformed partition JSON: {}", e.what()));
    }
}

Partition unsupervised_partition(const DatasetManifest& source, const GatingConfig& cfg) {
    if (cfg.scheme != Scheme::unsupervised) throw Error(ErrorCode::validation, "unsupervised_partition called with another scheme");
    if (source.items.size() < cfg.k) {
        throw Error(ErrorCode::k_too_large, fmt::format("k = {} exceeds the {} items of '{}'", cfg.k, source.items.size(), source.name));
    }
    Matrix points(source.items.size(), source.feature_dim);
    std::vector<std::string> ids;
    ids.reserve(source.items.size());
    for (std::size_t i = 0; i < source.items.size(); ++i) {
        std::copy(source.items[i].features.begin(), source.items[i].features.end(), points.row(i).begin());
        ids.push_back(source.items[i].id);
    }
    auto km = kmeans(points, {cfg.k, cfg.seed, cfg.max_iters, cfg.tol, cfg.restarts});
    std::vector<std::uint32_t> assignment(km.labels.begin(), km.labels.end());
    return Partition(Scheme::unsupervised, cfg.seed, std::move(ids), std::move(assignment), std::move(km.centroids));
}

Partition superclass_partition(const DatasetManifest& source, const GatingConfig& cfg) {
    if (cfg.scheme != Scheme::superclass) throw Error(ErrorCode::validation, "superclass_partition called with another scheme");
    if (!source.all_labeled()) {
        throw Error(ErrorCode::missing_labels, fmt::format("superclass gating needs every item of '{}' labeled", source.name));
    }
    const auto labels = source.label_indices();

    // Class representation f_c: mean feature vector of the class. Only classes
    // that actually occur are clustered, in label_set order.
    std::map<std::size_t, std::size_t> row_of_class;
    for (auto l : labels) row_of_class.emplace(l, 0);
    std::size_t r = 0;
    for (auto& [cls, row] : row_of_class) row = r++;
    if (row_of_class.size() < cfg.k) {
        throw Error(ErrorCode::k_too_large,
                    fmt::format("k = {} exceeds the {} classes present in '{}'", cfg.k, row_of_class.size(), source.name));
    }
    Matrix class_means(row_of_class.size(), source.feature_dim);
    std::vector<std::size_t> counts(row_of_class.size(), 0);
    for (std::size_t i = 0; i < source.items.size(); ++i) {
        const auto row = row_of_class[labels[i]];
        simd::axpy(1.0, source.items[i].features, class_means.row(row));
        ++counts[row];
    }
    for (std::size_t c = 0; c < class_means.rows(); ++c) {
        for (auto& v : class_means.row(c)) v /= static_cast<double>(counts[c]);
    }

    auto km = kmeans(class_means, {cfg.k, cfg.seed, cfg.max_iters, cfg.tol, cfg.restarts});
    std::vector<std::string> ids;
    std::vector<std::uint32_t> assignment;
    ids.reserve(source.items.size());
    assignment.reserve(source.items.size());
    for (std::size_t i = 0; i < source.items.size(); ++i) {
        ids.push_back(source.items[i].id);
        assignment.push_back(static_cast<std::uint32_t>(km.labels[row_of_class[labels[i]]]));
    }
    return Partition(Scheme::superclass, cfg.seed, std::move(ids), std::move(assignment), std::move(km.centroids));
}

Partition build_partition(const DatasetManifest& source, const GatingConfig& cfg) {
    return cfg.scheme == Scheme::superclass ? superclass_partition(source, cfg) : unsupervised_partition(source, cfg);
}

}  // namespace nds::gating
