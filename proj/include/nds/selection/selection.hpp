#pragma once

// Turning a client's accuracy report into a download list:
// normalise z, softmax with temperature, spread each expert's weight over its
// subset, then draw a budget of distinct items.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nds/gating/partition.hpp"

namespace nds::selection {

inline constexpr double kDefaultTemperature = 0.1;

// Min-max to [0, 1]; a constant vector maps to all 0.5.
std::vector<double> normalize_scores(std::span<const double> z);

struct WeightVector {
    std::vector<double> w;
    double temperature = kDefaultTemperature;
    double z_min = 0.0;
    double z_max = 0.0;
};

// Softmax of z_norm / T. Does not touch z_min/z_max.
WeightVector softmax_weights(std::span<const double> z_norm, double temperature);
// normalize_scores followed by softmax_weights, recording the raw range.
WeightVector compute_weights(std::span<const double> z, double temperature = kDefaultTemperature);

// pi(x) = w_{i(x)} / |S_{i(x)}| for every item of the gating view.
std::vector<double> item_probabilities(const WeightVector& weights, const gating::GatingView& gating);

struct Sample {
    std::vector<std::size_t> indices;  // distinct, in selection order
    bool padded = false;               // zero-probability items were needed to reach the budget
};

// Weighted sampling without replacement: each item with pi > 0 draws the key
// log(u)/pi and the b largest keys win (ties to the lower index). When fewer
// than b items have pi > 0 the rest are filled with zero-probability items in
// index order.
Sample sample_budget(std::span<const double> pi, std::size_t budget, std::uint64_t seed);

// Everything the server knows about the items a bundle covers, flattened
// across datasets in bundle order.
struct CandidatePool {
    std::string dataset_ref;
    std::vector<std::string> ids;
    std::vector<std::string> urls;
    std::vector<std::optional<std::uint64_t>> bytes;
    std::vector<std::uint32_t> assignment;  // global expert index per item
    std::vector<std::size_t> sizes;         // per expert
    std::vector<std::string> expert_dataset;  // per expert

    gating::GatingView view() const noexcept { return {assignment, sizes}; }
    // Appends one dataset's partition; expert indices continue after the current ones.
    void append(const std::string& dataset_id, const DatasetManifest& manifest, const gating::Partition& partition);
};

struct RecommendOptions {
    std::size_t budget = 0;
    std::optional<std::uint64_t> budget_bytes;
    double temperature = kDefaultTemperature;
    std::uint64_t seed = 0;
};

struct RecommendedItem {
    std::string id;
    std::string url;
    friend bool operator==(const RecommendedItem&, const RecommendedItem&) = default;
};

struct ExpertWeight {
    std::size_t expert = 0;
    double w = 0.0;
    std::size_t size = 0;
    std::string dataset_id;
    friend bool operator==(const ExpertWeight&, const ExpertWeight&) = default;
};

struct Recommendation {
    std::string dataset_ref;
    std::size_t budget = 0;
    std::optional<std::uint64_t> budget_bytes;
    std::uint64_t seed = 0;
    double temperature = kDefaultTemperature;
    bool padded = false;
    bool byte_capped = false;
    std::vector<RecommendedItem> items;
    std::vector<ExpertWeight> weights;
    double z_min = 0.0;
    double z_max = 0.0;

    friend bool operator==(const Recommendation&, const Recommendation&) = default;
};

// The whole pipeline. Errors: length_mismatch, invalid_budget,
// non_finite_input, non_positive_temperature, empty_source.
Recommendation recommend(const CandidatePool& pool, std::span<const double> z, const RecommendOptions& options);

nlohmann::json to_json(const Recommendation& rec);
Recommendation recommendation_from_json(const nlohmann::json& j);
// One URL per line, newline-terminated.
std::string url_list(const Recommendation& rec);

}  // namespace nds::selection
