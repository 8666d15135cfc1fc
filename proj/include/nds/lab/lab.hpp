#pragma once

// Validation harness: synthetic fixtures with known ground truth, the proxy
// A-distance, rank correlation, downstream comparisons and the incremental
// build check.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "nds/core/manifest.hpp"
#include "nds/experts/expert.hpp"
#include "nds/fastadapt/fastadapt.hpp"
#include "nds/gating/partition.hpp"

namespace nds::lab {

struct FixtureOptions {
    std::uint64_t seed = 0;
    std::size_t blobs = 5;
    std::size_t per_blob = 1000;
    std::size_t feature_dim = 16;
    double separation = 8.0;  // distance between blob centres, in units of the within-blob sigma
    std::uint32_t image_size = 8;
    std::size_t target_blob = 2;
    std::size_t target_size = 100;
    std::size_t test_size = 1000;
    std::string source_name = "blobs";
};

struct Fixture {
    FixtureOptions options;
    DatasetManifest source;  // all blobs, labelled c0/c1
    DatasetManifest target;  // target_size items of the target blob
    DatasetManifest test;    // held-out items of the target blob for downstream accuracy
};

// Gaussian blobs in feature space; each blob also has its own image style (a
// ramp at a blob angle, a bump, pixel noise) and its own linear labelling rule.
Fixture make_fixture(const FixtureOptions& options);
// Only the source part, for growth experiments.
DatasetManifest make_source(const FixtureOptions& options);

// Blob index encoded in fixture ids ("b<k>-<n>").
std::size_t blob_of(std::string_view id);

struct DomainDistance {
    double epsilon = 0.0;  // balanced held-out error of the domain classifier
    double d_a = 0.0;      // 2 (1 - 2 epsilon)
};

// Linear domain classifier on a 50/50 split of each domain.
DomainDistance proxy_a_distance(std::span<const Item* const> subset, std::span<const Item* const> target, std::uint64_t seed);

// Spearman rank correlation with average ranks for ties; nullopt when either
// side is constant.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

struct Index {
    gating::Partition partition;
    std::vector<experts::ExpertModel> experts;
};

Index build_index(const DatasetManifest& source, const gating::GatingConfig& gating, const experts::TrainConfig& train,
                  experts::ExpertKind kind = experts::ExpertKind::rotation);

struct SubsetScore {
    std::size_t subset = 0;
    std::size_t size = 0;
    std::size_t majority_blob = 0;
    double z = 0.0;
    double epsilon = 0.0;
    double d_a = 0.0;
};

struct ConfusionReport {
    std::vector<SubsetScore> subsets;
    std::optional<double> correlation;  // Spearman(z, d_A)
    std::size_t argmax_z = 0;
    std::size_t argmin_d_a = 0;
};

ConfusionReport correlation_experiment(const DatasetManifest& source, const DatasetManifest& target, const Index& index,
                                       std::uint64_t seed);

enum class Method { nds, uniform, full, none };
std::string_view to_string(Method method) noexcept;

struct DownstreamOptions {
    std::vector<double> budgets{0.2};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    double temperature = 0.1;
    std::uint32_t iterations = 300;
    double learning_rate = 0.5;
};

struct DownstreamResult {
    Method method = Method::none;
    double budget = 0.0;  // fraction of the source; 1 for full, 0 for none
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double target_blob_fraction = 0.0;  // share of selected items from the target blob
};

// Accuracy on test of a softmax classifier trained on the selected source
// items plus the labelled target.
double downstream_accuracy(std::span<const Item* const> selected, const DatasetManifest& target, const DatasetManifest& test,
                           const DownstreamOptions& options);

std::vector<DownstreamResult> downstream_compare(const Fixture& fixture, const Index& index, const DownstreamOptions& options);

struct IncrementalReport {
    bool a_blobs_identical = false;
    std::vector<double> small_seconds;  // build(B) timings with |A|
    std::vector<double> large_seconds;  // build(B) timings with 10 |A|
    double ratio = 0.0;                 // max(min timings) / min(min timings)
    std::size_t small_a_items = 0;
    std::size_t large_a_items = 0;
    std::size_t b_items = 0;
};

struct IncrementalOptions {
    std::size_t a_small = 500;
    std::size_t scale = 10;
    std::size_t b_items = 500;
    std::size_t repeats = 3;
    std::size_t k = 5;
    experts::TrainConfig train;
    std::uint64_t seed = 0;
};

IncrementalReport incremental_build_check(const std::filesystem::path& work_dir, const IncrementalOptions& options);

nlohmann::json to_json(const ConfusionReport& report);
nlohmann::json to_json(const std::vector<DownstreamResult>& results);
nlohmann::json to_json(const IncrementalReport& report);
std::string to_csv(const ConfusionReport& report);
std::string to_csv(const std::vector<DownstreamResult>& results);
// Scatter of z against d_A, one labelled dot per subset.
std::string scatter_svg(const ConfusionReport& report);

// Mean accuracy per (method, budget), in first-seen order.
struct ArmSummary {
    Method method = Method::none;
    double budget = 0.0;
    double mean_accuracy = 0.0;
    double mean_target_fraction = 0.0;
    std::size_t runs = 0;
};
std::vector<ArmSummary> summarize(const std::vector<DownstreamResult>& results);

}  // namespace nds::lab
