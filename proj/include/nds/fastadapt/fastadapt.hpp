#pragma once

// Client-side evaluation of downloaded experts on a private target dataset.
// The AccuracyReport produced here is the only thing that ever leaves the
// client: K accuracies plus a handful of scalars.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nds/core/manifest.hpp"
#include "nds/core/split.hpp"
#include "nds/experts/expert.hpp"

namespace nds::fastadapt {

enum class AdaptMode { proxy, probe };

std::string_view to_string(AdaptMode mode) noexcept;
AdaptMode adapt_mode_from_string(std::string_view name);

struct ProbeConfig {
    std::uint32_t epochs = 10;
    double learning_rate = 0.01;
    SplitSpec split{0.8, 0};

    friend bool operator==(const ProbeConfig& a, const ProbeConfig& b) {
        return a.epochs == b.epochs && a.learning_rate == b.learning_rate &&
               a.split.train_fraction == b.split.train_fraction && a.split.seed == b.split.seed;
    }
};

struct AccuracyReport {
    std::string dataset_ref;
    AdaptMode mode = AdaptMode::proxy;
    std::vector<double> z;
    std::uint64_t target_size = 0;
    std::string client_nonce;
    std::optional<ProbeConfig> probe;  // recorded for probe-mode reports

    friend bool operator==(const AccuracyReport&, const AccuracyReport&) = default;
};

nlohmann::json to_json(const AccuracyReport& report);
// Strict: rejects unknown fields and anything that is not a scalar or the
// K-length z array. Throws validation errors.
AccuracyReport report_from_json(const nlohmann::json& j);
// Throws validation unless j is a well-formed report payload.
void check_report_schema(const nlohmann::json& j);

// 128 random bits as hex.
std::string make_nonce();

// Fraction of the 4|T| rotated target instances whose predicted rotation
// (argmax, lowest index on ties) is the applied one. Inference only.
double proxy_accuracy(const experts::ExpertModel& expert, const DatasetManifest& target);

// Trains a fresh linear head on the frozen hidden activations over the train
// split and returns top-1 accuracy on the validation split.
double linear_probe(const experts::ExpertModel& expert, const DatasetManifest& target, const ProbeConfig& cfg);

// z_i for every expert of the bundle, in bundle order. Errors are annotated
// with the failing expert index.
AccuracyReport fast_adapt(std::span<const experts::ExpertModel> experts, const DatasetManifest& target, AdaptMode mode,
                          const ProbeConfig& cfg, std::string dataset_ref);

}  // namespace nds::fastadapt
