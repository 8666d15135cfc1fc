#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "nds/core/manifest.hpp"
#include "nds/experts/mlp.hpp"

namespace nds::experts {

enum class ExpertKind : std::uint8_t { rotation = 0, task_specific = 1 };
enum class Activation : std::uint8_t { tanh = 0 };

std::string_view to_string(ExpertKind kind) noexcept;
ExpertKind expert_kind_from_string(std::string_view name);

struct TrainConfig {
    double learning_rate = 0.1;
    std::uint32_t epochs = 30;
    std::uint32_t batch_size = 32;
    std::uint64_t seed = 0;
    double weight_init_scale = 0.1;
    std::uint32_t hidden_units = 64;

    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

// A compact expert: everything the dataserver keeps about one subset S_i.
// Weights are stored in single precision, which is also the wire format.
struct ExpertModel {
    static constexpr std::uint16_t kFormatVersion = 1;

    ExpertKind kind = ExpertKind::rotation;
    Activation activation = Activation::tanh;
    std::uint32_t d_in = 0;
    std::uint32_t hidden = 0;
    std::uint32_t n_out = 0;
    std::vector<float> w1;  // d_in x hidden
    std::vector<float> b1;  // hidden
    std::vector<float> w2;  // hidden x n_out
    std::vector<float> b2;  // n_out
    std::uint32_t subset_index = 0;
    std::uint32_t trained_on_size = 0;
    std::uint16_t version = kFormatVersion;
    // Output index -> label string; empty for rotation experts.
    std::vector<std::string> class_labels;
    TrainConfig train_config;

    MlpShape shape() const noexcept { return {d_in, hidden, n_out}; }
    // Parameters widened to double in the flat MLP layout.
    std::vector<double> params() const;

    friend bool operator==(const ExpertModel&, const ExpertModel&) = default;
};

// All-zero expert of the given geometry (uniform predictions).
ExpertModel zero_expert(ExpertKind kind, std::uint32_t d_in, std::uint32_t hidden, std::uint32_t n_out);

struct TrainedExpert {
    ExpertModel model;
    std::vector<double> epoch_losses;
};

// Self-supervised rotation expert: each item contributes its four rotations.
TrainedExpert train_expert_ss(std::span<const Item* const> subset, const TrainConfig& cfg, std::uint32_t subset_index = 0);
// Task-specific classifier over the subset's labels (feature inputs).
TrainedExpert train_expert_ts(std::span<const Item* const> subset, const TrainConfig& cfg, std::uint32_t subset_index = 0);

// Input vector an expert of this kind consumes for an item, un-rotated.
std::vector<double> expert_input(const ExpertModel& expert, const Item& item);

// Class probabilities; non-negative and summing to 1.
std::vector<double> predict(const ExpertModel& expert, std::span<const double> input);
// Hidden-layer activations (the representation a linear probe sits on).
std::vector<double> hidden_representation(const ExpertModel& expert, std::span<const double> input);

// Binary blob: "NDSX", version u16, kind u8, d_in/hidden/n_out u32, weights as
// little-endian f32 (W1, b1, W2, b2), then an extension block (activation,
// subset index, subset size, class labels, training config) and a trailing
// FNV-1a 64 checksum of everything before it.
std::vector<std::uint8_t> serialize_expert(const ExpertModel& expert);
ExpertModel deserialize_expert(std::span<const std::uint8_t> blob);

}  // namespace nds::experts
