#pragma once

// Two-layer perceptron used by every expert: tanh hidden layer, softmax
// output, cross-entropy loss. Parameters live in one flat vector laid out as
// W1 (inputs x hidden, row-major), b1, W2 (hidden x outputs, row-major), b2,
// which is also the order they are serialised in.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nds/core/matrix.hpp"
#include "nds/core/numeric.hpp"

namespace nds::experts {

struct MlpShape {
    std::size_t inputs = 0;
    std::size_t hidden = 0;
    std::size_t outputs = 0;

    std::size_t w1_offset() const noexcept { return 0; }
    std::size_t b1_offset() const noexcept { return inputs * hidden; }
    std::size_t w2_offset() const noexcept { return b1_offset() + hidden; }
    std::size_t b2_offset() const noexcept { return w2_offset() + hidden * outputs; }
    std::size_t param_count() const noexcept { return b2_offset() + outputs; }

    friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

// hidden = tanh(x W1 + b1); logits = hidden W2 + b2.
void mlp_forward(const MlpShape& shape, std::span<const double> params, std::span<const double> x,
                 std::span<double> hidden, std::span<double> logits);

struct LabeledBatch {
    const Matrix* inputs = nullptr;
    std::span<const std::size_t> targets;
    std::span<const std::size_t> rows;  // which rows of inputs form the batch
};

// Mean cross-entropy -log p_target over the batch. Writes d(loss)/d(params)
// into grad (resized and overwritten). Returns +inf when some p_target
// underflows to zero.
double mlp_loss_and_gradient(const MlpShape& shape, std::span<const double> params, const LabeledBatch& batch,
                             std::vector<double>& grad);

double mlp_loss(const MlpShape& shape, std::span<const double> params, const LabeledBatch& batch);

struct SgdOptions {
    double learning_rate = 0.1;
    std::uint32_t epochs = 30;
    std::uint32_t batch_size = 32;
    std::uint64_t seed = 0;
    double weight_init_scale = 0.1;
};

struct SgdResult {
    std::vector<double> params;
    std::vector<double> epoch_losses;  // mean training loss seen during each epoch
};

// Plain mini-batch SGD from a seeded Gaussian initialisation. Throws
// divergence as soon as an epoch's loss or any parameter is non-finite.
SgdResult train_mlp(const MlpShape& shape, const Matrix& inputs, std::span<const std::size_t> targets,
                    const SgdOptions& options);

}  // namespace nds::experts
