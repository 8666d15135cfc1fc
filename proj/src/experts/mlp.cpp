#include "nds/experts/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "nds/core/random.hpp"
#include "nds/error.hpp"
#include "nds/simd/kernels.hpp"

namespace nds::experts {

void mlp_forward(const MlpShape& shape, std::span<const double> params, std::span<const double> x,
                 std::span<double> hidden, std::span<double> logits) {
    const double* w1 = params.data() + shape.w1_offset();
    const double* b1 = params.data() + shape.b1_offset();
    const double* w2 = params.data() + shape.w2_offset();
    const double* b2 = params.data() + shape.b2_offset();

    std::copy(b1, b1 + shape.hidden, hidden.begin());
    for (std::size_t i = 0; i < shape.inputs; ++i) {
        if (x[i] != 0.0) simd::axpy(x[i], {w1 + i * shape.hidden, shape.hidden}, hidden);
    }
    for (auto& h : hidden) h = std::tanh(h);

    std::copy(b2, b2 + shape.outputs, logits.begin());
    for (std::size_t j = 0; j < shape.hidden; ++j) simd::axpy(hidden[j], {w2 + j * shape.outputs, shape.outputs}, logits);
}

double mlp_loss_and_gradient(const MlpShape& shape, std::span<const double> params, const LabeledBatch& batch,
                             std::vector<double>& grad) {
    grad.assign(shape.param_count(), 0.0);
    std::vector<double> hidden(shape.hidden), probs(shape.outputs), delta_hidden(shape.hidden);
    const double* w2 = params.data() + shape.w2_offset();
    double* gw1 = grad.data() + shape.w1_offset();
    double* gb1 = grad.data() + shape.b1_offset();
    double* gw2 = grad.data() + shape.w2_offset();
    double* gb2 = grad.data() + shape.b2_offset();
    const double scale = 1.0 / static_cast<double>(batch.rows.size());

    double loss = 0.0;
    for (auto r : batch.rows) {
        const auto x = batch.inputs->row(r);
        const auto target = batch.targets[r];
        mlp_forward(shape, params, x, hidden, probs);
        softmax_inplace(probs);
        loss += -std::log(probs[target]);

        // d(loss)/d(logits) = p - onehot(target)
        probs[target] -= 1.0;
        for (auto& p : probs) p *= scale;
        for (std::size_t j = 0; j < shape.hidden; ++j) {
            simd::axpy(hidden[j], probs, {gw2 + j * shape.outputs, shape.outputs});
            const double back = simd::dot({w2 + j * shape.outputs, shape.outputs}, probs);
            delta_hidden[j] = back * (1.0 - hidden[j] * hidden[j]);
        }
        simd::axpy(1.0, probs, {gb2, shape.outputs});
        for (std::size_t i = 0; i < shape.inputs; ++i) {
            if (x[i] != 0.0) simd::axpy(x[i], delta_hidden, {gw1 + i * shape.hidden, shape.hidden});
        }
        simd::axpy(1.0, delta_hidden, {gb1, shape.hidden});
    }
    return loss * scale;
}

double mlp_loss(const MlpShape& shape, std::span<const double> params, const LabeledBatch& batch) {
    std::vector<double> hidden(shape.hidden), probs(shape.outputs);
    double loss = 0.0;
    for (auto r : batch.rows) {
        mlp_forward(shape, params, batch.inputs->row(r), hidden, probs);
        softmax_inplace(probs);
        loss += -std::log(probs[batch.targets[r]]);
    }
    return loss / static_cast<double>(batch.rows.size());
}

SgdResult train_mlp(const MlpShape& shape, const Matrix& inputs, std::span<const std::size_t> targets,
                    const SgdOptions& options) {
    if (!(options.learning_rate > 0.0) || options.epochs == 0 || options.batch_size == 0 || !(options.weight_init_scale > 0.0)) {
        throw Error(ErrorCode::validation, "training hyperparameters must all be positive");
    }
    if (inputs.rows() == 0) throw Error(ErrorCode::validation, "no training instances");
    if (inputs.cols() != shape.inputs) throw Error(ErrorCode::dimension_mismatch, "training inputs do not match the network width");

    Rng rng = make_rng(options.seed, 0x696e6974ULL);
    std::normal_distribution<double> init(0.0, options.weight_init_scale);
    SgdResult result;
    result.params.assign(shape.param_count(), 0.0);
    for (std::size_t i = 0; i < shape.hidden * shape.inputs; ++i) result.params[shape.w1_offset() + i] = init(rng);
    for (std::size_t i = 0; i < shape.hidden * shape.outputs; ++i) result.params[shape.w2_offset() + i] = init(rng);

    std::vector<std::size_t> order(inputs.rows());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<double> grad;
    const auto n = order.size();

    for (std::uint32_t epoch = 0; epoch < options.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += options.batch_size) {
            const auto count = std::min<std::size_t>(options.batch_size, n - start);
            const LabeledBatch batch{&inputs, targets, std::span(order).subspan(start, count)};
            epoch_loss += mlp_loss_and_gradient(shape, result.params, batch, grad) * static_cast<double>(count);
            simd::axpy(-options.learning_rate, grad, result.params);
        }
        epoch_loss /= static_cast<double>(n);
        result.epoch_losses.push_back(epoch_loss);
        if (!std::isfinite(epoch_loss)) {
            throw Error(ErrorCode::divergence, fmt::format("training diverged in epoch {} (loss {})", epoch + 1, epoch_loss));
        }
    }
    for (double p : result.params) {
        if (!std::isfinite(p)) throw Error(ErrorCode::divergence, "training produced non-finite weights");
    }
    return result;
}

}  // namespace nds::experts
