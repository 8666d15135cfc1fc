#include "nds/core/linear_model.hpp"

#include <cmath>

#include "nds/error.hpp"
#include "nds/core/numeric.hpp"
#include "nds/simd/kernels.hpp"

namespace nds {

void SoftmaxRegression::fit(const Matrix& inputs, std::span<const std::size_t> targets, std::size_t classes,
                            const LinearTrainOptions& options) {
    if (inputs.rows() == 0 || inputs.rows() != targets.size()) throw Error(ErrorCode::validation, "regression needs one target per row");
    if (classes < 2) throw Error(ErrorCode::single_class, "regression needs at least two classes");
    const std::size_t n = inputs.rows();
    const std::size_t d = inputs.cols();
    weights_ = Matrix(classes, d);
    bias_.assign(classes, 0.0);

    std::vector<double> sample_weight(n, 1.0 / static_cast<double>(n));
    if (options.balance_classes) {
        std::vector<std::size_t> counts(classes, 0);
        for (auto t : targets) ++counts[t];
        std::size_t present = 0;
        for (auto c : counts) present += c > 0 ? 1 : 0;
        for (std::size_t i = 0; i < n; ++i) {
            sample_weight[i] = 1.0 / (static_cast<double>(present) * static_cast<double>(counts[targets[i]]));
        }
    }

    Matrix grad_w(classes, d);
    std::vector<double> grad_b(classes), probs(classes);
    for (std::uint32_t it = 0; it < options.iterations; ++it) {
        std::fill(grad_w.data().begin(), grad_w.data().end(), 0.0);
        std::fill(grad_b.begin(), grad_b.end(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto x = inputs.row(i);
            for (std::size_t c = 0; c < classes; ++c) probs[c] = bias_[c] + simd::dot(weights_.row(c), x);
            softmax_inplace(probs);
            probs[targets[i]] -= 1.0;
            for (std::size_t c = 0; c < classes; ++c) {
                const double g = probs[c] * sample_weight[i];
                simd::axpy(g, x, grad_w.row(c));
                grad_b[c] += g;
            }
        }
        if (options.l2 > 0.0) simd::axpy(options.l2, weights_.data(), grad_w.data());
        simd::axpy(-options.learning_rate, grad_w.data(), weights_.data());
        simd::axpy(-options.learning_rate, grad_b, bias_);
    }
}

std::vector<double> SoftmaxRegression::logits(std::span<const double> x) const {
    if (x.size() != weights_.cols()) throw Error(ErrorCode::dimension_mismatch, "regression input width mismatch");
    std::vector<double> out(classes());
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = bias_[c] + simd::dot(weights_.row(c), x);
    return out;
}

std::size_t SoftmaxRegression::predict(std::span<const double> x) const { return argmax(logits(x)); }

void Standardizer::fit(const Matrix& inputs) {
    const std::size_t d = inputs.cols();
    mean_.assign(d, 0.0);
    inv_std_.assign(d, 0.0);
    const double n = static_cast<double>(inputs.rows());
    for (std::size_t i = 0; i < inputs.rows(); ++i) simd::axpy(1.0 / n, inputs.row(i), mean_);
    for (std::size_t i = 0; i < inputs.rows(); ++i) {
        for (std::size_t c = 0; c < d; ++c) {
            const double dv = inputs(i, c) - mean_[c];
            inv_std_[c] += dv * dv / n;
        }
    }
    for (auto& v : inv_std_) v = v > 1e-24 ? 1.0 / std::sqrt(v) : 1.0;
}

Matrix Standardizer::transform(const Matrix& inputs) const {
    Matrix out(inputs.rows(), inputs.cols());
    for (std::size_t i = 0; i < inputs.rows(); ++i) {
        for (std::size_t c = 0; c < inputs.cols(); ++c) out(i, c) = (inputs(i, c) - mean_[c]) * inv_std_[c];
    }
    return out;
}

}  // namespace nds
