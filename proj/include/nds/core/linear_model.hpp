#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nds/core/matrix.hpp"

namespace nds {

struct LinearTrainOptions {
    std::uint32_t iterations = 10;
    double learning_rate = 0.01;
    double l2 = 0.0;
    // Weight each class by 1/(class frequency) so imbalanced sets train as if balanced.
    bool balance_classes = false;
};

// Multinomial logistic regression trained by full-batch gradient descent
// from zero weights. Deterministic: no randomness anywhere.
class SoftmaxRegression {
public:
    SoftmaxRegression() = default;

    void fit(const Matrix& inputs, std::span<const std::size_t> targets, std::size_t classes,
             const LinearTrainOptions& options);

    std::vector<double> logits(std::span<const double> x) const;
    // Lowest class index wins ties.
    std::size_t predict(std::span<const double> x) const;

    std::size_t classes() const noexcept { return weights_.rows(); }
    const Matrix& weights() const noexcept { return weights_; }  // classes x inputs
    const std::vector<double>& bias() const noexcept { return bias_; }

private:
    Matrix weights_;
    std::vector<double> bias_;
};

// Per-column mean/stddev from a fitted set, applied to any row.
class Standardizer {
public:
    void fit(const Matrix& inputs);
    Matrix transform(const Matrix& inputs) const;

private:
    std::vector<double> mean_;
    std::vector<double> inv_std_;
};

}  // namespace nds
