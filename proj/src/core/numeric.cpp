#include "nds/core/numeric.hpp"

#include <algorithm>
#include <cmath>

namespace nds {

void softmax_inplace(std::span<double> values) {
    const double peak = *std::max_element(values.begin(), values.end());
    double total = 0.0;
    for (auto& v : values) {
        v = std::exp(v - peak);
        total += v;
    }
    for (auto& v : values) v /= total;
}

std::size_t argmax(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

}  // namespace nds
