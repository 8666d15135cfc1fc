#pragma once

#include <cstddef>
#include <span>

namespace nds {

// Numerically stable in-place softmax.
void softmax_inplace(std::span<double> values);

// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace nds
