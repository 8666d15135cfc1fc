#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "nds/core/manifest.hpp"

namespace nds::experts {

inline constexpr int kRotationClasses = 4;  // 0, 90, 180, 270 degrees

// Counterclockwise rotation by 90*j degrees of a row-major height x width x
// channels grid. Exact index permutation. Throws non_square_image if
// height != width.
std::vector<double> rotate_grid(std::span<const double> values, std::size_t height, std::size_t width,
                                std::size_t channels, int j);

Image rotate(const Image& image, int j);

// Grid geometry an item is rotated on: its image when it has one, otherwise
// the features reshaped to a sqrt(d) x sqrt(d) single-channel grid.
struct GridShape {
    std::size_t size = 0;
    std::size_t channels = 0;
    std::size_t values() const noexcept { return size * size * channels; }
};

// Throws missing_image when the item has no image and d is not a perfect square.
GridShape rotation_grid(const Item& item);
// Flattened un-rotated input for a rotation expert.
std::vector<double> rotation_input(const Item& item);

struct RotationInstance {
    const Item* base = nullptr;
    int j = 0;
    std::vector<double> input;  // r(x, j)
    int target = 0;             // always j
};

// The four instances {r(x, j)}_{j=0..3} with targets 0..3.
std::vector<RotationInstance> rotation_instances(const Item& item);

}  // namespace nds::experts
