#include "nds/experts/rotation.hpp"

#include <cmath>

#include <fmt/format.h>

#include "nds/error.hpp"

namespace nds::experts {

std::vector<double> rotate_grid(std::span<const double> values, std::size_t height, std::size_t width,
                                std::size_t channels, int j) {
    if (height != width) throw Error(ErrorCode::non_square_image, fmt::format("cannot rotate a {}x{} grid", height, width));
    if (values.size() != height * width * channels) {
        throw Error(ErrorCode::dimension_mismatch, fmt::format("grid holds {} values, expected {}", values.size(), height * width * channels));
    }
    const std::size_t n = height;
    const int turns = ((j % 4) + 4) % 4;
    std::vector<double> out(values.size());
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
            // Source pixel that lands on (r, c) after the rotation.
            std::size_t sr = r, sc = c;
            switch (turns) {
                case 1: sr = c; sc = n - 1 - r; break;
                case 2: sr = n - 1 - r; sc = n - 1 - c; break;
                case 3: sr = n - 1 - c; sc = r; break;
                default: break;
            }
            const double* src = values.data() + (sr * n + sc) * channels;
            double* dst = out.data() + (r * n + c) * channels;
            for (std::size_t ch = 0; ch < channels; ++ch) dst[ch] = src[ch];
        }
    }
    return out;
}

Image rotate(const Image& image, int j) {
    if (image.pixels.size() != image.shape.values()) {
        throw Error(ErrorCode::non_square_image, "image pixel count does not match a square H x H x C tensor");
    }
    std::vector<double> values(image.pixels.begin(), image.pixels.end());
    auto rotated = rotate_grid(values, image.shape.size, image.shape.size, image.shape.channels, j);
    Image out{image.shape, {}};
    out.pixels.assign(rotated.begin(), rotated.end());
    return out;
}

GridShape rotation_grid(const Item& item) {
    if (item.image) return {item.image->shape.size, item.image->shape.channels};
    const auto d = item.features.size();
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(d))));
    if (side * side != d || d == 0) {
        throw Error(ErrorCode::missing_image,
                    fmt::format("item '{}' has no image and {} features do not form a square grid", item.id, d), item.id);
    }
    return {side, 1};
}

std::vector<double> rotation_input(const Item& item) {
    if (item.image) return {item.image->pixels.begin(), item.image->pixels.end()};
    rotation_grid(item);  // validates the reshape
    return item.features;
}

std::vector<RotationInstance> rotation_instances(const Item& item) {
    const auto grid = rotation_grid(item);
    const auto base = rotation_input(item);
    std::vector<RotationInstance> out;
    out.reserve(kRotationClasses);
    for (int j = 0; j < kRotationClasses; ++j) {
        out.push_back({&item, j, rotate_grid(base, grid.size, grid.size, grid.channels, j), j});
    }
    return out;
}

}  // namespace nds::experts
