#pragma once

// Datasets on either side of the protocol are described by a JSON-lines
// manifest: a header line {"meta": {...}} followed by one item per line.
//
//   {"meta": {"name": "blobs", "feature_dim": 16, "image_shape": [8, 1],
//             "label_set": ["c0", "c1"], "role": "source"}}
//   {"id": "a1", "url": "https://...", "features": [0.1, ...],
//    "label": "c0", "image": "<base64 of H*H*C bytes>", "bytes": 1234}
//
// Images are stored row-major (row, column, channel), 8 bits per value, and
// held in memory as floats in [0, 1].

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nds {

struct ImageShape {
    std::uint32_t size = 0;      // H (= W)
    std::uint32_t channels = 0;  // C

    std::size_t values() const noexcept { return std::size_t{size} * size * channels; }
    friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

struct Image {
    ImageShape shape;
    std::vector<float> pixels;  // H*H*C, row-major

    friend bool operator==(const Image&, const Image&) = default;
};

struct Item {
    std::string id;
    std::string url;
    std::optional<std::string> label;
    std::vector<double> features;
    std::optional<Image> image;
    std::optional<std::uint64_t> size_bytes;  // hint used for byte budgets

    friend bool operator==(const Item&, const Item&) = default;
};

enum class Role { source, target };

std::string_view to_string(Role role) noexcept;

struct DatasetManifest {
    std::string name;
    std::size_t feature_dim = 0;
    std::optional<ImageShape> image_shape;
    std::vector<std::string> label_set;  // empty when the dataset is unlabeled
    std::vector<Item> items;
    Role role = Role::source;

    bool labeled() const noexcept { return !label_set.empty(); }
    bool all_labeled() const noexcept;
    // Dense index of a label in label_set order. Throws if unknown.
    std::size_t label_index(std::string_view label) const;
    // Dense label indices of every item; throws missing_labels if any item lacks one.
    std::vector<std::size_t> label_indices() const;

    friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

// Checks every invariant (dimensions, unique ids, shapes, labels, non-empty).
void validate(const DatasetManifest& manifest);

DatasetManifest parse_manifest(std::string_view text);
DatasetManifest load_manifest(const std::filesystem::path& path);

std::string serialize_manifest(const DatasetManifest& manifest);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// Quantises float pixels in [0,1] to bytes and back.
std::vector<std::uint8_t> quantize_pixels(std::span<const float> pixels);
std::vector<float> dequantize_pixels(std::span<const std::uint8_t> bytes);

}  // namespace nds
