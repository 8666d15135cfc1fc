#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <unistd.h>

#include "doctest.h"
#include "nds/core/manifest.hpp"
#include "nds/error.hpp"

namespace testing {

template <class F>
nds::ErrorCode code_of(F&& fn) {
    try {
        fn();
    } catch (const nds::Error& e) {
        return e.code();
    }
    FAIL("expected an nds::Error");
    return nds::ErrorCode::internal;
}

template <class F>
std::string message_of(F&& fn) {
    try {
        fn();
    } catch (const nds::Error& e) {
        return e.what();
    }
    return {};
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "nds") {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() / fmt::format("{}-{}-{}", tag, ::getpid(), counter++);
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// Items in separated Gaussian blobs along the first axes. Blob k has centre
// spread * e_k and label "c<k % classes>".
inline nds::DatasetManifest blob_manifest(std::size_t blobs, std::size_t per_blob, std::size_t dim, double spread,
                                          std::uint64_t seed, std::size_t classes = 0, std::string name = "src") {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise;
    nds::DatasetManifest m;
    m.name = std::move(name);
    m.feature_dim = dim;
    for (std::size_t c = 0; c < classes; ++c) m.label_set.push_back(fmt::format("c{}", c));
    for (std::size_t k = 0; k < blobs; ++k) {
        for (std::size_t n = 0; n < per_blob; ++n) {
            nds::Item item;
            item.id = fmt::format("b{}-{}", k, n);
            item.url = fmt::format("https://data.example/{}/{}", k, n);
            item.features.resize(dim);
            for (std::size_t d = 0; d < dim; ++d) item.features[d] = noise(rng) + (d == k % dim ? spread : 0.0);
            if (classes > 0) item.label = fmt::format("c{}", k % classes);
            m.items.push_back(std::move(item));
        }
    }
    return m;
}

// 8x8 single-channel image with a bright band across the top two rows plus
// noise: not symmetric under any rotation, so the rotation class is decodable.
inline nds::Image stripe_image(std::mt19937_64& rng, std::uint32_t n = 8) {
    std::normal_distribution<double> noise(0.0, 0.05);
    nds::Image img{{n, 1}, std::vector<float>(std::size_t{n} * n)};
    for (std::uint32_t r = 0; r < n; ++r) {
        for (std::uint32_t c = 0; c < n; ++c) {
            const double base = r < 2 ? 0.9 : 0.1 + 0.02 * c;
            img.pixels[std::size_t{r} * n + c] = static_cast<float>(std::clamp(base + noise(rng), 0.0, 1.0));
        }
    }
    return img;
}

inline nds::DatasetManifest stripe_manifest(std::size_t count, std::uint64_t seed, std::string name = "stripes") {
    std::mt19937_64 rng(seed);
    nds::DatasetManifest m;
    m.name = std::move(name);
    m.feature_dim = 2;
    m.image_shape = nds::ImageShape{8, 1};
    for (std::size_t i = 0; i < count; ++i) {
        nds::Item item;
        item.id = fmt::format("s{}", i);
        item.url = fmt::format("https://data.example/s/{}", i);
        item.features = {static_cast<double>(i % 7), 1.0};
        item.image = stripe_image(rng);
        m.items.push_back(std::move(item));
    }
    return m;
}

inline std::vector<const nds::Item*> pointers(const nds::DatasetManifest& m) {
    std::vector<const nds::Item*> out;
    for (const auto& item : m.items) out.push_back(&item);
    return out;
}

}  // namespace testing
