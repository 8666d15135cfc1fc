#include <algorithm>
#include <cmath>
#include <numbers>

#include <fmt/format.h>

#include "nds/core/hashing.hpp"
#include "nds/core/random.hpp"
#include "nds/error.hpp"
#include "nds/lab/lab.hpp"

namespace nds::lab {

namespace {

constexpr std::uint64_t kSourceStream = 0x100;
constexpr std::uint64_t kTargetStream = 0x200;
constexpr std::uint64_t kTestStream = 0x300;
constexpr std::uint64_t kStyleStream = 0x400;

// Everything that makes blob k look like blob k.
struct BlobStyle {
    std::vector<double> centre;
    std::vector<double> rule;  // labelling direction, unit length
    double angle = 0.0;        // ramp orientation in radians
    double bump_row = 0.0;
    double bump_col = 0.0;
};

BlobStyle blob_style(const FixtureOptions& o, std::size_t k) {
    BlobStyle s;
    s.centre.assign(o.feature_dim, 0.0);
    s.centre[k % o.feature_dim] = o.separation;
    Rng rng = make_rng(o.seed, kStyleStream + k);
    std::normal_distribution<double> normal;
    s.rule.resize(o.feature_dim);
    double norm = 0.0;
    for (auto& v : s.rule) {
        v = normal(rng);
        norm += v * v;
    }
    for (auto& v : s.rule) v /= std::sqrt(norm);
    s.angle = static_cast<double>(k) * std::numbers::pi / 4.0;
    const double max_pos = static_cast<double>(o.image_size) - 1.0;
    std::uniform_real_distribution<double> pos(1.0, max_pos - 1.0);
    s.bump_row = pos(rng);
    s.bump_col = pos(rng);
    return s;
}

Item make_item(const FixtureOptions& o, const BlobStyle& style, Rng& rng, std::string id, std::string url) {
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> jitter(-0.15, 0.15);
    Item item;
    item.id = std::move(id);
    item.url = std::move(url);
    item.features.resize(o.feature_dim);
    double side = 0.0;
    for (std::size_t d = 0; d < o.feature_dim; ++d) {
        const double offset = normal(rng);
        item.features[d] = style.centre[d] + offset;
        side += style.rule[d] * offset;
    }
    item.label = side >= 0.0 ? "c0" : "c1";

    const std::uint32_t n = o.image_size;
    const double half = (static_cast<double>(n) - 1.0) / 2.0;
    const double angle = style.angle + jitter(rng);
    const double cx = std::cos(angle);
    const double sy = std::sin(angle);
    std::vector<float> pixels(std::size_t{n} * n);
    for (std::uint32_t r = 0; r < n; ++r) {
        for (std::uint32_t c = 0; c < n; ++c) {
            const double x = (static_cast<double>(c) - half) / half;
            const double y = (half - static_cast<double>(r)) / half;
            const double dr = static_cast<double>(r) - style.bump_row;
            const double dc = static_cast<double>(c) - style.bump_col;
            const double bump = 0.25 * std::exp(-(dr * dr + dc * dc) / 2.0);
            const double v = 0.5 + 0.3 * (cx * x + sy * y) + bump + 0.05 * normal(rng);
            pixels[std::size_t{r} * n + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
    }
    // Round-trip through the 8-bit encoding so in-memory and on-disk items agree.
    item.image = Image{{n, 1}, dequantize_pixels(quantize_pixels(pixels))};
    item.size_bytes = 2048 + fnv1a64(item.id) % 4096;
    return item;
}

DatasetManifest empty_manifest(const FixtureOptions& o, std::string name, Role role) {
    DatasetManifest m;
    m.name = std::move(name);
    m.feature_dim = o.feature_dim;
    m.image_shape = ImageShape{o.image_size, 1};
    m.label_set = {"c0", "c1"};
    m.role = role;
    return m;
}

void check_options(const FixtureOptions& o) {
    if (o.blobs == 0 || o.per_blob == 0 || o.feature_dim == 0 || o.image_size < 3) {
        throw Error(ErrorCode::validation, "fixture needs blobs, items per blob, features and an image of at least 3x3");
    }
    if (o.blobs > o.feature_dim) throw Error(ErrorCode::validation, "fixture needs at least one feature per blob");
    if (o.target_blob >= o.blobs) throw Error(ErrorCode::validation, "target blob out of range");
}

}  // namespace

DatasetManifest make_source(const FixtureOptions& o) {
    check_options(o);
    auto source = empty_manifest(o, o.source_name, Role::source);
    for (std::size_t k = 0; k < o.blobs; ++k) {
        const auto style = blob_style(o, k);
        Rng rng = make_rng(o.seed, kSourceStream + k);
        for (std::size_t n = 0; n < o.per_blob; ++n) {
            source.items.push_back(make_item(o, style, rng, fmt::format("b{}-{}", k, n), fmt::format("https://data.example/blob{}/{}.png", k, n)));
        }
    }
    return source;
}

Fixture make_fixture(const FixtureOptions& o) {
    Fixture f;
    f.options = o;
    f.source = make_source(o);
    const auto style = blob_style(o, o.target_blob);
    f.target = empty_manifest(o, "target", Role::target);
    Rng target_rng = make_rng(o.seed, kTargetStream);
    for (std::size_t n = 0; n < o.target_size; ++n) {
        f.target.items.push_back(make_item(o, style, target_rng, fmt::format("t{}-{}", o.target_blob, n), fmt::format("file://target/{}.png", n)));
    }
    f.test = empty_manifest(o, "target-test", Role::target);
    Rng test_rng = make_rng(o.seed, kTestStream);
    for (std::size_t n = 0; n < o.test_size; ++n) {
        f.test.items.push_back(make_item(o, style, test_rng, fmt::format("v{}-{}", o.target_blob, n), fmt::format("file://test/{}.png", n)));
    }
    return f;
}

std::size_t blob_of(std::string_view id) {
    const auto dash = id.find('-');
    if (id.size() < 3 || dash == std::string_view::npos || dash < 2) {
        throw Error(ErrorCode::validation, fmt::format("'{}' is not a fixture id", id));
    }
    std::size_t k = 0;
    for (auto c : id.substr(1, dash - 1)) {
        if (c < '0' || c > '9') throw Error(ErrorCode::validation, fmt::format("'{}' is not a fixture id", id));
        k = k * 10 + static_cast<std::size_t>(c - '0');
    }
    return k;
}

}  // namespace nds::lab
