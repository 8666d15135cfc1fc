#include <cmath>
#include <random>

#include "doctest.h"
#include "nds/error.hpp"
#include "nds/lab/lab.hpp"
#include "support.hpp"

using namespace nds;
using namespace nds::lab;
using testing::code_of;

namespace {

// Pearson correlation of brute-force average ranks.
double spearman_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            double less = 0, equal = 0;
            for (double x : v) {
                less += x < v[i];
                equal += x == v[i];
            }
            r[i] = less + (equal + 1.0) / 2.0;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i] / n;
        mb += rb[i] / n;
    }
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

DatasetManifest gaussian(std::size_t n, double shift, std::uint64_t seed, const std::string& prefix) {
    auto m = testing::blob_manifest(1, n, 6, 0.0, seed);
    for (auto& item : m.items) {
        item.id = prefix + item.id;
        item.features[0] += shift;
    }
    return m;
}

}  // namespace

TEST_CASE("spearman against the textbook formula and a brute-force oracle") {
    const std::vector<double> a{1, 2, 3, 4, 5}, b{5, 6, 7, 8, 7};
    CHECK(*spearman(a, a) == doctest::Approx(1.0));
    CHECK(*spearman(a, std::vector<double>{5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
    // No ties: 1 - 6 sum d^2 / (n (n^2 - 1)).
    const std::vector<double> x{10, 20, 30, 40, 50}, y{2, 1, 4, 3, 5};
    CHECK(*spearman(x, y) == doctest::Approx(1.0 - 6.0 * 4.0 / (5.0 * 24.0)));
    CHECK(*spearman(a, b) == doctest::Approx(spearman_oracle(a, b)));

    std::mt19937_64 rng(3);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> p(3 + rng() % 15), q(p.size());
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = static_cast<double>(rng() % 5);
            q[i] = static_cast<double>(rng() % 7);
        }
        const auto s = spearman(p, q);
        if (s) CHECK(*s == doctest::Approx(spearman_oracle(p, q)).epsilon(1e-12));
    }
    CHECK_FALSE(spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}).has_value());
    CHECK_FALSE(spearman(std::vector<double>{0.3, 0.3}, std::vector<double>{1, 2}).has_value());
    CHECK(code_of([&] { spearman(a, std::vector<double>{1}); }) == ErrorCode::length_mismatch);
}

TEST_CASE("proxy A-distance: same distribution near 0, separated near 2, monotone in the shift") {
    const auto target = gaussian(1000, 0.0, 1, "t");
    const auto t_items = testing::pointers(target);
    std::vector<double> d;
    for (double shift : {0.0, 1.0, 10.0}) {
        const auto src = gaussian(1000, shift, 2, "s");
        d.push_back(proxy_a_distance(testing::pointers(src), t_items, 7).d_a);
    }
    CHECK(std::abs(d[0]) <= 0.2);
    CHECK(d[2] >= 1.9);
    CHECK(d[0] < d[1]);
    CHECK(d[1] < d[2]);
    for (double v : d) {
        CHECK(v >= -2.0);
        CHECK(v <= 2.0);
    }
}

TEST_CASE("proxy A-distance errors") {
    const auto a = gaussian(10, 0.0, 1, "a");
    const auto one = gaussian(1, 0.0, 1, "o");
    CHECK(code_of([&] { proxy_a_distance(testing::pointers(one), testing::pointers(a), 0); }) == ErrorCode::too_few_items);
    auto narrow = testing::blob_manifest(1, 10, 3, 0.0, 1);
    CHECK(code_of([&] { proxy_a_distance(testing::pointers(narrow), testing::pointers(a), 0); }) == ErrorCode::dimension_mismatch);
}

TEST_CASE("fixture is deterministic and shaped as configured") {
    FixtureOptions o;
    o.per_blob = 30;
    o.target_size = 10;
    o.test_size = 20;
    const auto a = make_fixture(o);
    const auto b = make_fixture(o);
    CHECK(a.source == b.source);
    CHECK(a.target == b.target);
    CHECK(a.source.items.size() == 150);
    CHECK(a.target.items.size() == 10);
    CHECK(a.test.items.size() == 20);
    CHECK(a.target.role == Role::target);
    CHECK(a.source.feature_dim == 16);
    CHECK(a.source.image_shape == ImageShape{8, 1});
    for (const auto& item : a.source.items) {
        CHECK(item.label.has_value());
        CHECK(item.size_bytes.has_value());
    }
    CHECK(blob_of(a.source.items[31].id) == 1);
    CHECK(blob_of("b12-3") == 12);
    CHECK(code_of([] { blob_of("x"); }) == ErrorCode::validation);
    o.seed = 1;
    CHECK_FALSE(make_fixture(o).source == a.source);
    validate(a.source);
    validate(a.target);
}

TEST_CASE("identical subsets give an undefined correlation") {
    FixtureOptions o;
    o.blobs = 1;
    o.target_blob = 0;
    o.per_blob = 40;
    o.target_size = 20;
    o.test_size = 10;
    const auto f = make_fixture(o);
    experts::TrainConfig train;
    train.epochs = 1;
    train.hidden_units = 4;
    auto index = build_index(f.source, {1, gating::Scheme::unsupervised, 0}, train);
    const auto report = correlation_experiment(f.source, f.target, index, 0);
    CHECK(report.subsets.size() == 1);
    CHECK_FALSE(report.correlation.has_value());
    const auto j = to_json(report);
    CHECK(j["spearman_z_d_a"].is_null());
    CHECK(j["correlation_defined"] == false);
}
