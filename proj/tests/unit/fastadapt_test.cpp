#include <algorithm>
#include <random>

#include "doctest.h"
#include "nds/error.hpp"
#include "nds/experts/rotation.hpp"
#include "nds/fastadapt/fastadapt.hpp"
#include "nds/lab/lab.hpp"
#include "support.hpp"

using namespace nds;
using namespace nds::fastadapt;
using experts::ExpertKind;
using testing::code_of;

namespace {

lab::Fixture small_fixture() {
    lab::FixtureOptions o;
    o.per_blob = 80;
    o.target_size = 40;
    o.test_size = 40;
    return lab::make_fixture(o);
}

std::vector<const Item*> blob_items(const DatasetManifest& m, std::size_t blob) {
    std::vector<const Item*> out;
    for (const auto& item : m.items) {
        if (lab::blob_of(item.id) == blob) out.push_back(&item);
    }
    return out;
}

experts::TrainConfig quick() {
    experts::TrainConfig cfg;
    cfg.epochs = 15;
    cfg.hidden_units = 16;
    return cfg;
}

ProbeConfig strong_probe() {
    ProbeConfig p;
    p.epochs = 200;
    p.learning_rate = 0.5;
    return p;
}

}  // namespace

TEST_CASE("zero expert scores exactly one quarter") {
    const auto m = testing::stripe_manifest(13, 1);
    const auto z = experts::zero_expert(ExpertKind::rotation, 64, 4, 4);
    CHECK(proxy_accuracy(z, m) == 0.25);
}

TEST_CASE("proxy accuracy ranks the matching expert above a disjoint one") {
    const auto f = small_fixture();
    const auto same = experts::train_expert_ss(blob_items(f.source, 2), quick()).model;
    const auto other = experts::train_expert_ss(blob_items(f.source, 0), quick()).model;
    const double z_same = proxy_accuracy(same, f.target);
    const double z_other = proxy_accuracy(other, f.target);
    CHECK(z_same > z_other);
    CHECK(z_same >= 0.9);
}

TEST_CASE("proxy accuracy counts the quantum 1/(4|T|) and stays in [0, 1]") {
    std::mt19937_64 rng(2);
    std::normal_distribution<float> n(0.0f, 1.0f);
    for (int t = 0; t < 20; ++t) {
        const auto m = testing::stripe_manifest(1 + t, t);
        auto e = experts::zero_expert(ExpertKind::rotation, 64, 5, 4);
        for (auto* v : {&e.w1, &e.b1, &e.w2, &e.b2}) {
            for (auto& x : *v) x = n(rng);
        }
        const double z = proxy_accuracy(e, m);
        CHECK(z >= 0.0);
        CHECK(z <= 1.0);
        const double scaled = z * 4.0 * static_cast<double>(m.items.size());
        CHECK(scaled == doctest::Approx(std::round(scaled)));
    }
}

TEST_CASE("linear probe: separable target scores high, random labels near chance") {
    const auto src = testing::blob_manifest(2, 60, 4, 6.0, 3, 2);
    const auto expert = experts::train_expert_ts(testing::pointers(src), quick()).model;
    auto target = testing::blob_manifest(2, 100, 4, 6.0, 8, 2, "tgt");
    target.role = Role::target;
    CHECK(linear_probe(expert, target, strong_probe()) >= 0.9);

    auto noise = testing::blob_manifest(1, 2500, 4, 0.0, 4, 2, "noise");
    std::mt19937_64 rng(6);
    for (auto& item : noise.items) item.label = rng() % 2 ? "c1" : "c0";
    const double chance = linear_probe(expert, noise, strong_probe());
    CHECK(chance == doctest::Approx(0.5).epsilon(0.2));
    CHECK(std::abs(chance - 0.5) <= 0.1);
}

TEST_CASE("linear probe errors") {
    const auto src = testing::blob_manifest(2, 20, 4, 6.0, 3, 2);
    const auto expert = experts::train_expert_ts(testing::pointers(src), quick()).model;
    auto one = testing::blob_manifest(1, 1, 4, 0.0, 1, 2);
    CHECK(code_of([&] { linear_probe(expert, one, {}); }) == ErrorCode::too_few_items);
    auto unlabeled = testing::blob_manifest(1, 10, 4, 0.0, 1);
    CHECK(code_of([&] { linear_probe(expert, unlabeled, {}); }) == ErrorCode::missing_labels);
}

TEST_CASE("fast_adapt: kind mismatch names the expert") {
    const auto m = testing::stripe_manifest(4, 1);
    std::vector<experts::ExpertModel> bundle{experts::zero_expert(ExpertKind::rotation, 64, 2, 4),
                                             experts::zero_expert(ExpertKind::task_specific, 2, 2, 2)};
    CHECK(code_of([&] { fast_adapt(bundle, m, AdaptMode::proxy, {}, "x"); }) == ErrorCode::kind_mismatch);
    CHECK(testing::message_of([&] { fast_adapt(bundle, m, AdaptMode::proxy, {}, "x"); }).find("expert 1") != std::string::npos);
    CHECK(code_of([&] { fast_adapt({}, m, AdaptMode::proxy, {}, "x"); }) == ErrorCode::validation);
}

TEST_CASE("fast_adapt is permutation equivariant and reports only K scalars") {
    const auto f = small_fixture();
    std::vector<experts::ExpertModel> bundle;
    for (std::size_t b = 0; b < 3; ++b) bundle.push_back(experts::train_expert_ss(blob_items(f.source, b), quick()).model);
    const auto report = fast_adapt(bundle, f.target, AdaptMode::proxy, {}, "blobs");
    REQUIRE(report.z.size() == 3);
    std::vector<experts::ExpertModel> reversed(bundle.rbegin(), bundle.rend());
    const auto back = fast_adapt(reversed, f.target, AdaptMode::proxy, {}, "blobs");
    CHECK(back.z == std::vector<double>(report.z.rbegin(), report.z.rend()));
    CHECK(report.target_size == f.target.items.size());
    CHECK(report.client_nonce.size() == 32);
    CHECK(report.client_nonce != back.client_nonce);
    CHECK_FALSE(report.probe.has_value());

    const auto text = to_json(report).dump();
    for (const auto& item : f.target.items) {
        CHECK(text.find(item.id) == std::string::npos);
        CHECK(text.find(item.url) == std::string::npos);
    }
    const auto j = to_json(report);
    CHECK(j.size() == 5);
    CHECK(j["z"].size() == 3);
}

TEST_CASE("report JSON round-trip and strict schema") {
    AccuracyReport r{"a,b", AdaptMode::probe, {0.1, 0.9}, 12, "00ff", strong_probe()};
    CHECK(report_from_json(nlohmann::json::parse(to_json(r).dump())) == r);

    auto j = to_json(r);
    j["features"] = {1, 2, 3};
    CHECK(code_of([&] { report_from_json(j); }) == ErrorCode::validation);
    j = to_json(r);
    j["probe"]["ids"] = 3;
    CHECK(code_of([&] { report_from_json(j); }) == ErrorCode::validation);
    j = to_json(r);
    j["z"] = {0.5, 1.5};
    CHECK(code_of([&] { report_from_json(j); }) == ErrorCode::validation);
    j = to_json(r);
    j["z"] = nlohmann::json::array();
    CHECK(code_of([&] { report_from_json(j); }) == ErrorCode::validation);
    j = to_json(r);
    j["client_nonce"] = "has space";
    CHECK(code_of([&] { report_from_json(j); }) == ErrorCode::validation);
    j = to_json(r);
    j["mode"] = "guess";
    CHECK(code_of([&] { report_from_json(j); }) == ErrorCode::validation);
    j = to_json(r);
    j["target_size"] = -1;
    CHECK(code_of([&] { report_from_json(j); }) == ErrorCode::validation);
    CHECK(code_of([] { report_from_json(nlohmann::json::array()); }) == ErrorCode::validation);
}
