#include <fstream>
#include <set>
#include <numeric>
#include <thread>

#include "doctest.h"
#include "nds/client/client.hpp"
#include "nds/core/hashing.hpp"
#include "nds/error.hpp"
#include "nds/server/api.hpp"
#include "nds/server/registry.hpp"
#include "support.hpp"

using namespace nds;
using namespace nds::server;
using testing::code_of;
namespace fs = std::filesystem;

namespace {

selection::RecommendOptions budget_only(std::size_t budget) {
    selection::RecommendOptions o;
    o.budget = budget;
    return o;
}

BuildRequest quick_build(std::size_t k, std::uint64_t seed = 0) {
    BuildRequest r;
    r.gating.k = k;
    r.gating.seed = seed;
    r.train.epochs = 2;
    r.train.hidden_units = 8;
    return r;
}

// 16-d features reshape to a 4x4 rotation grid.
DatasetManifest grid_source(std::string name, std::size_t blobs = 3, std::size_t per_blob = 20, std::uint64_t seed = 1) {
    auto m = testing::blob_manifest(blobs, per_blob, 16, 6.0, seed, 0, std::move(name));
    for (std::size_t i = 0; i < m.items.size(); ++i) m.items[i].size_bytes = 1000 + i;
    return m;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

struct RunningServer {
    explicit RunningServer(Registry& registry, std::optional<fs::path> log = std::nullopt) : api(registry, std::move(log)) {
        port = api.bind("127.0.0.1", 0);
        REQUIRE(port > 0);
        thread = std::thread([this] { api.listen_after_bind(); });
        api.wait_until_ready();
    }
    ~RunningServer() {
        api.stop();
        thread.join();
    }
    std::string url() const { return fmt::format("http://127.0.0.1:{}", port); }

    ApiServer api;
    int port = 0;
    std::thread thread;
};

}  // namespace

TEST_CASE("register is idempotent and names are unique") {
    testing::TempDir dir;
    Registry reg(dir.path());
    const auto m = grid_source("alpha");
    const auto first = reg.register_dataset(m);
    CHECK(first.created);
    CHECK(first.id == "alpha");
    const auto again = reg.register_dataset(serialize_manifest(m));
    CHECK_FALSE(again.created);
    CHECK(reg.records().size() == 1);
    CHECK(reg.record("alpha").status == Status::registered);

    auto changed = m;
    changed.items.pop_back();
    CHECK(code_of([&] { reg.register_dataset(changed); }) == ErrorCode::duplicate_name);
    auto target = grid_source("tgt");
    target.role = Role::target;
    CHECK(code_of([&] { reg.register_dataset(target); }) == ErrorCode::validation);
    auto bad_name = grid_source("has space");
    CHECK(code_of([&] { reg.register_dataset(bad_name); }) == ErrorCode::validation);
    CHECK(code_of([&] { reg.register_dataset("not json"); }) == ErrorCode::parse_error);
    CHECK(code_of([&] { reg.record("ghost"); }) == ErrorCode::unknown_dataset);
}

TEST_CASE("build: K=6 on 600 items, ready is a no-op, bundle and blobs") {
    testing::TempDir dir;
    Registry reg(dir.path());
    reg.register_dataset(grid_source("big", 6, 100));
    CHECK(code_of([&] { reg.bundle({"big"}); }) == ErrorCode::not_ready);
    const auto rec = reg.build("big", quick_build(6), true);
    CHECK(rec.status == Status::ready);
    CHECK(rec.sizes.size() == 6);
    CHECK(std::accumulate(rec.sizes.begin(), rec.sizes.end(), std::size_t{0}) == 600);
    CHECK(rec.expert_sha256.size() == 6);

    const auto finished = rec.build_finished_at;
    const auto again = reg.build("big", quick_build(3), true);
    CHECK(again.build_finished_at == finished);
    CHECK(again.sizes.size() == 6);

    const auto bundle = reg.bundle({"big"});
    CHECK(bundle.experts.size() == 6);
    for (const auto& e : bundle.experts) {
        const auto blob = reg.expert_blob("big", e.subset_index);
        CHECK(sha256_hex(*blob) == e.sha256);
        CHECK(blob->size() == e.bytes);
    }
    CHECK(BundleManifest::from_json(nlohmann::json::parse(bundle.to_json().dump())).experts.size() == 6);
    CHECK(code_of([&] { reg.expert_blob("big", 6); }) == ErrorCode::unknown_item);
    CHECK(code_of([&] { reg.bundle({"big", "nope"}); }) == ErrorCode::unknown_dataset);
}

TEST_CASE("failed builds are recorded and can be retried") {
    testing::TempDir dir;
    Registry reg(dir.path());
    reg.register_dataset(grid_source("small", 1, 3));
    CHECK(code_of([&] { reg.build("small", quick_build(5), true); }) == ErrorCode::k_too_large);
    CHECK(reg.record("small").status == Status::failed);
    CHECK(reg.record("small").error_code == "k_too_large");
    CHECK(reg.build("small", quick_build(2), true).status == Status::ready);
}

TEST_CASE("building B leaves A untouched; multi-dataset bundles are indexed globally") {
    testing::TempDir dir;
    Registry reg(dir.path());
    reg.register_dataset(grid_source("a"));
    reg.build("a", quick_build(3), true);
    std::vector<std::string> before;
    for (int i = 0; i < 3; ++i) before.push_back(read_file(dir.path() / "datasets/a" / fmt::format("expert_{}.bin", i)));
    const auto record_before = read_file(dir.path() / "datasets/a/record.json");

    reg.register_dataset(grid_source("b", 2, 15, 7));
    reg.build("b", quick_build(2, 4), true);
    for (int i = 0; i < 3; ++i) CHECK(read_file(dir.path() / "datasets/a" / fmt::format("expert_{}.bin", i)) == before[i]);
    CHECK(read_file(dir.path() / "datasets/a/record.json") == record_before);

    const auto bundle = reg.bundle(split_dataset_ref("a,b"));
    REQUIRE(bundle.experts.size() == 5);
    CHECK(bundle.dataset_ref == "a,b");
    CHECK(bundle.experts[3].dataset_id == "b");
    CHECK(bundle.experts[3].index == 3);
    CHECK(bundle.experts[3].subset_index == 0);
    const auto rec = reg.recommend("a,b", std::vector<double>{0.1, 0.2, 0.3, 0.9, 0.1}, {10, {}, 0.1, 2});
    CHECK(rec.items.size() == 10);
    CHECK(code_of([&] { reg.recommend("a,b", std::vector<double>{0.1, 0.2}, budget_only(10)); }) == ErrorCode::length_mismatch);
    CHECK(code_of([] { split_dataset_ref("a,,b"); }) == ErrorCode::validation);
}

TEST_CASE("recovery: reopening serves identical recommendations") {
    testing::TempDir dir;
    selection::Recommendation first;
    {
        Registry reg(dir.path());
        reg.register_dataset(grid_source("r"));
        reg.build("r", quick_build(3), true);
        first = reg.recommend("r", std::vector<double>{0.2, 0.9, 0.4}, {12, {}, 0.1, 5});
    }
    std::ofstream(dir.path() / "datasets/r/stray.tmp") << "partial";
    Registry reopened(dir.path());
    CHECK(reopened.record("r").status == Status::ready);
    CHECK(reopened.recommend("r", std::vector<double>{0.2, 0.9, 0.4}, {12, {}, 0.1, 5}) == first);
    CHECK_FALSE(fs::exists(dir.path() / "datasets/r/stray.tmp"));
}

TEST_CASE("recovery: tampered stores are quarantined and never served") {
    testing::TempDir dir;
    {
        Registry reg(dir.path());
        reg.register_dataset(grid_source("blobby"));
        reg.build("blobby", quick_build(2), true);
        reg.register_dataset(grid_source("manif", 2, 10, 3));
    }
    {
        std::fstream f(dir.path() / "datasets/blobby/expert_1.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(20);
        f.put('\x7f');
    }
    {
        std::ofstream f(dir.path() / "datasets/manif/manifest.jsonl", std::ios::app);
        f << "\n";
    }
    Registry reg(dir.path());
    CHECK(reg.record("blobby").status == Status::quarantined);
    CHECK(reg.record("manif").status == Status::quarantined);
    CHECK(code_of([&] { reg.bundle({"blobby"}); }) == ErrorCode::corrupt_store);
    CHECK(code_of([&] { reg.recommend("blobby", std::vector<double>{0.5, 0.5}, budget_only(3)); }) == ErrorCode::corrupt_store);
    CHECK(code_of([&] { reg.build("manif", quick_build(2), true); }) == ErrorCode::corrupt_store);
}

TEST_CASE("recovery: an interrupted build is reset to registered") {
    testing::TempDir dir;
    {
        Registry reg(dir.path());
        reg.register_dataset(grid_source("half"));
    }
    const auto path = dir.path() / "datasets/half/record.json";
    auto j = nlohmann::json::parse(read_file(path));
    j["status"] = "building";
    std::ofstream(path) << j.dump();
    Registry reg(dir.path());
    CHECK(reg.record("half").status == Status::registered);
    CHECK(reg.build("half", quick_build(2), true).status == Status::ready);
}

TEST_CASE("build request JSON is strict") {
    const auto r = build_request_from_json(to_json(quick_build(4, 9)));
    CHECK(r.gating.k == 4);
    CHECK(r.train.epochs == 2);
    auto j = to_json(quick_build(4));
    j["extra"] = 1;
    CHECK(code_of([&] { build_request_from_json(j); }) == ErrorCode::validation);
}

TEST_CASE("recommend request JSON is strict") {
    fastadapt::AccuracyReport report{"a", fastadapt::AdaptMode::proxy, {0.5, 0.7}, 10, "abc", {}};
    nlohmann::json body{{"report", fastadapt::to_json(report)}, {"budget", 5}, {"seed", 3}};
    const auto parsed = recommend_request_from_json(body);
    CHECK(parsed.options.budget == 5);
    CHECK(parsed.options.seed == 3);
    CHECK(parsed.options.temperature == selection::kDefaultTemperature);
    body["target_ids"] = {"t1"};
    CHECK(code_of([&] { recommend_request_from_json(body); }) == ErrorCode::validation);
    body.erase("target_ids");
    body["report"]["features"] = {1.0};
    CHECK(code_of([&] { recommend_request_from_json(body); }) == ErrorCode::validation);
}

TEST_CASE("HTTP status mapping") {
    CHECK(http_status(ErrorCode::validation) == 400);
    CHECK(http_status(ErrorCode::parse_error) == 400);
    CHECK(http_status(ErrorCode::unknown_dataset) == 404);
    CHECK(http_status(ErrorCode::not_ready) == 409);
    CHECK(http_status(ErrorCode::duplicate_name) == 409);
    CHECK(http_status(ErrorCode::length_mismatch) == 422);
    CHECK(http_status(ErrorCode::corrupt_store) == 500);
}

TEST_CASE("HTTP API end to end through the client library") {
    testing::TempDir dir;
    Registry reg(dir.path() / "store");
    const auto log_path = dir.path() / "requests.jsonl";
    std::string body_text;
    {
        RunningServer server(reg, log_path);
        client::Connection conn(server.url(), 60);

        save_manifest(grid_source("web"), dir.path() / "web.jsonl");
        CHECK(client::register_manifest(conn, dir.path() / "web.jsonl") == "web");
        CHECK(client::register_manifest(conn, dir.path() / "web.jsonl") == "web");
        CHECK(conn.get_json("/v1/datasets").size() == 1);

        try {
            conn.get_json("/v1/experts?datasets=web");
            FAIL("expected rejection");
        } catch (const client::ServerRejected& e) {
            CHECK(e.http_status() == 409);
            CHECK(e.code() == ErrorCode::not_ready);
            CHECK(client::exit_code_for(e) == 4);
        }

        const auto rec = client::build_dataset(conn, "web", quick_build(3));
        CHECK(rec.status == Status::ready);
        CHECK(conn.get_json("/v1/datasets/web/status")["status"] == "ready");

        const auto bundle = client::fetch_bundle(conn, {"web"}, dir.path() / "bundle");
        CHECK(bundle.experts.size() == 3);
        CHECK(fs::exists(dir.path() / "bundle/bundle.json"));
        const auto reloaded = client::load_bundle(dir.path() / "bundle");
        CHECK(reloaded.experts == bundle.experts);

        auto target = grid_source("tgt", 1, 12, 5);
        target.role = Role::target;
        const auto report = client::adapt(bundle, target, fastadapt::AdaptMode::proxy, {});
        CHECK(report.z.size() == 3);
        CHECK(report.dataset_ref == "web");

        client::RecommendArgs args{8, std::nullopt, std::nullopt, 42};
        body_text = client::recommend_body(report, args).dump();
        const auto a = client::recommend(conn, report, args);
        const auto b = client::recommend(conn, report, args);
        CHECK(a == b);
        CHECK(a.items.size() == 8);
        CHECK(a == reg.recommend("web", report.z, {8, {}, selection::kDefaultTemperature, 42}));

        // Concurrent identical requests get identical answers.
        std::vector<selection::Recommendation> results(4);
        std::vector<std::thread> threads;
        for (std::size_t t = 0; t < results.size(); ++t) {
            threads.emplace_back([&, t] { results[t] = client::recommend(conn, report, args); });
        }
        for (auto& t : threads) t.join();
        for (const auto& r : results) CHECK(r == a);

        auto wrong = report;
        wrong.z.push_back(0.5);
        try {
            client::recommend(conn, wrong, args);
            FAIL("expected rejection");
        } catch (const client::ServerRejected& e) {
            CHECK(e.http_status() == 422);
            CHECK(e.code() == ErrorCode::length_mismatch);
        }
        try {
            conn.post("/v1/recommendations", "{nope", "application/json");
            FAIL("expected rejection");
        } catch (const client::ServerRejected& e) {
            CHECK(e.http_status() == 400);
        }
        try {
            conn.get_json("/v1/datasets/ghost/status");
            FAIL("expected rejection");
        } catch (const client::ServerRejected& e) {
            CHECK(e.http_status() == 404);
            CHECK(e.code() == ErrorCode::unknown_dataset);
        }

        for (const auto& item : target.items) CHECK(body_text.find(item.id) == std::string::npos);
    }
    const auto log = read_file(log_path);
    CHECK(log.find("/v1/recommendations") != std::string::npos);
    CHECK(log.find("tgt") == std::string::npos);
    CHECK(log.find("manifest_bytes") != std::string::npos);
}

TEST_CASE("client: offline server is a network error, exit codes") {
    client::Connection conn("http://127.0.0.1:1", 2);
    CHECK(code_of([&] { conn.get_json("/v1/datasets"); }) == ErrorCode::network);
    CHECK(client::exit_code_for(Error(ErrorCode::network, "")) == 3);
    CHECK(client::exit_code_for(Error(ErrorCode::corrupt_blob, "")) == 6);
    CHECK(client::exit_code_for(Error(ErrorCode::version_mismatch, "")) == 6);
    CHECK(client::exit_code_for(Error(ErrorCode::io, "")) == 7);
    CHECK(client::exit_code_for(Error(ErrorCode::validation, "")) == 5);
    CHECK(client::exit_code_for(Error(ErrorCode::internal, "")) == 1);
}

TEST_CASE("client: recommend body carries the report and options only") {
    fastadapt::AccuracyReport report{"a", fastadapt::AdaptMode::proxy, {0.5}, 3, "ff", {}};
    const auto body = client::recommend_body(report, {4, 2048, 0.5, 9});
    std::set<std::string> keys;
    for (const auto& [k, v] : body.items()) keys.insert(k);
    CHECK(keys == std::set<std::string>{"report", "budget", "budget_bytes", "temperature", "seed"});
    CHECK(client::recommend_body(report, client::RecommendArgs{4, std::nullopt, std::nullopt, std::nullopt}).size() == 2);
}

TEST_CASE("client: tampered local bundles are rejected") {
    testing::TempDir dir;
    Registry reg(dir.path() / "store");
    reg.register_dataset(grid_source("t"));
    reg.build("t", quick_build(2), true);
    {
        RunningServer server(reg);
        client::fetch_bundle(client::Connection(server.url(), 30), {"t"}, dir.path() / "b");
    }
    {
        std::fstream f(dir.path() / "b/expert_0.bin", std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(30);
        f.put('\x01');
    }
    CHECK(client::exit_code_for(Error(code_of([&] { client::load_bundle(dir.path() / "b"); }), "")) == 6);
}
