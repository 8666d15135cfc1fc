#include "nds/client/client.hpp"

#include <fstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "httplib.h"
#include "nds/core/hashing.hpp"

namespace nds::client {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

httplib::Client make_client(const std::string& base_url, int timeout_seconds) {
    httplib::Client cli(base_url);
    if (!cli.is_valid()) throw Error(ErrorCode::network, fmt::format("invalid server url '{}'", base_url));
    cli.set_connection_timeout(5);
    cli.set_read_timeout(timeout_seconds);
    cli.set_write_timeout(timeout_seconds);
    return cli;
}

[[noreturn]] void network_failure(const std::string& base_url, httplib::Error err) {
    throw Error(ErrorCode::network,
                fmt::format("cannot reach server at {} ({}); check that it is running and retry", base_url, httplib::to_string(err)));
}

void check_response(const httplib::Result& res, const std::string& base_url) {
    if (!res) network_failure(base_url, res.error());
    if (res->status >= 200 && res->status < 300) return;
    ErrorCode code = ErrorCode::internal;
    std::string message = fmt::format("server answered HTTP {}", res->status);
    std::string detail;
    try {
        const auto body = json::parse(res->body);
        code = error_code_from_string(body.value("code", "")).value_or(ErrorCode::internal);
        message = body.value("message", message);
        detail = body.value("detail", "");
    } catch (const json::exception&) {
    }
    throw ServerRejected(res->status, code, message, detail);
}

}  // namespace

Connection::Connection(std::string base_url, int timeout_seconds) : base_url_(std::move(base_url)), timeout_seconds_(timeout_seconds) {
    while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

json Connection::get_json(const std::string& path) const {
    auto cli = make_client(base_url_, timeout_seconds_);
    auto res = cli.Get(path);
    check_response(res, base_url_);
    try {
        return json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::parse_error, fmt::format("server sent malformed JSON for {}", path), e.what());
    }
}

std::string Connection::get_bytes(const std::string& path) const {
    auto cli = make_client(base_url_, timeout_seconds_);
    auto res = cli.Get(path);
    check_response(res, base_url_);
    return res->body;
}

json Connection::post(const std::string& path, const std::string& body, const std::string& content_type) const {
    auto cli = make_client(base_url_, timeout_seconds_);
    auto res = cli.Post(path, body, content_type);
    check_response(res, base_url_);
    try {
        return json::parse(res->body);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::parse_error, fmt::format("server sent malformed JSON for {}", path), e.what());
    }
}

void write_text(const fs::path& path, std::string_view text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error(ErrorCode::io, fmt::format("cannot write {}", path.string()));
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, fmt::format("cannot read {}", path.string()));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

namespace {

experts::ExpertModel verified_expert(const server::BundleEntry& entry, std::string_view bytes) {
    const std::span<const std::uint8_t> blob(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size());
    if (sha256_hex(blob) != entry.sha256) {
        throw Error(ErrorCode::corrupt_blob, fmt::format("expert {} of '{}' failed its checksum", entry.subset_index, entry.dataset_id));
    }
    auto model = experts::deserialize_expert(blob);
    if (model.kind != entry.kind) {
        throw Error(ErrorCode::corrupt_blob, fmt::format("expert {} of '{}' is not the advertised kind", entry.subset_index, entry.dataset_id));
    }
    return model;
}

std::string blob_file(std::size_t index) { return fmt::format("expert_{}.bin", index); }

}  // namespace

LocalBundle fetch_bundle(const Connection& conn, const std::vector<std::string>& datasets, const fs::path& out_dir) {
    const auto ref = server::join_dataset_ref(datasets);
    const json manifest_json = conn.get_json(fmt::format("/v1/experts?datasets={}", ref));
    LocalBundle bundle;
    bundle.manifest = server::BundleManifest::from_json(manifest_json);
    fs::create_directories(out_dir);
    for (const auto& entry : bundle.manifest.experts) {
        const auto bytes = conn.get_bytes(fmt::format("/v1/experts/{}/{}", entry.dataset_id, entry.subset_index));
        bundle.experts.push_back(verified_expert(entry, bytes));
        write_text(out_dir / blob_file(entry.index), bytes);
    }
    write_text(out_dir / "bundle.json", manifest_json.dump(2));
    spdlog::info("fetched {} experts for '{}' into {}", bundle.experts.size(), ref, out_dir.string());
    return bundle;
}

LocalBundle load_bundle(const fs::path& dir) {
    LocalBundle bundle;
    json manifest_json;
    try {
        manifest_json = json::parse(read_text(dir / "bundle.json"));
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::corrupt_blob, "bundle.json is not valid JSON", e.what());
    }
    bundle.manifest = server::BundleManifest::from_json(manifest_json);
    for (const auto& entry : bundle.manifest.experts) {
        bundle.experts.push_back(verified_expert(entry, read_text(dir / blob_file(entry.index))));
    }
    return bundle;
}

fastadapt::AccuracyReport adapt(const LocalBundle& bundle, const DatasetManifest& target, fastadapt::AdaptMode mode,
                                const fastadapt::ProbeConfig& cfg) {
    return fastadapt::fast_adapt(bundle.experts, target, mode, cfg, bundle.manifest.dataset_ref);
}

json recommend_body(const fastadapt::AccuracyReport& report, const RecommendArgs& args) {
    json body{{"report", fastadapt::to_json(report)}, {"budget", args.budget}};
    if (args.budget_bytes) body["budget_bytes"] = *args.budget_bytes;
    if (args.temperature) body["temperature"] = *args.temperature;
    if (args.seed) body["seed"] = *args.seed;
    return body;
}

selection::Recommendation recommend(const Connection& conn, const fastadapt::AccuracyReport& report, const RecommendArgs& args) {
    const auto body = recommend_body(report, args);
    fastadapt::check_report_schema(body["report"]);
    return selection::recommendation_from_json(conn.post("/v1/recommendations", body.dump(), "application/json"));
}

std::string register_manifest(const Connection& conn, const fs::path& manifest_path) {
    const auto response = conn.post("/v1/datasets", read_text(manifest_path), "application/x-ndjson");
    return response.at("id").get<std::string>();
}

server::DatasetRecord build_dataset(const Connection& conn, const std::string& id, const server::BuildRequest& request) {
    const auto response = conn.post(fmt::format("/v1/datasets/{}/build?wait=1", id), server::to_json(request).dump(), "application/json");
    return server::DatasetRecord::from_json(response);
}

int exit_code_for(const Error& e) noexcept {
    if (dynamic_cast<const ServerRejected*>(&e)) return 4;
    switch (e.code()) {
        case ErrorCode::network: return 3;
        case ErrorCode::version_mismatch:
        case ErrorCode::corrupt_blob: return 6;
        case ErrorCode::io: return 7;
        case ErrorCode::internal: return 1;
        default: return 5;
    }
}

}  // namespace nds::client
