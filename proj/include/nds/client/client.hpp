#pragma once

// Client side of the protocol. Only expert blobs travel to the client and only
// an AccuracyReport (K accuracies plus scalars) travels back.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nds/error.hpp"
#include "nds/experts/expert.hpp"
#include "nds/fastadapt/fastadapt.hpp"
#include "nds/selection/selection.hpp"
#include "nds/server/registry.hpp"

namespace nds::client {

// An error envelope returned by the server, message kept verbatim.
class ServerRejected : public Error {
public:
    ServerRejected(int http_status, ErrorCode code, const std::string& message, std::string detail)
        : Error(code, message, std::move(detail)), http_status_(http_status) {}
    int http_status() const noexcept { return http_status_; }

private:
    int http_status_;
};

class Connection {
public:
    // base_url like "http://127.0.0.1:8080".
    explicit Connection(std::string base_url, int timeout_seconds = 600);

    nlohmann::json get_json(const std::string& path) const;
    std::string get_bytes(const std::string& path) const;
    nlohmann::json post(const std::string& path, const std::string& body, const std::string& content_type) const;

    const std::string& base_url() const noexcept { return base_url_; }

private:
    std::string base_url_;
    int timeout_seconds_;
};

struct LocalBundle {
    server::BundleManifest manifest;
    std::vector<experts::ExpertModel> experts;
};

// Downloads the bundle manifest and every blob, checks sha256, format
// version and kind, and stores them under out_dir (bundle.json + expert_<i>.bin).
LocalBundle fetch_bundle(const Connection& conn, const std::vector<std::string>& datasets, const std::filesystem::path& out_dir);
// Re-verifies a stored bundle.
LocalBundle load_bundle(const std::filesystem::path& dir);

fastadapt::AccuracyReport adapt(const LocalBundle& bundle, const DatasetManifest& target, fastadapt::AdaptMode mode,
                                const fastadapt::ProbeConfig& cfg);

struct RecommendArgs {
    std::size_t budget = 0;
    std::optional<std::uint64_t> budget_bytes;
    std::optional<double> temperature;
    std::optional<std::uint64_t> seed;
};

// The exact request body sent for a recommendation.
nlohmann::json recommend_body(const fastadapt::AccuracyReport& report, const RecommendArgs& args);
selection::Recommendation recommend(const Connection& conn, const fastadapt::AccuracyReport& report, const RecommendArgs& args);

std::string register_manifest(const Connection& conn, const std::filesystem::path& manifest_path);
server::DatasetRecord build_dataset(const Connection& conn, const std::string& id, const server::BuildRequest& request);

void write_text(const std::filesystem::path& path, std::string_view text);
std::string read_text(const std::filesystem::path& path);

// Process exit code for an error: 1 internal, 3 network, 4 server rejected,
// 5 data or validation, 6 version or corrupt bundle, 7 io.
int exit_code_for(const Error& e) noexcept;

}  // namespace nds::client
