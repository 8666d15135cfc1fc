#pragma once

// Dataset registry backed by a directory store:
//
//   <root>/datasets/<id>/manifest.jsonl   canonical manifest copy
//   <root>/datasets/<id>/record.json      status, checksums, configs, timestamps
//   <root>/datasets/<id>/partition.json   written once the build succeeds
//   <root>/datasets/<id>/expert_<i>.bin   one blob per subset
//
// Every file is written to a temporary name and renamed into place, and the
// record is always written last, so a crash leaves either the old or the new
// state on disk.

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "nds/core/manifest.hpp"
#include "nds/experts/expert.hpp"
#include "nds/gating/partition.hpp"
#include "nds/selection/selection.hpp"

namespace nds::server {

enum class Status { registered, building, ready, failed, quarantined };

std::string_view to_string(Status status) noexcept;
Status status_from_string(std::string_view name);

struct BuildRequest {
    gating::GatingConfig gating;
    experts::TrainConfig train;
    experts::ExpertKind kind = experts::ExpertKind::rotation;
};

// Strict parse of {gating_cfg, train_cfg, expert_kind?}.
BuildRequest build_request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BuildRequest& request);

struct DatasetRecord {
    std::string id;
    std::string manifest_sha256;
    std::size_t item_count = 0;
    Status status = Status::registered;
    std::optional<BuildRequest> build;
    std::vector<std::size_t> sizes;            // |S_i|, once ready
    std::vector<std::string> expert_sha256;    // one per blob, once ready
    std::string registered_at;
    std::string build_started_at;
    std::string build_finished_at;
    double build_seconds = 0.0;
    std::string error;       // failure or quarantine reason
    std::string error_code;  // ErrorCode name behind error

    nlohmann::json to_json() const;
    static DatasetRecord from_json(const nlohmann::json& j);
};

struct BundleEntry {
    std::size_t index = 0;  // global position in the bundle
    std::string dataset_id;
    std::size_t subset_index = 0;
    std::size_t size = 0;
    experts::ExpertKind kind = experts::ExpertKind::rotation;
    gating::Scheme scheme = gating::Scheme::unsupervised;
    std::string sha256;
    std::size_t bytes = 0;
};

struct BundleManifest {
    static constexpr int kFormatVersion = 1;
    std::string dataset_ref;  // comma-joined dataset ids
    std::vector<BundleEntry> experts;

    nlohmann::json to_json(const std::string& href_prefix = "/v1/experts") const;
    static BundleManifest from_json(const nlohmann::json& j);
};

struct RegisterResult {
    std::string id;
    bool created = false;
};

class Registry {
public:
    // Opens (creating if needed) the store and recovers every record found.
    explicit Registry(std::filesystem::path root);
    ~Registry();
    Registry(const Registry&) = delete;
    Registry& operator=(const Registry&) = delete;

    const std::filesystem::path& root() const noexcept { return root_; }

    // Parses, validates and stores a source manifest. Idempotent for an
    // identical manifest; duplicate_name when the name is taken by different content.
    RegisterResult register_dataset(std::string_view manifest_text);
    RegisterResult register_dataset(const DatasetManifest& manifest);

    // Starts a build. A ready record is left alone; a build already running
    // is not restarted. With wait=true the call returns after the build ends
    // and rethrows its error.
    DatasetRecord build(const std::string& id, const BuildRequest& request, bool wait);
    // Blocks until no build is running for id.
    void wait_idle(const std::string& id);

    DatasetRecord record(const std::string& id) const;
    std::vector<DatasetRecord> records() const;

    // Throws unknown_dataset / not_ready.
    BundleManifest bundle(const std::vector<std::string>& ids) const;
    std::shared_ptr<const std::vector<std::uint8_t>> expert_blob(const std::string& id, std::size_t subset) const;

    // Stateless: reads ready records only and writes nothing.
    selection::Recommendation recommend(const std::string& dataset_ref, std::span<const double> z,
                                        const selection::RecommendOptions& options) const;

private:
    struct Served {
        std::shared_ptr<const DatasetManifest> manifest;
        std::shared_ptr<const gating::Partition> partition;
        std::vector<std::shared_ptr<const std::vector<std::uint8_t>>> blobs;
        std::vector<experts::ExpertKind> kinds;
    };

    std::filesystem::path dataset_dir(const std::string& id) const;
    void recover();
    void recover_one(const std::filesystem::path& dir);
    void write_record(const DatasetRecord& record) const;
    void run_build(std::string id, BuildRequest request);
    std::shared_ptr<const Served> served(const std::string& id) const;

    std::filesystem::path root_;
    mutable std::shared_mutex mutex_;
    std::map<std::string, DatasetRecord> records_;
    std::map<std::string, std::shared_ptr<const Served>> served_;
    std::map<std::string, std::thread> builders_;
    std::mutex write_mutex_;  // single writer for registry mutations
    std::condition_variable_any build_done_;
};

// One expert per subset, trained concurrently. Errors name the subset.
std::vector<experts::ExpertModel> train_experts(const DatasetManifest& manifest, const gating::Partition& partition,
                                                const experts::TrainConfig& train, experts::ExpertKind kind);

// Splits "a,b" into ids, rejecting empty pieces.
std::vector<std::string> split_dataset_ref(std::string_view ref);
std::string join_dataset_ref(const std::vector<std::string>& ids);

}  // namespace nds::server
