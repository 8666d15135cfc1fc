#include "nds/server/registry.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <future>
#include <sstream>

#include <fcntl.h>
#include <unistd.h>

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "nds/core/hashing.hpp"
#include "nds/error.hpp"

namespace nds::server {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Status status) noexcept {
    switch (status) {
        case Status::registered: return "registered";
        case Status::building: return "building";
        case Status::ready: return "ready";
        case Status::failed: return "failed";
        case Status::quarantined: return "quarantined";
    }
    return "unknown";
}

Status status_from_string(std::string_view name) {
    for (auto s : {Status::registered, Status::building, Status::ready, Status::failed, Status::quarantined}) {
        if (to_string(s) == name) return s;
    }
    throw Error(ErrorCode::corrupt_store, fmt::format("unknown record status '{}'", name));
}

namespace {

std::string now_iso() {
    return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(std::chrono::system_clock::now())));
}

void write_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
    const fs::path tmp = path.string() + ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd < 0) throw Error(ErrorCode::io, fmt::format("cannot write {}", tmp.string()));
    std::size_t done = 0;
    while (done < bytes.size()) {
        const auto n = ::write(fd, bytes.data() + done, bytes.size() - done);
        if (n <= 0) {
            ::close(fd);
            throw Error(ErrorCode::io, fmt::format("short write to {}", tmp.string()));
        }
        done += static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::io, fmt::format("cannot rename {}: {}", tmp.string(), ec.message()));
}

void write_atomic(const fs::path& path, std::string_view text) {
    write_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::corrupt_store, fmt::format("missing file {}", path.filename().string()));
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const fs::path& path) {
    const auto bytes = read_bytes(path);
    return {bytes.begin(), bytes.end()};
}

bool valid_id(std::string_view id) {
    if (id.empty() || id.size() > 128 || id.front() == '.') return false;
    return std::all_of(id.begin(), id.end(), [](unsigned char c) { return std::isalnum(c) || c == '-' || c == '_' || c == '.'; });
}

std::string blob_name(std::size_t i) { return fmt::format("expert_{}.bin", i); }

}  // namespace

BuildRequest build_request_from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::validation, "build request must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key != "gating_cfg" && key != "train_cfg" && key != "expert_kind") {
            throw Error(ErrorCode::validation, fmt::format("unexpected build field '{}'", key));
        }
    }
    BuildRequest r;
    try {
        if (j.contains("gating_cfg")) r.gating = j["gating_cfg"].get<gating::GatingConfig>();
        if (j.contains("train_cfg")) r.train = j["train_cfg"].get<experts::TrainConfig>();
        if (j.contains("expert_kind")) r.kind = experts::expert_kind_from_string(j["expert_kind"].get<std::string>());
    } catch (const json::exception& e) {
        throw Error(ErrorCode::validation, fmt::format("malformed build request: {}", e.what()));
    }
    return r;
}

json to_json(const BuildRequest& r) {
    return json{{"gating_cfg", r.gating}, {"train_cfg", r.train}, {"expert_kind", std::string(experts::to_string(r.kind))}};
}

json DatasetRecord::to_json() const {
    json j{{"id", id},
           {"manifest_sha256", manifest_sha256},
           {"item_count", item_count},
           {"status", std::string(server::to_string(status))},
           {"k", sizes.size()},
           {"sizes", sizes},
           {"expert_sha256", expert_sha256},
           {"registered_at", registered_at},
           {"build_started_at", build_started_at},
           {"build_finished_at", build_finished_at},
           {"build_seconds", build_seconds},
           {"error", error},
           {"error_code", error_code}};
    if (build) j["build"] = server::to_json(*build);
    return j;
}

DatasetRecord DatasetRecord::from_json(const json& j) {
    try {
        DatasetRecord r;
        r.id = j.at("id").get<std::string>();
        r.manifest_sha256 = j.at("manifest_sha256").get<std::string>();
        r.item_count = j.at("item_count").get<std::size_t>();
        r.status = status_from_string(j.at("status").get<std::string>());
        r.sizes = j.at("sizes").get<std::vector<std::size_t>>();
        r.expert_sha256 = j.at("expert_sha256").get<std::vector<std::string>>();
        r.registered_at = j.value("registered_at", "");
        r.build_started_at = j.value("build_started_at", "");
        r.build_finished_at = j.value("build_finished_at", "");
        r.build_seconds = j.value("build_seconds", 0.0);
        r.error = j.value("error", "");
        r.error_code = j.value("error_code", "");
        if (j.contains("build")) r.build = build_request_from_json(j["build"]);
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::corrupt_store, fmt::format("malformed record: {}", e.what()));
    }
}

json BundleManifest::to_json(const std::string& href_prefix) const {
    json list = json::array();
    for (const auto& e : experts) {
        list.push_back({{"index", e.index},
                        {"dataset_id", e.dataset_id},
                        {"subset_index", e.subset_index},
                        {"size", e.size},
                        {"kind", std::string(experts::to_string(e.kind))},
                        {"scheme", std::string(gating::to_string(e.scheme))},
                        {"sha256", e.sha256},
                        {"bytes", e.bytes},
                        {"href", fmt::format("{}/{}/{}", href_prefix, e.dataset_id, e.subset_index)}});
    }
    return json{{"version", kFormatVersion}, {"dataset_ref", dataset_ref}, {"experts", std::move(list)}};
}

BundleManifest BundleManifest::from_json(const json& j) {
    try {
        if (j.at("version").get<int>() != kFormatVersion) {
            throw Error(ErrorCode::version_mismatch, fmt::format("bundle format version {} is not supported", j.at("version").dump()));
        }
        BundleManifest b;
        b.dataset_ref = j.at("dataset_ref").get<std::string>();
        for (const auto& e : j.at("experts")) {
            BundleEntry entry;
            entry.index = e.at("index").get<std::size_t>();
            entry.dataset_id = e.at("dataset_id").get<std::string>();
            entry.subset_index = e.at("subset_index").get<std::size_t>();
            entry.size = e.at("size").get<std::size_t>();
            entry.kind = experts::expert_kind_from_string(e.at("kind").get<std::string>());
            entry.scheme = gating::scheme_from_string(e.at("scheme").get<std::string>());
            entry.sha256 = e.at("sha256").get<std::string>();
            entry.bytes = e.at("bytes").get<std::size_t>();
            b.experts.push_back(std::move(entry));
        }
        return b;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::corrupt_blob, fmt::format("malformed bundle manifest: {}", e.what()));
    }
}

std::vector<experts::ExpertModel> train_experts(const DatasetManifest& manifest, const gating::Partition& partition,
                                                const experts::TrainConfig& train, experts::ExpertKind kind) {
    const auto k = partition.k();
    std::vector<std::future<experts::TrainedExpert>> jobs;
    for (std::size_t i = 0; i < k; ++i) {
        jobs.push_back(std::async(std::launch::async, [&, i] {
            std::vector<const Item*> subset;
            for (auto pos : partition.members(i)) subset.push_back(&manifest.items[pos]);
            const auto index = static_cast<std::uint32_t>(i);
            return kind == experts::ExpertKind::rotation ? experts::train_expert_ss(subset, train, index)
                                                         : experts::train_expert_ts(subset, train, index);
        }));
    }
    std::vector<experts::ExpertModel> out;
    std::optional<Error> failure;
    for (std::size_t i = 0; i < k; ++i) {
        try {
            out.push_back(jobs[i].get().model);
        } catch (const Error& e) {
            if (!failure) failure = Error(e.code(), fmt::format("expert {}: {}", i, e.what()), e.detail());
        }
    }
    if (failure) throw *failure;
    return out;
}

std::vector<std::string> split_dataset_ref(std::string_view ref) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = ref.find(',', start);
        const auto piece = ref.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        if (piece.empty()) throw Error(ErrorCode::validation, fmt::format("bad dataset list '{}'", ref));
        out.emplace_back(piece);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string join_dataset_ref(const std::vector<std::string>& ids) { return fmt::format("{}", fmt::join(ids, ",")); }

Registry::Registry(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_ / "datasets", ec);
    if (ec) throw Error(ErrorCode::io, fmt::format("cannot create store at {}: {}", root_.string(), ec.message()));
    recover();
}

Registry::~Registry() {
    std::map<std::string, std::thread> threads;
    {
        std::unique_lock lock(mutex_);
        threads.swap(builders_);
    }
    for (auto& [id, t] : threads) {
        if (t.joinable()) t.join();
    }
}

fs::path Registry::dataset_dir(const std::string& id) const { return root_ / "datasets" / id; }

void Registry::recover() {
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(root_ / "datasets")) {
        if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) recover_one(dir);
}

void Registry::recover_one(const fs::path& dir) {
    const std::string dir_id = dir.filename().string();
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".tmp") fs::remove(entry.path());
    }
    DatasetRecord rec;
    rec.id = dir_id;
    try {
        rec = DatasetRecord::from_json(json::parse(read_text(dir / "record.json")));
        if (rec.id != dir_id) throw Error(ErrorCode::corrupt_store, "record id does not match its directory");
        const auto manifest_text = read_text(dir / "manifest.jsonl");
        if (sha256_hex(manifest_text) != rec.manifest_sha256) {
            throw Error(ErrorCode::corrupt_store, "manifest checksum mismatch, the stored manifest was modified");
        }
        if (rec.status == Status::building) {
            rec.status = Status::registered;
            rec.build_started_at.clear();
            write_record(rec);
            spdlog::warn("dataset '{}': interrupted build reset to registered", rec.id);
        }
        if (rec.status == Status::ready) {
            auto served = std::make_shared<Served>();
            auto manifest = std::make_shared<DatasetManifest>(parse_manifest(manifest_text));
            auto partition = std::make_shared<gating::Partition>(gating::Partition::from_json(json::parse(read_text(dir / "partition.json"))));
            if (partition->sizes() != rec.sizes || rec.expert_sha256.size() != rec.sizes.size()) {
                throw Error(ErrorCode::corrupt_store, "partition sizes disagree with the record");
            }
            for (std::size_t i = 0; i < rec.sizes.size(); ++i) {
                auto blob = std::make_shared<std::vector<std::uint8_t>>(read_bytes(dir / blob_name(i)));
                if (sha256_hex(*blob) != rec.expert_sha256[i]) {
                    throw Error(ErrorCode::corrupt_store, fmt::format("expert {} checksum mismatch", i));
                }
                served->kinds.push_back(experts::deserialize_expert(*blob).kind);
                served->blobs.push_back(std::move(blob));
            }
            served->manifest = std::move(manifest);
            served->partition = std::move(partition);
            served_[rec.id] = std::move(served);
        }
    } catch (const std::exception& e) {
        rec.status = Status::quarantined;
        rec.error = e.what();
        rec.error_code = std::string(to_string(ErrorCode::corrupt_store));
        spdlog::error("dataset '{}' quarantined: {}", dir_id, e.what());
    }
    records_[rec.id] = rec;
}

void Registry::write_record(const DatasetRecord& record) const {
    write_atomic(dataset_dir(record.id) / "record.json", record.to_json().dump(2));
}

RegisterResult Registry::register_dataset(std::string_view manifest_text) {
    return register_dataset(parse_manifest(manifest_text));
}

RegisterResult Registry::register_dataset(const DatasetManifest& manifest) {
    validate(manifest);
    if (manifest.role != Role::source) throw Error(ErrorCode::validation, "only source manifests can be registered");
    if (!valid_id(manifest.name)) {
        throw Error(ErrorCode::validation, fmt::format("dataset name '{}' must be 1-128 of [A-Za-z0-9._-]", manifest.name));
    }
    const std::string canonical = serialize_manifest(manifest);
    const std::string checksum = sha256_hex(canonical);

    std::lock_guard writer(write_mutex_);
    {
        std::shared_lock lock(mutex_);
        if (auto it = records_.find(manifest.name); it != records_.end()) {
            if (it->second.manifest_sha256 == checksum) return {manifest.name, false};
            throw Error(ErrorCode::duplicate_name,
                        fmt::format("dataset '{}' is already registered with different content", manifest.name));
        }
    }
    DatasetRecord rec;
    rec.id = manifest.name;
    rec.manifest_sha256 = checksum;
    rec.item_count = manifest.items.size();
    rec.registered_at = now_iso();
    const auto dir = dataset_dir(rec.id);
    fs::create_directories(dir);
    write_atomic(dir / "manifest.jsonl", canonical);
    write_record(rec);
    {
        std::unique_lock lock(mutex_);
        records_[rec.id] = rec;
    }
    spdlog::info("registered dataset '{}' ({} items)", rec.id, rec.item_count);
    return {rec.id, true};
}

DatasetRecord Registry::build(const std::string& id, const BuildRequest& request, bool wait) {
    {
        std::lock_guard writer(write_mutex_);
        std::unique_lock lock(mutex_);
        auto it = records_.find(id);
        if (it == records_.end()) throw Error(ErrorCode::unknown_dataset, fmt::format("no dataset '{}'", id));
        auto& rec = it->second;
        if (rec.status == Status::quarantined) throw Error(ErrorCode::corrupt_store, fmt::format("dataset '{}' is quarantined: {}", id, rec.error));
        if (rec.status == Status::registered || rec.status == Status::failed) {
            if (auto old = builders_.find(id); old != builders_.end()) {
                if (old->second.joinable()) old->second.join();
                builders_.erase(old);
            }
            rec.status = Status::building;
            rec.build = request;
            rec.build_started_at = now_iso();
            rec.build_finished_at.clear();
            rec.error.clear();
            rec.error_code.clear();
            write_record(rec);
            builders_[id] = std::thread(&Registry::run_build, this, id, request);
        }
    }
    if (wait) {
        wait_idle(id);
        const auto rec = record(id);
        if (rec.status == Status::failed) {
            throw Error(error_code_from_string(rec.error_code).value_or(ErrorCode::internal), rec.error);
        }
        return rec;
    }
    return record(id);
}

void Registry::wait_idle(const std::string& id) {
    std::unique_lock lock(mutex_);
    build_done_.wait(lock, [&] {
        auto it = records_.find(id);
        return it == records_.end() || it->second.status != Status::building;
    });
}

void Registry::run_build(std::string id, BuildRequest request) {
    const auto started = std::chrono::steady_clock::now();
    const auto dir = dataset_dir(id);
    std::vector<std::size_t> sizes;
    std::vector<std::string> shas;
    std::shared_ptr<Served> served;
    std::optional<Error> failure;
    try {
        std::string checksum;
        {
            std::shared_lock lock(mutex_);
            checksum = records_.at(id).manifest_sha256;
        }
        const auto text = read_text(dir / "manifest.jsonl");
        if (sha256_hex(text) != checksum) throw Error(ErrorCode::corrupt_store, "manifest checksum mismatch, the stored manifest was modified");
        auto manifest = std::make_shared<DatasetManifest>(parse_manifest(text));
        auto partition = std::make_shared<gating::Partition>(gating::build_partition(*manifest, request.gating));

        const auto k = partition->k();
        served = std::make_shared<Served>();
        for (const auto& model : train_experts(*manifest, *partition, request.train, request.kind)) {
            served->kinds.push_back(model.kind);
            served->blobs.push_back(std::make_shared<std::vector<std::uint8_t>>(experts::serialize_expert(model)));
        }
        for (std::size_t i = 0; i < k; ++i) {
            write_atomic(dir / blob_name(i), *served->blobs[i]);
            shas.push_back(sha256_hex(*served->blobs[i]));
        }
        write_atomic(dir / "partition.json", partition->to_json().dump());
        sizes = partition->sizes();
        served->manifest = std::move(manifest);
        served->partition = std::move(partition);
    } catch (const Error& e) {
        failure = e;
    } catch (const std::exception& e) {
        failure = Error(ErrorCode::internal, e.what());
    }

    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    {
        std::lock_guard writer(write_mutex_);
        std::unique_lock lock(mutex_);
        auto& rec = records_.at(id);
        rec.build_finished_at = now_iso();
        rec.build_seconds = seconds;
        if (failure) {
            rec.status = Status::failed;
            rec.error = failure->what();
            rec.error_code = std::string(to_string(failure->code()));
            spdlog::error("build of '{}' failed: {}", id, rec.error);
        } else {
            rec.status = Status::ready;
            rec.sizes = sizes;
            rec.expert_sha256 = shas;
            served_[id] = served;
            spdlog::info("built '{}': {} experts in {:.2f} s", id, sizes.size(), seconds);
        }
        try {
            write_record(rec);
        } catch (const Error& e) {
            spdlog::error("could not persist record of '{}': {}", id, e.what());
        }
    }
    build_done_.notify_all();
}

DatasetRecord Registry::record(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = records_.find(id);
    if (it == records_.end()) throw Error(ErrorCode::unknown_dataset, fmt::format("no dataset '{}'", id));
    return it->second;
}

std::vector<DatasetRecord> Registry::records() const {
    std::shared_lock lock(mutex_);
    std::vector<DatasetRecord> out;
    for (const auto& [id, rec] : records_) out.push_back(rec);
    return out;
}

std::shared_ptr<const Registry::Served> Registry::served(const std::string& id) const {
    std::shared_lock lock(mutex_);
    auto it = records_.find(id);
    if (it == records_.end()) throw Error(ErrorCode::unknown_dataset, fmt::format("no dataset '{}'", id));
    if (it->second.status == Status::quarantined) {
        throw Error(ErrorCode::corrupt_store, fmt::format("dataset '{}' is quarantined: {}", id, it->second.error));
    }
    if (it->second.status != Status::ready) {
        throw Error(ErrorCode::not_ready, fmt::format("dataset '{}' is {}, not ready", id, to_string(it->second.status)));
    }
    return served_.at(id);
}

BundleManifest Registry::bundle(const std::vector<std::string>& ids) const {
    if (ids.empty()) throw Error(ErrorCode::validation, "no datasets requested");
    BundleManifest out;
    out.dataset_ref = join_dataset_ref(ids);
    for (const auto& id : ids) {
        const auto s = served(id);
        for (std::size_t i = 0; i < s->blobs.size(); ++i) {
            BundleEntry e;
            e.index = out.experts.size();
            e.dataset_id = id;
            e.subset_index = i;
            e.size = s->partition->sizes()[i];
            e.kind = s->kinds[i];
            e.scheme = s->partition->scheme();
            e.sha256 = sha256_hex(*s->blobs[i]);
            e.bytes = s->blobs[i]->size();
            out.experts.push_back(std::move(e));
        }
    }
    return out;
}

std::shared_ptr<const std::vector<std::uint8_t>> Registry::expert_blob(const std::string& id, std::size_t subset) const {
    const auto s = served(id);
    if (subset >= s->blobs.size()) {
        throw Error(ErrorCode::unknown_item, fmt::format("dataset '{}' has {} experts, no expert {}", id, s->blobs.size(), subset));
    }
    return s->blobs[subset];
}

selection::Recommendation Registry::recommend(const std::string& dataset_ref, std::span<const double> z,
                                              const selection::RecommendOptions& options) const {
    const auto ids = split_dataset_ref(dataset_ref);
    selection::CandidatePool pool;
    pool.dataset_ref = join_dataset_ref(ids);
    for (const auto& id : ids) {
        const auto s = served(id);
        pool.append(id, *s->manifest, *s->partition);
    }
    return selection::recommend(pool, z, options);
}

}  // namespace nds::server
