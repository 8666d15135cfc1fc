#pragma once

// Versioned HTTP+JSON front end of the registry.
//
//   GET  /v1/datasets                       list of records
//   POST /v1/datasets                       manifest upload (JSON lines body)
//   POST /v1/datasets/{id}/build[?wait=1]   {gating_cfg, train_cfg, expert_kind?}
//   GET  /v1/datasets/{id}/status
//   GET  /v1/experts?datasets=a,b           bundle manifest with blob links
//   GET  /v1/experts/{id}/{i}               one expert blob
//   POST /v1/recommendations                {report, budget, budget_bytes?, temperature?, seed?}
//
// Errors come back as {"code", "message", "detail"}.

#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "json.hpp"
#include "nds/error.hpp"
#include "nds/selection/selection.hpp"
#include "nds/server/registry.hpp"

namespace httplib {
class Server;
}

namespace nds::server {

int http_status(ErrorCode code) noexcept;

struct RecommendRequest {
    nlohmann::json report;  // schema-checked AccuracyReport
    selection::RecommendOptions options;
};

// Strict: unknown fields, non-scalar options or a malformed report are
// rejected with a validation error.
RecommendRequest recommend_request_from_json(const nlohmann::json& j);

class ApiServer {
public:
    // request_log: optional JSON-lines capture of every request (method,
    // path, status and the parsed body of report submissions).
    explicit ApiServer(Registry& registry, std::optional<std::filesystem::path> request_log = std::nullopt);
    ~ApiServer();

    // Blocking.
    bool listen(const std::string& host, int port);
    // Binds (port 0 picks a free one) and returns the port, or -1. Follow
    // with listen_after_bind().
    int bind(const std::string& host, int port);
    bool listen_after_bind();
    void stop();
    void wait_until_ready() const;

private:
    void routes();
    void log_request(const std::string& method, const std::string& path, int status, const nlohmann::json& body);

    Registry& registry_;
    std::unique_ptr<httplib::Server> http_;
    std::mutex log_mutex_;
    std::optional<std::ofstream> log_;
};

}  // namespace nds::server
