#include "nds/server/api.hpp"

#include <charconv>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "httplib.h"
#include "nds/fastadapt/fastadapt.hpp"

namespace nds::server {

using nlohmann::json;

int http_status(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::unknown_dataset:
        case ErrorCode::unknown_item: return 404;
        case ErrorCode::not_ready:
        case ErrorCode::duplicate_name: return 409;
        case ErrorCode::length_mismatch:
        case ErrorCode::invalid_budget:
        case ErrorCode::non_finite_input:
        case ErrorCode::non_positive_temperature: return 422;
        case ErrorCode::corrupt_store:
        case ErrorCode::io:
        case ErrorCode::internal:
        case ErrorCode::network: return 500;
        default: return 400;
    }
}

namespace {

bool non_negative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

}  // namespace

RecommendRequest recommend_request_from_json(const json& j) {
    if (!j.is_object()) throw Error(ErrorCode::validation, "recommendation request must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        if (key != "report" && key != "budget" && key != "budget_bytes" && key != "temperature" && key != "seed") {
            throw Error(ErrorCode::validation, fmt::format("unexpected request field '{}'", key));
        }
    }
    if (!j.contains("report")) throw Error(ErrorCode::validation, "request needs a report");
    fastadapt::check_report_schema(j["report"]);
    RecommendRequest r;
    r.report = j["report"];
    if (!j.contains("budget") || !j["budget"].is_number_integer() || j["budget"].get<std::int64_t>() < 1) {
        throw Error(ErrorCode::invalid_budget, "budget must be an integer >= 1");
    }
    r.options.budget = j["budget"].get<std::size_t>();
    if (j.contains("budget_bytes")) {
        if (!non_negative_integer(j["budget_bytes"]) || j["budget_bytes"].get<std::uint64_t>() == 0) {
            throw Error(ErrorCode::invalid_budget, "budget_bytes must be a positive integer");
        }
        r.options.budget_bytes = j["budget_bytes"].get<std::uint64_t>();
    }
    if (j.contains("temperature")) {
        if (!j["temperature"].is_number()) throw Error(ErrorCode::validation, "temperature must be a number");
        r.options.temperature = j["temperature"].get<double>();
        if (!(r.options.temperature > 0.0)) {
            throw Error(ErrorCode::non_positive_temperature, fmt::format("temperature must be positive, got {}", r.options.temperature));
        }
    }
    if (j.contains("seed")) {
        if (!non_negative_integer(j["seed"])) throw Error(ErrorCode::validation, "seed must be a non-negative integer");
        r.options.seed = j["seed"].get<std::uint64_t>();
    }
    return r;
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
    send_json(res, http_status(e.code()), json{{"code", std::string(to_string(e.code()))}, {"message", e.what()}, {"detail", e.detail()}});
}

json parse_body(const std::string& body) {
    try {
        return json::parse(body);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::parse_error, "request body is not valid JSON", e.what());
    }
}

}  // namespace

ApiServer::ApiServer(Registry& registry, std::optional<std::filesystem::path> request_log)
    : registry_(registry), http_(std::make_unique<httplib::Server>()) {
    if (request_log) {
        log_.emplace(*request_log, std::ios::app);
        if (!*log_) throw Error(ErrorCode::io, fmt::format("cannot open request log {}", request_log->string()));
    }
    routes();
}

ApiServer::~ApiServer() { stop(); }

void ApiServer::log_request(const std::string& method, const std::string& path, int status, const json& body) {
    if (!log_) return;
    std::lock_guard lock(log_mutex_);
    *log_ << json{{"method", method}, {"path", path}, {"status", status}, {"body", body}}.dump() << '\n';
    log_->flush();
}

void ApiServer::routes() {
    auto& s = *http_;

    // Wraps a handler so every failure turns into the error envelope and every
    // request lands in the log. The handler returns what the log should keep
    // of the body.
    auto guarded = [this](auto handler) {
        return [this, handler](const httplib::Request& req, httplib::Response& res) {
            json logged = nullptr;
            try {
                logged = handler(req, res);
            } catch (const Error& e) {
                send_error(res, e);
            } catch (const std::exception& e) {
                send_error(res, Error(ErrorCode::internal, e.what()));
            }
            log_request(req.method, req.path, res.status, logged);
        };
    };

    s.Get("/v1/datasets", guarded([this](const httplib::Request&, httplib::Response& res) {
              json list = json::array();
              for (const auto& rec : registry_.records()) list.push_back(rec.to_json());
              send_json(res, 200, json{{"datasets", std::move(list)}});
              return json(nullptr);
          }));

    s.Post("/v1/datasets", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const auto result = registry_.register_dataset(req.body);
               auto rec = registry_.record(result.id).to_json();
               rec["created"] = result.created;
               send_json(res, result.created ? 201 : 200, rec);
               return json{{"manifest_bytes", req.body.size()}};
           }));

    s.Post(R"(/v1/datasets/([^/]+)/build)", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const json body = req.body.empty() ? json::object() : parse_body(req.body);
               const auto request = build_request_from_json(body);
               const bool wait = req.has_param("wait") && req.get_param_value("wait") != "0";
               const auto rec = registry_.build(req.matches[1], request, wait);
               send_json(res, rec.status == Status::ready ? 200 : 202, rec.to_json());
               return body;
           }));

    s.Get(R"(/v1/datasets/([^/]+)/status)", guarded([this](const httplib::Request& req, httplib::Response& res) {
              send_json(res, 200, registry_.record(req.matches[1]).to_json());
              return json(nullptr);
          }));

    s.Get("/v1/experts", guarded([this](const httplib::Request& req, httplib::Response& res) {
              if (!req.has_param("datasets")) throw Error(ErrorCode::validation, "missing ?datasets=a,b");
              const auto ids = split_dataset_ref(req.get_param_value("datasets"));
              send_json(res, 200, registry_.bundle(ids).to_json());
              return json{{"datasets", req.get_param_value("datasets")}};
          }));

    s.Get(R"(/v1/experts/([^/]+)/(\d+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
              const std::string index_text = req.matches[2];
              std::size_t index = 0;
              std::from_chars(index_text.data(), index_text.data() + index_text.size(), index);
              const auto blob = registry_.expert_blob(req.matches[1], index);
              res.status = 200;
              res.set_content(reinterpret_cast<const char*>(blob->data()), blob->size(), "application/octet-stream");
              return json(nullptr);
          }));

    s.Post("/v1/recommendations", guarded([this](const httplib::Request& req, httplib::Response& res) {
               const json body = parse_body(req.body);
               const auto request = recommend_request_from_json(body);
               const auto report = fastadapt::report_from_json(request.report);
               spdlog::info("recommendation for '{}' (K={}, budget {}, nonce {})", report.dataset_ref, report.z.size(),
                            request.options.budget, report.client_nonce);
               const auto rec = registry_.recommend(report.dataset_ref, report.z, request.options);
               send_json(res, 200, selection::to_json(rec));
               return body;
           }));

    s.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
        if (!res.body.empty()) return;
        const auto code = res.status == 404 ? "not_found" : "http_error";
        send_json(res, res.status, json{{"code", code}, {"message", fmt::format("{} {} -> {}", req.method, req.path, res.status)}, {"detail", ""}});
    });
}

bool ApiServer::listen(const std::string& host, int port) { return http_->listen(host, port); }

int ApiServer::bind(const std::string& host, int port) {
    if (port == 0) return http_->bind_to_any_port(host);
    return http_->bind_to_port(host, port) ? port : -1;
}

bool ApiServer::listen_after_bind() { return http_->listen_after_bind(); }

void ApiServer::stop() {
    if (http_) http_->stop();
}

void ApiServer::wait_until_ready() const { http_->wait_until_ready(); }

}  // namespace nds::server
