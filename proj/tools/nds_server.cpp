#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "nds/server/api.hpp"
#include "nds/server/registry.hpp"

namespace {

nds::server::ApiServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural data server: dataset registry, expert index and recommendations over HTTP"};
    std::string root = "nds-store";
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string request_log;
    std::string port_file;
    app.add_option("--root", root, "Directory store for the registry")->capture_default_str();
    app.add_option("--host", host, "Address to bind")->capture_default_str();
    app.add_option("--port", port, "Port to listen on, 0 for any free port")->capture_default_str();
    app.add_option("--request-log", request_log, "Append every request (method, path, status, body) as JSON lines");
    app.add_option("--port-file", port_file, "Write the bound port to this file once listening");
    CLI11_PARSE(app, argc, argv);

    spdlog::set_default_logger(spdlog::stderr_color_mt("nds-server"));
    try {
        nds::server::Registry registry(root);
        std::optional<std::filesystem::path> log_path;
        if (!request_log.empty()) log_path = request_log;
        nds::server::ApiServer api(registry, log_path);
        g_server = &api;
        std::signal(SIGINT, on_signal);
        std::signal(SIGTERM, on_signal);

        const int bound = api.bind(host, port);
        if (bound < 0) {
            spdlog::error("could not bind {}:{}", host, port);
            return 3;
        }
        if (!port_file.empty()) {
            std::FILE* f = std::fopen(port_file.c_str(), "w");
            if (f) {
                std::fprintf(f, "%d\n", bound);
                std::fclose(f);
            }
        }
        spdlog::info("serving {} on http://{}:{}", root, host, bound);
        const bool ok = api.listen_after_bind();
        g_server = nullptr;
        if (!ok) {
            spdlog::error("listener on {}:{} stopped with an error", host, bound);
            return 3;
        }
        return 0;
    } catch (const nds::Error& e) {
        spdlog::error("{}: {}", nds::to_string(e.code()), e.what());
        return e.code() == nds::ErrorCode::io ? 7 : 1;
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
}
