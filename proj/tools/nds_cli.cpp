#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "nds/client/client.hpp"

namespace fs = std::filesystem;
using namespace nds;

namespace {

struct Options {
    std::string server = "http://127.0.0.1:8080";
    std::string datasets;
    std::string target;
    std::string mode = "proxy";
    std::string bundle_dir = "bundle";
    std::string report_path;
    std::string manifest_path;
    std::string dataset_id;
    std::string out;
    std::size_t budget = 0;
    std::optional<std::uint64_t> budget_bytes;
    std::optional<double> temperature;
    std::optional<std::uint64_t> seed;
    std::uint32_t probe_epochs = 10;
    double probe_lr = 0.01;
    double probe_train_fraction = 0.8;
    server::BuildRequest build;
    std::string scheme = "unsupervised";
    std::string expert_kind = "rotation";
};

void print_bundle(const client::LocalBundle& bundle) {
    fmt::print("{:>6}  {:<20} {:>6} {:>8}  {:<13} {}\n", "expert", "dataset", "subset", "size", "kind", "scheme");
    for (const auto& e : bundle.manifest.experts) {
        fmt::print("{:>6}  {:<20} {:>6} {:>8}  {:<13} {}\n", e.index, e.dataset_id, e.subset_index, e.size,
                   experts::to_string(e.kind), gating::to_string(e.scheme));
    }
}

void print_report(const fastadapt::AccuracyReport& report) {
    fmt::print("{:>6}  {:>8}\n", "expert", "z");
    for (std::size_t i = 0; i < report.z.size(); ++i) fmt::print("{:>6}  {:>8.4f}\n", i, report.z[i]);
    fmt::print("mode {}, target size {}\n", fastadapt::to_string(report.mode), report.target_size);
}

void print_recommendation(const selection::Recommendation& rec, const fs::path& urls) {
    fmt::print("{:>6}  {:<20} {:>8} {:>12}\n", "expert", "dataset", "size", "w");
    for (const auto& w : rec.weights) fmt::print("{:>6}  {:<20} {:>8} {:>12.6f}\n", w.expert, w.dataset_id, w.size, w.w);
    fmt::print("{} items (budget {}, seed {}, T {}{}{}) -> {}\n", rec.items.size(), rec.budget, rec.seed, rec.temperature,
               rec.padded ? ", padded" : "", rec.byte_capped ? ", byte capped" : "", urls.string());
}

std::vector<std::string> dataset_list(const Options& o) {
    if (o.datasets.empty()) throw Error(ErrorCode::validation, "--datasets is required");
    return server::split_dataset_ref(o.datasets);
}

fastadapt::ProbeConfig probe_config(const Options& o) {
    fastadapt::ProbeConfig cfg;
    cfg.epochs = o.probe_epochs;
    cfg.learning_rate = o.probe_lr;
    cfg.split.train_fraction = o.probe_train_fraction;
    cfg.split.seed = o.seed.value_or(0);
    return cfg;
}

fastadapt::AccuracyReport run_adapt(const Options& o, const client::LocalBundle& bundle) {
    if (o.target.empty()) throw Error(ErrorCode::validation, "--target is required");
    const auto target = load_manifest(o.target);
    spdlog::info("adapting {} experts on {} local target items ({})", bundle.experts.size(), target.items.size(), o.mode);
    return client::adapt(bundle, target, fastadapt::adapt_mode_from_string(o.mode), probe_config(o));
}

client::RecommendArgs recommend_args(const Options& o) {
    if (o.budget == 0) throw Error(ErrorCode::invalid_budget, "--budget must be at least 1");
    return {o.budget, o.budget_bytes, o.temperature, o.seed};
}

void save_recommendation(const selection::Recommendation& rec, const fs::path& dir) {
    client::write_text(dir / "recommendation.json", selection::to_json(rec).dump(2));
    client::write_text(dir / "urls.txt", selection::url_list(rec));
    print_recommendation(rec, dir / "urls.txt");
}

int cmd_register(const Options& o) {
    if (o.manifest_path.empty()) throw Error(ErrorCode::validation, "--manifest is required");
    const client::Connection conn(o.server);
    const auto id = client::register_manifest(conn, o.manifest_path);
    fmt::print("registered {}\n", id);
    return 0;
}

int cmd_build(Options o) {
    if (o.dataset_id.empty()) throw Error(ErrorCode::validation, "--dataset is required");
    o.build.gating.scheme = gating::scheme_from_string(o.scheme);
    o.build.kind = experts::expert_kind_from_string(o.expert_kind);
    const client::Connection conn(o.server);
    const auto rec = client::build_dataset(conn, o.dataset_id, o.build);
    fmt::print("{} {} k={} ({:.2f} s)\n", rec.id, server::to_string(rec.status), rec.sizes.size(), rec.build_seconds);
    return 0;
}

int cmd_fetch(const Options& o) {
    const client::Connection conn(o.server);
    const auto bundle = client::fetch_bundle(conn, dataset_list(o), o.out.empty() ? o.bundle_dir : o.out);
    print_bundle(bundle);
    return 0;
}

int cmd_adapt(const Options& o) {
    const auto bundle = client::load_bundle(o.bundle_dir);
    const auto report = run_adapt(o, bundle);
    const fs::path out = o.out.empty() ? fs::path("report.json") : fs::path(o.out);
    client::write_text(out, fastadapt::to_json(report).dump(2));
    print_report(report);
    return 0;
}

int cmd_recommend(const Options& o) {
    if (o.report_path.empty()) throw Error(ErrorCode::validation, "--report is required");
    nlohmann::json report_json;
    try {
        report_json = nlohmann::json::parse(client::read_text(o.report_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::parse_error, fmt::format("{} is not valid JSON", o.report_path), e.what());
    }
    const auto report = fastadapt::report_from_json(report_json);
    const client::Connection conn(o.server);
    const auto rec = client::recommend(conn, report, recommend_args(o));
    save_recommendation(rec, o.out.empty() ? fs::path("recommendation") : fs::path(o.out));
    return 0;
}

int cmd_e2e(const Options& o) {
    const fs::path out = o.out.empty() ? fs::path("nds-out") : fs::path(o.out);
    const client::Connection conn(o.server);
    const auto args = recommend_args(o);
    const auto bundle = client::fetch_bundle(conn, dataset_list(o), out / "bundle");
    const auto report = run_adapt(o, bundle);
    client::write_text(out / "report.json", fastadapt::to_json(report).dump(2));
    print_report(report);
    const auto rec = client::recommend(conn, report, args);
    save_recommendation(rec, out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural data server client: fetch experts, adapt them on local data, get a download list"};
    app.require_subcommand(1);
    Options o;

    auto add_server = [&](CLI::App* cmd) {
        cmd->add_option("--server", o.server, "Server base URL")->envname("SERVER_URL")->capture_default_str();
    };
    auto add_seed = [&](CLI::App* cmd, const std::string& what) { cmd->add_option("--seed", o.seed, what)->envname("SEED"); };
    auto add_adapt = [&](CLI::App* cmd) {
        cmd->add_option("--target", o.target, "Local target manifest (never uploaded)");
        cmd->add_option("--mode", o.mode, "proxy (rotation accuracy) or probe (linear probe)")
            ->check(CLI::IsMember({"proxy", "probe"}))
            ->capture_default_str();
        cmd->add_option("--probe-epochs", o.probe_epochs, "Linear probe iterations")->capture_default_str();
        cmd->add_option("--probe-lr", o.probe_lr, "Linear probe learning rate")->capture_default_str();
        cmd->add_option("--probe-train-fraction", o.probe_train_fraction, "Probe train split")->capture_default_str();
    };
    auto add_budget = [&](CLI::App* cmd) {
        cmd->add_option("--budget", o.budget, "Number of items to recommend")->required();
        cmd->add_option("--budget-bytes", o.budget_bytes, "Optional cap on the summed item sizes");
        cmd->add_option("--temperature", o.temperature, "Softmax temperature (server default 0.1)");
    };

    auto* reg = app.add_subcommand("register", "Upload a source manifest");
    add_server(reg);
    reg->add_option("--manifest", o.manifest_path, "Source manifest (JSON lines)")->required();

    auto* build = app.add_subcommand("build", "Partition a registered dataset and train its experts");
    add_server(build);
    build->add_option("--dataset", o.dataset_id, "Dataset id")->required();
    build->add_option("--k", o.build.gating.k, "Number of experts")->capture_default_str();
    build->add_option("--scheme", o.scheme, "unsupervised or superclass")->capture_default_str();
    build->add_option("--gating-seed", o.build.gating.seed, "k-means seed")->capture_default_str();
    build->add_option("--expert-kind", o.expert_kind, "rotation or task_specific")->capture_default_str();
    build->add_option("--epochs", o.build.train.epochs, "Expert training epochs")->capture_default_str();
    build->add_option("--lr", o.build.train.learning_rate, "Expert learning rate")->capture_default_str();
    build->add_option("--hidden", o.build.train.hidden_units, "Expert hidden units")->capture_default_str();
    build->add_option("--train-seed", o.build.train.seed, "Expert initialisation seed")->capture_default_str();

    auto* fetch = app.add_subcommand("fetch", "Download and verify the expert bundle");
    add_server(fetch);
    fetch->add_option("--datasets", o.datasets, "Comma separated dataset ids")->required();
    fetch->add_option("--out", o.out, "Bundle directory (default: bundle)");

    auto* adapt = app.add_subcommand("adapt", "Score every expert on the local target");
    adapt->add_option("--bundle", o.bundle_dir, "Bundle directory from fetch")->capture_default_str();
    add_adapt(adapt);
    add_seed(adapt, "Probe split seed");
    adapt->add_option("--out", o.out, "Report file (default: report.json)");

    auto* rec = app.add_subcommand("recommend", "Submit a report and save the recommended URLs");
    add_server(rec);
    rec->add_option("--report", o.report_path, "Report file from adapt")->required();
    add_budget(rec);
    add_seed(rec, "Sampling seed");
    rec->add_option("--out", o.out, "Output directory (default: recommendation)");

    auto* e2e = app.add_subcommand("e2e", "fetch + adapt + recommend");
    add_server(e2e);
    e2e->add_option("--datasets", o.datasets, "Comma separated dataset ids")->required();
    add_adapt(e2e);
    add_budget(e2e);
    add_seed(e2e, "Sampling and probe split seed");
    e2e->add_option("--out", o.out, "Output directory (default: nds-out)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    spdlog::set_default_logger(spdlog::stderr_color_mt("nds"));
    try {
        if (*reg) return cmd_register(o);
        if (*build) return cmd_build(o);
        if (*fetch) return cmd_fetch(o);
        if (*adapt) return cmd_adapt(o);
        if (*rec) return cmd_recommend(o);
        if (*e2e) return cmd_e2e(o);
    } catch (const client::ServerRejected& e) {
        spdlog::error("server rejected the request (HTTP {}, {}): {}", e.http_status(), to_string(e.code()), e.what());
        return client::exit_code_for(e);
    } catch (const Error& e) {
        spdlog::error("{}: {}", to_string(e.code()), e.what());
        return client::exit_code_for(e);
    } catch (const std::exception& e) {
        spdlog::error("internal error: {}", e.what());
        return 1;
    }
    return 2;
}
