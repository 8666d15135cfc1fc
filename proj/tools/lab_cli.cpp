#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "nds/error.hpp"
#include "nds/lab/lab.hpp"

namespace fs = std::filesystem;
using namespace nds;
using nlohmann::json;

namespace {

struct Options {
    std::uint64_t seed = 0;
    std::string fixture_dir;
    std::string results = "results";
    std::string out = "fixture";
    std::size_t k = 5;
    std::vector<double> budgets{0.2};
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    double temperature = 0.1;
    experts::TrainConfig train;
};

void write_file(const fs::path& path, std::string_view text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error(ErrorCode::io, fmt::format("cannot write {}", path.string()));
}

// Keeps results/manifest.json listing the configuration behind every output.
void record_run(const fs::path& results, const std::string& name, const json& config, const std::vector<std::string>& files) {
    const auto path = results / "manifest.json";
    json manifest = json::object();
    if (fs::exists(path)) {
        std::ifstream in(path);
        manifest = json::parse(in, nullptr, false);
        if (manifest.is_discarded()) manifest = json::object();
    }
    manifest[name] = json{{"config", config}, {"files", files}};
    write_file(path, manifest.dump(2));
}

lab::Fixture load_or_make(const Options& o) {
    lab::FixtureOptions fo;
    fo.seed = o.seed;
    if (o.fixture_dir.empty()) return lab::make_fixture(fo);
    lab::Fixture f;
    f.options = fo;
    f.source = load_manifest(fs::path(o.fixture_dir) / "source.jsonl");
    f.target = load_manifest(fs::path(o.fixture_dir) / "target.jsonl");
    f.test = load_manifest(fs::path(o.fixture_dir) / "test.jsonl");
    return f;
}

lab::Index index_for(const Options& o, const lab::Fixture& f) {
    gating::GatingConfig g;
    g.k = o.k;
    g.seed = o.seed;
    spdlog::info("building index: {} items, k={}", f.source.items.size(), o.k);
    return lab::build_index(f.source, g, o.train);
}

json base_config(const Options& o) {
    return json{{"seed", o.seed}, {"k", o.k}, {"train_cfg", o.train}, {"fixture", o.fixture_dir.empty() ? "generated" : o.fixture_dir}};
}

int cmd_fixture(const Options& o) {
    lab::FixtureOptions fo;
    fo.seed = o.seed;
    const auto f = lab::make_fixture(fo);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    save_manifest(f.source, dir / "source.jsonl");
    save_manifest(f.target, dir / "target.jsonl");
    save_manifest(f.test, dir / "test.jsonl");
    fmt::print("fixture seed {}: {} source, {} target, {} test items -> {}\n", o.seed, f.source.items.size(), f.target.items.size(),
               f.test.items.size(), dir.string());
    return 0;
}

int cmd_correlate(const Options& o) {
    const auto f = load_or_make(o);
    const auto index = index_for(o, f);
    const auto report = lab::correlation_experiment(f.source, f.target, index, o.seed);
    const fs::path dir(o.results);
    write_file(dir / "correlation.json", lab::to_json(report).dump(2));
    write_file(dir / "correlation.csv", lab::to_csv(report));
    write_file(dir / "correlation.svg", lab::scatter_svg(report));
    record_run(dir, "correlate", base_config(o), {"correlation.json", "correlation.csv", "correlation.svg"});

    fmt::print("{:>6} {:>6} {:>6} {:>8} {:>8} {:>8}\n", "subset", "size", "blob", "z", "eps", "d_A");
    for (const auto& s : report.subsets) {
        fmt::print("{:>6} {:>6} {:>6} {:>8.4f} {:>8.4f} {:>8.4f}\n", s.subset, s.size, s.majority_blob, s.z, s.epsilon, s.d_a);
    }
    if (report.correlation) {
        fmt::print("spearman(z, d_A) = {:.4f}\n", *report.correlation);
    } else {
        fmt::print("spearman(z, d_A) undefined (constant input)\n");
    }
    fmt::print("argmax z = {}, argmin d_A = {}\n", report.argmax_z, report.argmin_d_a);
    return 0;
}

int cmd_compare(const Options& o) {
    const auto f = load_or_make(o);
    const auto index = index_for(o, f);
    lab::DownstreamOptions d;
    d.budgets = o.budgets;
    d.seeds = o.seeds;
    d.temperature = o.temperature;
    const auto results = lab::downstream_compare(f, index, d);
    const fs::path dir(o.results);
    write_file(dir / "compare.json", lab::to_json(results).dump(2));
    write_file(dir / "compare.csv", lab::to_csv(results));
    auto config = base_config(o);
    config["budgets"] = o.budgets;
    config["seeds"] = o.seeds;
    config["temperature"] = o.temperature;
    record_run(dir, "compare", config, {"compare.json", "compare.csv"});

    fmt::print("{:<8} {:>7} {:>5} {:>10} {:>12}\n", "method", "budget", "runs", "accuracy", "target share");
    for (const auto& s : lab::summarize(results)) {
        fmt::print("{:<8} {:>7.2f} {:>5} {:>10.4f} {:>12.4f}\n", lab::to_string(s.method), s.budget, s.runs, s.mean_accuracy,
                   s.mean_target_fraction);
    }
    return 0;
}

int cmd_incremental(const Options& o) {
    lab::IncrementalOptions io;
    io.seed = o.seed;
    io.k = o.k;
    io.train = o.train;
    const fs::path dir(o.results);
    const auto report = lab::incremental_build_check(dir / "incremental-work", io);
    fs::remove_all(dir / "incremental-work");
    write_file(dir / "incremental.json", lab::to_json(report).dump(2));
    record_run(dir, "incremental", base_config(o), {"incremental.json"});
    fmt::print("A blobs identical after build(B): {}\n", report.a_blobs_identical ? "yes" : "no");
    fmt::print("build(B) with |A|={}: {}\n", report.small_a_items, fmt::join(report.small_seconds, " "));
    fmt::print("build(B) with |A|={}: {}\n", report.large_a_items, fmt::join(report.large_seconds, " "));
    fmt::print("ratio of fastest runs: {:.3f}\n", report.ratio);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Validation lab: fixtures, domain confusion, downstream comparisons, incremental builds"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--seed", o.seed, "Fixture, gating and domain split seed")->capture_default_str();
        cmd->add_option("--fixture", o.fixture_dir, "Fixture directory (default: generate from --seed)");
        cmd->add_option("--results", o.results, "Results directory")->capture_default_str();
        cmd->add_option("--k", o.k, "Number of experts")->capture_default_str();
        cmd->add_option("--epochs", o.train.epochs, "Expert training epochs")->capture_default_str();
    };

    auto* fixture = app.add_subcommand("fixture", "Standard fixture");
    fixture->require_subcommand(1);
    auto* generate = fixture->add_subcommand("generate", "Write source, target and test manifests");
    generate->add_option("--seed", o.seed, "Fixture seed")->capture_default_str();
    generate->add_option("--out", o.out, "Output directory")->capture_default_str();

    auto* correlate = app.add_subcommand("correlate", "Proxy accuracy against proxy A-distance per subset");
    add_common(correlate);

    auto* compare = app.add_subcommand("compare", "Downstream accuracy of nds, uniform, full and none");
    add_common(compare);
    compare->add_option("--budgets", o.budgets, "Budget fractions")->delimiter(',')->capture_default_str();
    compare->add_option("--seeds", o.seeds, "Sampling seeds")->delimiter(',')->capture_default_str();
    compare->add_option("--temperature", o.temperature, "Softmax temperature")->capture_default_str();

    auto* incremental = app.add_subcommand("incremental", "Growth check: build(B) leaves A untouched and ignores |A|");
    incremental->add_option("--seed", o.seed, "Fixture seed")->capture_default_str();
    incremental->add_option("--results", o.results, "Results directory")->capture_default_str();
    incremental->add_option("--k", o.k, "Number of experts")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    spdlog::set_default_logger(spdlog::stderr_color_mt("lab"));
    try {
        if (*generate) return cmd_fixture(o);
        if (*correlate) return cmd_correlate(o);
        if (*compare) return cmd_compare(o);
        if (*incremental) return cmd_incremental(o);
    } catch (const Error& e) {
        spdlog::error("{}: {}", to_string(e.code()), e.what());
        return e.code() == ErrorCode::io ? 7 : 5;
    } catch (const std::exception& e) {
        spdlog::error("internal error: {}", e.what());
        return 1;
    }
    return 2;
}
