// One line per acceptance criterion; exit status is non-zero if any fails.

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "json.hpp"
#include "nds/error.hpp"
#include "nds/experts/expert.hpp"
#include "nds/experts/mlp.hpp"
#include "nds/fastadapt/fastadapt.hpp"
#include "nds/lab/lab.hpp"
#include "nds/selection/selection.hpp"
#include "nds/server/api.hpp"

extern char** environ;

namespace fs = std::filesystem;
using namespace nds;
using nlohmann::json;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int g_failures = 0;

void run(const std::string& name, double limit_seconds, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
        out = body();
    } catch (const std::exception& e) {
        out = {false, fmt::format("threw: {}", e.what())};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (limit_seconds > 0 && secs >= limit_seconds) {
        out.pass = false;
        out.detail += fmt::format("; over the {:.0f} s limit", limit_seconds);
    }
    if (!out.pass) ++g_failures;
    fmt::print("{} {}: {} ({:.2f} s)\n", out.pass ? "PASS" : "FAIL", name, out.detail, secs);
    std::fflush(stdout);
}

// ---------------------------------------------------------------------------
// Shared fixture state for the fixture-based criteria.

struct Standard {
    lab::Fixture fixture;
    lab::Index index;
    double build_seconds = 0.0;
};

const Standard& standard() {
    static const Standard s = [] {
        const auto start = std::chrono::steady_clock::now();
        Standard out;
        out.fixture = lab::make_fixture({});
        gating::GatingConfig g;
        g.k = 5;
        out.index = lab::build_index(out.fixture.source, g, {});
        out.build_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        return out;
    }();
    return s;
}

Outcome normalization_chain() {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u;
    double worst_w = 0.0, worst_pi = 0.0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t k = 1 + rng() % 50;
        std::vector<std::size_t> sizes(k, 1);
        std::vector<std::uint32_t> assignment;
        for (std::size_t e = 0; e < k; ++e) assignment.push_back(static_cast<std::uint32_t>(e));
        const std::size_t extra = rng() % 2000;
        for (std::size_t n = 0; n < extra; ++n) {
            const auto e = static_cast<std::uint32_t>(rng() % k);
            assignment.push_back(e);
            ++sizes[e];
        }
        std::shuffle(assignment.begin(), assignment.end(), rng);
        std::vector<double> z(k);
        for (auto& v : z) v = u(rng);
        const auto w = selection::compute_weights(z, 0.01 + 2.0 * u(rng));
        const auto pi = selection::item_probabilities(w, {assignment, sizes});
        worst_w = std::max(worst_w, std::abs(std::accumulate(w.w.begin(), w.w.end(), 0.0) - 1.0));
        worst_pi = std::max(worst_pi, std::abs(std::accumulate(pi.begin(), pi.end(), 0.0) - 1.0));
    }
    return {worst_w <= 1e-9 && worst_pi <= 1e-9,
            fmt::format("1000 instances, max |sum w - 1| = {:.2e}, max |sum pi - 1| = {:.2e}", worst_w, worst_pi)};
}

Outcome softmax_anchor() {
    const auto w = selection::softmax_weights(std::vector<double>{1.0, 0.0}, 0.1);
    const bool anchor = std::abs(w.w[0] - 0.9999546) <= 1e-6 && std::abs(w.w[1] - 0.0000454) <= 1e-6;
    double worst = 0.0;
    for (std::size_t k = 1; k <= 64; ++k) {
        const auto uw = selection::compute_weights(std::vector<double>(k, 0.37), 0.1);
        for (double v : uw.w) worst = std::max(worst, std::abs(v - 1.0 / static_cast<double>(k)));
    }
    return {anchor && worst <= 1e-12,
            fmt::format("w = [{:.7f}, {:.7f}], uniform max deviation {:.1e}", w.w[0], w.w[1], worst)};
}

Outcome sampling_fidelity() {
    const std::vector<double> pi{0.7, 0.1, 0.1, 0.1};
    std::size_t hits = 0;
    for (std::uint64_t seed = 0; seed < 10000; ++seed) hits += selection::sample_budget(pi, 1, seed).indices.at(0) == 0 ? 1 : 0;
    const double freq = static_cast<double>(hits) / 10000.0;
    return {std::abs(freq - 0.7) <= 0.015, fmt::format("item 0 chosen {} / 10000 = {:.4f} (target 0.7 +- 0.015)", hits, freq)};
}

Outcome gradient_check() {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 0.5);
    const experts::MlpShape shape{16, 8, 4};
    Matrix x(20, shape.inputs);
    std::vector<std::size_t> y(20);
    for (std::size_t r = 0; r < 20; ++r) {
        for (auto& v : x.row(r)) v = n(rng);
        y[r] = rng() % 4;
    }
    std::vector<std::size_t> rows(20);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::vector<double> params(shape.param_count());
    for (auto& p : params) p = n(rng);
    const experts::LabeledBatch batch{&x, y, rows};
    std::vector<double> grad;
    experts::mlp_loss_and_gradient(shape, params, batch, grad);
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto plus = params, minus = params;
        plus[i] += h;
        minus[i] -= h;
        const double numeric = (experts::mlp_loss(shape, plus, batch) - experts::mlp_loss(shape, minus, batch)) / (2.0 * h);
        worst = std::max(worst, std::abs(numeric - grad[i]) / std::max({std::abs(numeric), std::abs(grad[i]), 1e-8}));
    }
    return {worst <= 1e-4, fmt::format("{} parameters over 20 instances, max relative error {:.2e}", params.size(), worst)};
}

Outcome rotation_chance() {
    const auto& f = standard().fixture;
    const auto zero = experts::zero_expert(experts::ExpertKind::rotation, 64, 32, 4);
    std::vector<double> z;
    for (const auto* m : {&f.target, &f.test, &f.source}) z.push_back(fastadapt::proxy_accuracy(zero, *m));
    const bool ok = std::all_of(z.begin(), z.end(), [](double v) { return v == 0.25; });
    return {ok, fmt::format("zero expert z on target/test/source = {}", fmt::join(z, ", "))};
}

double blob_share(const selection::Recommendation& rec, std::size_t blob) {
    std::size_t hits = 0;
    for (const auto& item : rec.items) hits += lab::blob_of(item.id) == blob ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(rec.items.size());
}

Outcome relevance_oracle() {
    const auto& s = standard();
    const auto report = fastadapt::fast_adapt(s.index.experts, s.fixture.target, fastadapt::AdaptMode::proxy, {}, "blobs");
    selection::CandidatePool pool;
    pool.dataset_ref = "blobs";
    pool.append("blobs", s.fixture.source, s.index.partition);
    const std::size_t budget = s.fixture.source.items.size() / 5;
    const auto nds_rec = selection::recommend(pool, report.z, {budget, {}, 0.1, 0});
    const auto uniform_rec = selection::recommend(pool, std::vector<double>(report.z.size(), 0.5), {budget, {}, 0.1, 0});
    const double nds_share = blob_share(nds_rec, s.fixture.options.target_blob);
    const double uniform_share = blob_share(uniform_rec, s.fixture.options.target_blob);
    return {nds_share >= 0.70 && std::abs(uniform_share - 0.20) <= 0.04,
            fmt::format("budget {} items: blob-2 share {:.3f} with NDS, {:.3f} uniform; z = [{:.3f}]", budget, nds_share,
                        uniform_share, fmt::join(report.z, ", "))};
}

Outcome correlation() {
    const auto& s = standard();
    const auto report = lab::correlation_experiment(s.fixture.source, s.fixture.target, s.index, 0);
    std::size_t matching = report.subsets.size();
    for (const auto& sub : report.subsets) {
        if (sub.majority_blob == s.fixture.options.target_blob) matching = sub.subset;
    }
    if (!report.correlation) return {false, "rank correlation undefined"};
    const double rho = *report.correlation;
    return {rho <= -0.6 && report.argmax_z == matching,
            fmt::format("spearman(z, d_A) = {:.4f} (spearman(z, -d_A) = {:.4f}); argmax z = subset {}, matching blob subset = {}", rho,
                        -rho, report.argmax_z, matching)};
}

Outcome downstream() {
    const auto& s = standard();
    const auto results = lab::downstream_compare(s.fixture, s.index, {});
    double nds_acc = -1, uniform_acc = -1, full_acc = -1, none_acc = -1;
    for (const auto& arm : lab::summarize(results)) {
        if (arm.method == lab::Method::nds) nds_acc = arm.mean_accuracy;
        if (arm.method == lab::Method::uniform) uniform_acc = arm.mean_accuracy;
        if (arm.method == lab::Method::full) full_acc = arm.mean_accuracy;
        if (arm.method == lab::Method::none) none_acc = arm.mean_accuracy;
    }
    return {nds_acc > uniform_acc && nds_acc >= full_acc - 0.02,
            fmt::format("mean target accuracy over 5 seeds: nds@20% {:.4f}, uniform@20% {:.4f}, full {:.4f} (target only {:.4f})", nds_acc,
                        uniform_acc, full_acc, none_acc)};
}

Outcome incremental(const fs::path& work) {
    const auto report = lab::incremental_build_check(work / "incremental", {});
    fs::remove_all(work / "incremental");
    return {report.a_blobs_identical && report.ratio < 2.0,
            fmt::format("A blobs identical: {}; build(B) fastest {:.3f} s with |A|={} vs {:.3f} s with |A|={}, ratio {:.3f}",
                        report.a_blobs_identical ? "yes" : "no",
                        *std::min_element(report.small_seconds.begin(), report.small_seconds.end()), report.small_a_items,
                        *std::min_element(report.large_seconds.begin(), report.large_seconds.end()), report.large_a_items,
                        report.ratio)};
}

// ---------------------------------------------------------------------------
// Protocol and crash recovery drive the real binaries.

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

class ServerProcess {
public:
    ServerProcess(const fs::path& root, const fs::path& log, const fs::path& work) {
        port_file_ = work / "port";
        fs::remove(port_file_);
        const std::vector<std::string> args{NDS_SERVER_BIN, "--root", root.string(), "--port", "0", "--port-file", port_file_.string(),
                                            "--request-log", log.string()};
        std::vector<char*> argv;
        for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
        argv.push_back(nullptr);
        posix_spawn_file_actions_t actions;
        posix_spawn_file_actions_init(&actions);
        const auto err = (work / "server.log").string();
        posix_spawn_file_actions_addopen(&actions, 2, err.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
        posix_spawn_file_actions_addopen(&actions, 1, "/dev/null", O_WRONLY, 0);
        const int rc = posix_spawn(&pid_, NDS_SERVER_BIN, &actions, nullptr, argv.data(), environ);
        posix_spawn_file_actions_destroy(&actions);
        if (rc != 0) throw Error(ErrorCode::internal, "cannot start the server binary");
        for (int i = 0; i < 200; ++i) {
            const auto text = slurp(port_file_);
            if (!text.empty() && text.back() == '\n') {
                port_ = std::stoi(text);
                return;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
        }
        kill_hard();
        throw Error(ErrorCode::internal, "server did not report its port");
    }
    ~ServerProcess() {
        if (pid_ > 0) {
            ::kill(pid_, SIGTERM);
            int status = 0;
            ::waitpid(pid_, &status, 0);
        }
    }
    void kill_hard() {
        if (pid_ <= 0) return;
        ::kill(pid_, SIGKILL);
        int status = 0;
        ::waitpid(pid_, &status, 0);
        pid_ = -1;
    }
    std::string url() const { return fmt::format("http://127.0.0.1:{}", port_); }

private:
    fs::path port_file_;
    pid_t pid_ = -1;
    int port_ = 0;
};

int cli(const fs::path& work, const std::string& args) {
    const auto cmd = fmt::format("'{}' {} >>'{}' 2>&1", NDS_CLI_BIN, args, (work / "cli.log").string());
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct Protocol {
    fs::path work;
    fs::path root;
    fs::path log;
    bool ran = false;
    std::vector<std::string> steps;
    bool all_zero = true;
    bool deterministic = false;
    std::vector<std::string> log_problems;
    bool recovery_identical = false;
    std::string recovery_detail;
};

Protocol& protocol(const fs::path& base) {
    static Protocol p;
    if (p.ran) return p;
    p.ran = true;
    p.work = base / "protocol";
    fs::remove_all(p.work);
    fs::create_directories(p.work);
    p.root = p.work / "store";
    p.log = p.work / "requests.jsonl";
    const auto& f = standard().fixture;
    save_manifest(f.source, p.work / "source.jsonl");
    save_manifest(f.target, p.work / "target.jsonl");
    const auto w = p.work.string();

    auto step = [&](const std::string& name, const std::string& url, const std::string& args) {
        const int rc = cli(p.work, fmt::format("{} --server {} {}", name, url, args));
        p.steps.push_back(fmt::format("{}={}", name, rc));
        if (rc != 0) p.all_zero = false;
        return rc == 0;
    };
    {
        ServerProcess server(p.root, p.log, p.work);
        const auto url = server.url();
        step("register", url, fmt::format("--manifest '{}/source.jsonl'", w)) &&
            step("build", url, "--dataset blobs --k 5 --gating-seed 0") &&
            step("fetch", url, fmt::format("--datasets blobs --out '{}/bundle'", w)) &&
            [&] {
                const int rc = cli(p.work, fmt::format("adapt --bundle '{0}/bundle' --target '{0}/target.jsonl' --out '{0}/report.json'", w));
                p.steps.push_back(fmt::format("adapt={}", rc));
                if (rc != 0) p.all_zero = false;
                return rc == 0;
            }() &&
            step("recommend", url, fmt::format("--report '{0}/report.json' --budget 1000 --seed 7 --out '{0}/rec1'", w)) &&
            step("recommend", url, fmt::format("--report '{0}/report.json' --budget 1000 --seed 7 --out '{0}/rec2'", w));
        p.deterministic = p.all_zero && slurp(p.work / "rec1/recommendation.json") == slurp(p.work / "rec2/recommendation.json") &&
                          !slurp(p.work / "rec1/urls.txt").empty();
        server.kill_hard();
    }
    {
        ServerProcess restarted(p.root, p.log, p.work);
        const bool ok = step("recommend", restarted.url(), fmt::format("--report '{0}/report.json' --budget 1000 --seed 7 --out '{0}/rec3'", w));
        const auto before = slurp(p.work / "rec1/recommendation.json");
        p.recovery_identical = ok && !before.empty() && before == slurp(p.work / "rec3/recommendation.json");
        p.recovery_detail = fmt::format("server killed with SIGKILL after build, restarted on the same store; recommend exit {}, "
                                        "recommendation.json {}",
                                        ok ? 0 : 1, p.recovery_identical ? "byte-identical" : "differs");
    }

    // Nothing derived from the target may reach the server.
    std::set<std::string> target_ids;
    for (const auto& item : f.target.items) target_ids.insert(item.id);
    std::ifstream in(p.log);
    std::string line;
    std::size_t recommendation_posts = 0;
    while (std::getline(in, line)) {
        for (const auto& id : target_ids) {
            if (line.find("\"" + id + "\"") != std::string::npos) p.log_problems.push_back("target id " + id);
        }
        const auto entry = json::parse(line);
        if (entry["path"] == "/v1/recommendations") {
            ++recommendation_posts;
            try {
                server::recommend_request_from_json(entry["body"]);
                if (entry["body"]["report"]["z"].size() != 5) p.log_problems.push_back("report z is not K floats");
            } catch (const std::exception& e) {
                p.log_problems.push_back(fmt::format("schema: {}", e.what()));
            }
        }
        if (entry["body"].is_object() && entry["path"] != "/v1/datasets" && entry["body"].dump().find("features") != std::string::npos) {
            p.log_problems.push_back("features in a request body");
        }
    }
    if (recommendation_posts != 3) p.log_problems.push_back(fmt::format("{} recommendation requests logged, expected 3", recommendation_posts));
    return p;
}

Outcome protocol_round_trip(const fs::path& base) {
    const auto& p = protocol(base);
    return {p.all_zero && p.deterministic && p.log_problems.empty(),
            fmt::format("exit codes [{}], same seed gives identical recommendation: {}, request log check: {}", fmt::join(p.steps, " "),
                        p.deterministic ? "yes" : "no", p.log_problems.empty() ? "clean" : fmt::format("{}", fmt::join(p.log_problems, "; ")))};
}

Outcome crash_recovery(const fs::path& base) {
    const auto& p = protocol(base);
    return {p.recovery_identical, p.recovery_detail};
}

}  // namespace

int main(int argc, char** argv) {
    spdlog::set_level(spdlog::level::warn);
    const fs::path base = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / fmt::format("nds-acceptance-{}", ::getpid());
    fs::create_directories(base);

    standard();
    fmt::print("standard fixture and K=5 index built in {:.2f} s\n", standard().build_seconds);

    run("normalization chain", 10, normalization_chain);
    run("softmax anchor", 0, softmax_anchor);
    run("sampling fidelity", 30, sampling_fidelity);
    run("gradient check", 0, gradient_check);
    run("rotation chance level", 0, rotation_chance);
    run("relevance oracle", 120, [] {
        const auto start = std::chrono::steady_clock::now();
        auto out = relevance_oracle();
        const double own = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.detail += fmt::format("; with index build {:.1f} s", own + standard().build_seconds);
        if (own + standard().build_seconds >= 120) out.pass = false;
        return out;
    });
    run("correlation", 120, [] {
        const auto start = std::chrono::steady_clock::now();
        auto out = correlation();
        const double own = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.detail += fmt::format("; with index build {:.1f} s", own + standard().build_seconds);
        if (own + standard().build_seconds >= 120) out.pass = false;
        return out;
    });
    run("downstream ordering", 300, [] {
        const auto start = std::chrono::steady_clock::now();
        auto out = downstream();
        const double own = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        out.detail += fmt::format("; with index build {:.1f} s", own + standard().build_seconds);
        if (own + standard().build_seconds >= 300) out.pass = false;
        return out;
    });
    run("incremental isolation", 0, [&] { return incremental(base); });
    run("protocol round-trip", 0, [&] { return protocol_round_trip(base); });
    run("crash recovery", 0, [&] { return crash_recovery(base); });

    if (g_failures == 0 && argc <= 1) fs::remove_all(base);
    fmt::print("{} of 11 criteria failed\n", g_failures);
    return g_failures == 0 ? 0 : 1;
}
