#include "nds/lab/lab.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "nds/core/linear_model.hpp"
#include "nds/core/split.hpp"
#include "nds/error.hpp"
#include "nds/selection/selection.hpp"
#include "nds/server/registry.hpp"

namespace nds::lab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> ids_of(std::span<const Item* const> items) {
    std::vector<std::string> ids;
    ids.reserve(items.size());
    for (const auto* item : items) ids.push_back(item->id);
    return ids;
}

// Halves of a domain, by the seeded id split.
std::pair<std::vector<const Item*>, std::vector<const Item*>> halves(std::span<const Item* const> items, std::uint64_t seed) {
    const auto sides = split(ids_of(items), SplitSpec{0.5, seed});
    std::map<std::string_view, const Item*> by_id;
    for (const auto* item : items) by_id.emplace(item->id, item);
    std::pair<std::vector<const Item*>, std::vector<const Item*>> out;
    for (const auto& id : sides.train) out.first.push_back(by_id.at(id));
    for (const auto& id : sides.val) out.second.push_back(by_id.at(id));
    return out;
}

std::vector<double> average_ranks(std::span<const double> v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double rank = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = rank;
        i = j + 1;
    }
    return ranks;
}

std::vector<const Item*> pointers(const DatasetManifest& m) {
    std::vector<const Item*> out;
    out.reserve(m.items.size());
    for (const auto& item : m.items) out.push_back(&item);
    return out;
}

}  // namespace

DomainDistance proxy_a_distance(std::span<const Item* const> subset, std::span<const Item* const> target, std::uint64_t seed) {
    if (subset.size() < 2 || target.size() < 2) throw Error(ErrorCode::too_few_items, "each domain needs at least two items");
    const auto dim = subset.front()->features.size();
    for (auto side : {subset, target}) {
        for (const auto* item : side) {
            if (item->features.size() != dim) {
                throw Error(ErrorCode::dimension_mismatch, fmt::format("item '{}' has {} features, expected {}", item->id, item->features.size(), dim));
            }
        }
    }
    const auto [s_train, s_test] = halves(subset, seed);
    const auto [t_train, t_test] = halves(target, seed ^ 0x7461726765740000ULL);

    Matrix train;
    std::vector<std::size_t> y;
    for (const auto* item : s_train) {
        train.append_row(item->features);
        y.push_back(0);
    }
    for (const auto* item : t_train) {
        train.append_row(item->features);
        y.push_back(1);
    }
    Standardizer scale;
    scale.fit(train);
    SoftmaxRegression clf;
    clf.fit(scale.transform(train), y, 2, {300, 0.5, 0.0, true});

    auto error_on = [&](const std::vector<const Item*>& items, std::size_t domain) {
        Matrix m;
        for (const auto* item : items) m.append_row(item->features);
        const auto z = scale.transform(m);
        std::size_t wrong = 0;
        for (std::size_t r = 0; r < z.rows(); ++r) wrong += clf.predict(z.row(r)) != domain ? 1 : 0;
        return static_cast<double>(wrong) / static_cast<double>(items.size());
    };
    DomainDistance out;
    out.epsilon = 0.5 * (error_on(s_test, 0) + error_on(t_test, 1));
    out.d_a = 2.0 * (1.0 - 2.0 * out.epsilon);
    return out;
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error(ErrorCode::length_mismatch, "rank correlation needs equal lengths");
    if (a.size() < 2) return std::nullopt;
    const auto ra = average_ranks(a);
    const auto rb = average_ranks(b);
    const double mean = (static_cast<double>(a.size()) + 1.0) / 2.0;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - mean) * (rb[i] - mean);
        va += (ra[i] - mean) * (ra[i] - mean);
        vb += (rb[i] - mean) * (rb[i] - mean);
    }
    if (va == 0.0 || vb == 0.0) return std::nullopt;
    return cov / std::sqrt(va * vb);
}

Index build_index(const DatasetManifest& source, const gating::GatingConfig& gating, const experts::TrainConfig& train,
                  experts::ExpertKind kind) {
    Index index{gating::build_partition(source, gating), {}};
    index.experts = server::train_experts(source, index.partition, train, kind);
    return index;
}

ConfusionReport correlation_experiment(const DatasetManifest& source, const DatasetManifest& target, const Index& index,
                                       std::uint64_t seed) {
    ConfusionReport report;
    const auto target_items = pointers(target);
    std::vector<double> z, d;
    for (std::size_t i = 0; i < index.partition.k(); ++i) {
        std::vector<const Item*> members;
        std::map<std::size_t, std::size_t> blobs;
        for (auto pos : index.partition.members(i)) {
            members.push_back(&source.items[pos]);
            ++blobs[blob_of(source.items[pos].id)];
        }
        SubsetScore s;
        s.subset = i;
        s.size = members.size();
        s.majority_blob = std::max_element(blobs.begin(), blobs.end(), [](auto a, auto b) { return a.second < b.second; })->first;
        s.z = fastadapt::proxy_accuracy(index.experts[i], target);
        const auto dist = proxy_a_distance(members, target_items, seed + i);
        s.epsilon = dist.epsilon;
        s.d_a = dist.d_a;
        z.push_back(s.z);
        d.push_back(s.d_a);
        report.subsets.push_back(s);
    }
    report.correlation = spearman(z, d);
    report.argmax_z = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
    report.argmin_d_a = static_cast<std::size_t>(std::min_element(d.begin(), d.end()) - d.begin());
    return report;
}

std::string_view to_string(Method method) noexcept {
    switch (method) {
        case Method::nds: return "nds";
        case Method::uniform: return "uniform";
        case Method::full: return "full";
        case Method::none: return "none";
    }
    return "unknown";
}

double downstream_accuracy(std::span<const Item* const> selected, const DatasetManifest& target, const DatasetManifest& test,
                           const DownstreamOptions& options) {
    Matrix train;
    std::vector<std::size_t> y;
    auto add = [&](const Item& item) {
        if (!item.label) throw Error(ErrorCode::missing_labels, fmt::format("item '{}' has no label", item.id));
        train.append_row(item.features);
        y.push_back(target.label_index(*item.label));
    };
    for (const auto* item : selected) add(*item);
    for (const auto& item : target.items) add(item);
    Standardizer scale;
    scale.fit(train);
    SoftmaxRegression h;
    h.fit(scale.transform(train), y, target.label_set.size(), {options.iterations, options.learning_rate, 0.0, false});

    Matrix eval;
    for (const auto& item : test.items) eval.append_row(item.features);
    const auto z = scale.transform(eval);
    std::size_t correct = 0;
    for (std::size_t r = 0; r < z.rows(); ++r) correct += h.predict(z.row(r)) == target.label_index(*test.items[r].label) ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(test.items.size());
}

std::vector<DownstreamResult> downstream_compare(const Fixture& fixture, const Index& index, const DownstreamOptions& options) {
    const auto& source = fixture.source;
    const auto report = fastadapt::fast_adapt(index.experts, fixture.target, fastadapt::AdaptMode::proxy, {}, source.name);
    selection::CandidatePool pool;
    pool.dataset_ref = source.name;
    pool.append(source.name, source, index.partition);
    std::map<std::string_view, const Item*> by_id;
    for (const auto& item : source.items) by_id.emplace(item.id, &item);
    const std::vector<double> uniform(source.items.size(), 1.0 / static_cast<double>(source.items.size()));

    auto target_fraction = [&](const std::vector<const Item*>& items) {
        if (items.empty()) return 0.0;
        std::size_t hits = 0;
        for (const auto* item : items) hits += blob_of(item->id) == fixture.options.target_blob ? 1 : 0;
        return static_cast<double>(hits) / static_cast<double>(items.size());
    };

    std::vector<DownstreamResult> results;
    for (double fraction : options.budgets) {
        const auto budget = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(source.items.size()))));
        for (auto seed : options.seeds) {
            selection::RecommendOptions ro;
            ro.budget = budget;
            ro.temperature = options.temperature;
            ro.seed = seed;
            const auto rec = selection::recommend(pool, report.z, ro);
            std::vector<const Item*> picked;
            for (const auto& it : rec.items) picked.push_back(by_id.at(it.id));
            results.push_back({Method::nds, fraction, seed, downstream_accuracy(picked, fixture.target, fixture.test, options),
                               target_fraction(picked)});

            const auto sample = selection::sample_budget(uniform, budget, seed);
            std::vector<const Item*> random;
            for (auto x : sample.indices) random.push_back(&source.items[x]);
            results.push_back({Method::uniform, fraction, seed, downstream_accuracy(random, fixture.target, fixture.test, options),
                               target_fraction(random)});
        }
    }
    const auto all = pointers(source);
    results.push_back({Method::full, 1.0, 0, downstream_accuracy(all, fixture.target, fixture.test, options), target_fraction(all)});
    results.push_back({Method::none, 0.0, 0, downstream_accuracy({}, fixture.target, fixture.test, options), 0.0});
    return results;
}

std::vector<ArmSummary> summarize(const std::vector<DownstreamResult>& results) {
    std::vector<ArmSummary> out;
    for (const auto& r : results) {
        auto it = std::find_if(out.begin(), out.end(), [&](const ArmSummary& s) { return s.method == r.method && s.budget == r.budget; });
        if (it == out.end()) {
            out.push_back({r.method, r.budget, 0.0, 0.0, 0});
            it = std::prev(out.end());
        }
        it->mean_accuracy += r.accuracy;
        it->mean_target_fraction += r.target_blob_fraction;
        ++it->runs;
    }
    for (auto& s : out) {
        s.mean_accuracy /= static_cast<double>(s.runs);
        s.mean_target_fraction /= static_cast<double>(s.runs);
    }
    return out;
}

namespace {

std::vector<std::vector<std::uint8_t>> read_blobs(const fs::path& dir, std::size_t k) {
    std::vector<std::vector<std::uint8_t>> out;
    for (std::size_t i = 0; i < k; ++i) {
        std::ifstream in(dir / fmt::format("expert_{}.bin", i), std::ios::binary);
        out.emplace_back(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    return out;
}

// Builds A once, then times build(B) in `repeats` fresh copies of that store.
std::vector<double> time_growth(const fs::path& base, const DatasetManifest& a, const DatasetManifest& b,
                                const IncrementalOptions& o, bool& identical) {
    const server::BuildRequest request{gating::GatingConfig{o.k, gating::Scheme::unsupervised, o.seed, 100, 1e-6, 10}, o.train,
                                       experts::ExpertKind::rotation};
    fs::remove_all(base);
    {
        server::Registry reg(base / "seed");
        reg.register_dataset(a);
        reg.build(a.name, request, true);
    }
    const auto a_dir = base / "seed" / "datasets" / a.name;
    const auto before = read_blobs(a_dir, o.k);
    std::vector<double> seconds;
    for (std::size_t r = 0; r < o.repeats; ++r) {
        const auto copy = base / fmt::format("run{}", r);
        fs::copy(base / "seed", copy, fs::copy_options::recursive);
        server::Registry reg(copy);
        reg.register_dataset(b);
        const auto rec = reg.build(b.name, request, true);
        seconds.push_back(rec.build_seconds);
        identical = identical && read_blobs(copy / "datasets" / a.name, o.k) == before;
    }
    return seconds;
}

}  // namespace

IncrementalReport incremental_build_check(const fs::path& work_dir, const IncrementalOptions& o) {
    if (o.repeats == 0 || o.scale < 2) throw Error(ErrorCode::validation, "incremental check needs repeats >= 1 and scale >= 2");
    FixtureOptions fa;
    fa.seed = o.seed;
    fa.source_name = "A";
    fa.per_blob = std::max<std::size_t>(1, o.a_small / fa.blobs);
    const auto a_small = make_source(fa);
    fa.per_blob *= o.scale;
    const auto a_large = make_source(fa);
    FixtureOptions fb;
    fb.seed = o.seed + 1;
    fb.source_name = "B";
    fb.per_blob = std::max<std::size_t>(1, o.b_items / fb.blobs);
    const auto b = make_source(fb);

    IncrementalReport report;
    report.small_a_items = a_small.items.size();
    report.large_a_items = a_large.items.size();
    report.b_items = b.items.size();
    report.a_blobs_identical = true;
    report.small_seconds = time_growth(work_dir / "small", a_small, b, o, report.a_blobs_identical);
    report.large_seconds = time_growth(work_dir / "large", a_large, b, o, report.a_blobs_identical);
    const double small = *std::min_element(report.small_seconds.begin(), report.small_seconds.end());
    const double large = *std::min_element(report.large_seconds.begin(), report.large_seconds.end());
    report.ratio = std::max(small, large) / std::min(small, large);
    return report;
}

json to_json(const ConfusionReport& report) {
    json subsets = json::array();
    for (const auto& s : report.subsets) {
        subsets.push_back({{"subset", s.subset}, {"size", s.size}, {"majority_blob", s.majority_blob}, {"z", s.z},
                           {"epsilon", s.epsilon}, {"d_a", s.d_a}});
    }
    json j{{"subsets", std::move(subsets)}, {"argmax_z", report.argmax_z}, {"argmin_d_a", report.argmin_d_a}};
    if (report.correlation) {
        j["spearman_z_d_a"] = *report.correlation;
        j["spearman_z_neg_d_a"] = -*report.correlation;
        j["correlation_defined"] = true;
    } else {
        j["spearman_z_d_a"] = nullptr;
        j["spearman_z_neg_d_a"] = nullptr;
        j["correlation_defined"] = false;
    }
    return j;
}

json to_json(const std::vector<DownstreamResult>& results) {
    json runs = json::array();
    for (const auto& r : results) {
        runs.push_back({{"method", std::string(to_string(r.method))}, {"budget", r.budget}, {"seed", r.seed},
                        {"accuracy", r.accuracy}, {"target_blob_fraction", r.target_blob_fraction}});
    }
    json arms = json::array();
    for (const auto& s : summarize(results)) {
        arms.push_back({{"method", std::string(to_string(s.method))}, {"budget", s.budget}, {"mean_accuracy", s.mean_accuracy},
                        {"mean_target_blob_fraction", s.mean_target_fraction}, {"runs", s.runs}});
    }
    return json{{"runs", std::move(runs)}, {"summary", std::move(arms)}};
}

json to_json(const IncrementalReport& r) {
    return json{{"a_blobs_identical", r.a_blobs_identical}, {"small_a_items", r.small_a_items}, {"large_a_items", r.large_a_items},
                {"b_items", r.b_items}, {"build_b_seconds_small_a", r.small_seconds}, {"build_b_seconds_large_a", r.large_seconds},
                {"ratio", r.ratio}};
}

std::string to_csv(const ConfusionReport& report) {
    std::string out = "subset,size,majority_blob,z,epsilon,d_a\n";
    for (const auto& s : report.subsets) out += fmt::format("{},{},{},{},{},{}\n", s.subset, s.size, s.majority_blob, s.z, s.epsilon, s.d_a);
    return out;
}

std::string to_csv(const std::vector<DownstreamResult>& results) {
    std::string out = "method,budget,seed,accuracy,target_blob_fraction\n";
    for (const auto& r : results) out += fmt::format("{},{},{},{},{}\n", to_string(r.method), r.budget, r.seed, r.accuracy, r.target_blob_fraction);
    return out;
}

std::string scatter_svg(const ConfusionReport& report) {
    constexpr double W = 480, H = 360, L = 60, R = 20, T = 20, B = 50;
    auto px = [&](double d_a) { return L + (d_a + 2.0) / 4.0 * (W - L - R); };
    auto py = [&](double z) { return H - B - z * (H - T - B); };
    std::string svg = fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="11">)", W, H);
    svg += fmt::format(R"(<rect width="{}" height="{}" fill="white"/>)", W, H);
    svg += fmt::format(R"(<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>)", L, H - B, W - R, H - B);
    svg += fmt::format(R"(<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>)", L, T, L, H - B);
    for (double t : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
        svg += fmt::format(R"(<text x="{}" y="{}" text-anchor="middle">{}</text>)", px(t), H - B + 15, t);
    }
    for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
        svg += fmt::format(R"(<text x="{}" y="{}" text-anchor="end">{}</text>)", L - 6, py(t) + 4, t);
    }
    svg += fmt::format(R"(<text x="{}" y="{}" text-anchor="middle">proxy A-distance</text>)", (L + W - R) / 2, H - 12);
    svg += fmt::format(R"svg(<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">rotation accuracy z</text>)svg", (T + H - B) / 2,
                       (T + H - B) / 2);
    for (const auto& s : report.subsets) {
        svg += fmt::format(R"(<circle cx="{:.1f}" cy="{:.1f}" r="5" fill="steelblue"/>)", px(s.d_a), py(s.z));
        svg += fmt::format(R"(<text x="{:.1f}" y="{:.1f}">S{} (blob {})</text>)", px(s.d_a) + 7, py(s.z) - 6, s.subset, s.majority_blob);
    }
    svg += "</svg>\n";
    return svg;
}

}  // namespace nds::lab
