#include "nds/selection/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "nds/core/random.hpp"
#include "nds/error.hpp"

namespace nds::selection {

using nlohmann::json;

std::vector<double> normalize_scores(std::span<const double> z) {
    if (z.empty()) throw Error(ErrorCode::validation, "need at least one score");
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (!std::isfinite(z[i])) throw Error(ErrorCode::non_finite_input, fmt::format("score {} is not finite", i));
    }
    const auto [lo, hi] = std::minmax_element(z.begin(), z.end());
    std::vector<double> out(z.size(), 0.5);
    if (*hi == *lo) return out;
    const double range = *hi - *lo;
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = (z[i] - *lo) / range;
    return out;
}

WeightVector softmax_weights(std::span<const double> z_norm, double temperature) {
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw Error(ErrorCode::non_positive_temperature, fmt::format("temperature must be positive, got {}", temperature));
    }
    if (z_norm.empty()) throw Error(ErrorCode::validation, "need at least one score");
    WeightVector out;
    out.temperature = temperature;
    const double top = *std::max_element(z_norm.begin(), z_norm.end());
    out.w.resize(z_norm.size());
    double total = 0.0;
    for (std::size_t i = 0; i < z_norm.size(); ++i) {
        if (!std::isfinite(z_norm[i])) throw Error(ErrorCode::non_finite_input, fmt::format("score {} is not finite", i));
        out.w[i] = std::exp((z_norm[i] - top) / temperature);
        total += out.w[i];
    }
    for (auto& w : out.w) w /= total;
    return out;
}

WeightVector compute_weights(std::span<const double> z, double temperature) {
    auto out = softmax_weights(normalize_scores(z), temperature);
    const auto [lo, hi] = std::minmax_element(z.begin(), z.end());
    out.z_min = *lo;
    out.z_max = *hi;
    return out;
}

std::vector<double> item_probabilities(const WeightVector& weights, const gating::GatingView& gating) {
    if (weights.w.size() != gating.sizes.size()) {
        throw Error(ErrorCode::length_mismatch,
                    fmt::format("got {} weights for {} experts", weights.w.size(), gating.sizes.size()));
    }
    std::vector<double> share(weights.w.size(), 0.0);
    for (std::size_t i = 0; i < share.size(); ++i) {
        if (gating.sizes[i] == 0) throw Error(ErrorCode::validation, fmt::format("subset {} is empty", i));
        share[i] = weights.w[i] / static_cast<double>(gating.sizes[i]);
    }
    std::vector<double> pi(gating.assignment.size());
    for (std::size_t x = 0; x < pi.size(); ++x) {
        const auto e = gating.assignment[x];
        if (e >= share.size()) throw Error(ErrorCode::validation, fmt::format("item {} gated to unknown expert {}", x, e));
        pi[x] = share[e];
    }
    return pi;
}

Sample sample_budget(std::span<const double> pi, std::size_t budget, std::uint64_t seed) {
    if (pi.empty()) throw Error(ErrorCode::empty_source, "nothing to sample from");
    if (budget == 0) throw Error(ErrorCode::invalid_budget, "budget must be at least 1");

    Rng rng = make_rng(seed, 0x73616d70ULL);
    std::vector<std::pair<double, std::size_t>> keyed;
    std::vector<std::size_t> zero;
    for (std::size_t x = 0; x < pi.size(); ++x) {
        const double u = uniform_open01(rng);
        if (!(pi[x] >= 0.0) || !std::isfinite(pi[x])) {
            throw Error(ErrorCode::non_finite_input, fmt::format("item {} has invalid probability {}", x, pi[x]));
        }
        if (pi[x] > 0.0) {
            keyed.emplace_back(std::log(u) / pi[x], x);
        } else {
            zero.push_back(x);
        }
    }
    const std::size_t take = std::min(budget, pi.size());
    const std::size_t weighted = std::min(take, keyed.size());
    auto better = [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); };
    std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(weighted), keyed.end(), better);

    Sample out;
    out.indices.reserve(take);
    for (std::size_t i = 0; i < weighted; ++i) out.indices.push_back(keyed[i].second);
    for (std::size_t i = 0; out.indices.size() < take; ++i) {
        out.indices.push_back(zero[i]);
        out.padded = true;
    }
    return out;
}

void CandidatePool::append(const std::string& dataset_id, const DatasetManifest& manifest, const gating::Partition& partition) {
    if (partition.total_items() != manifest.items.size()) {
        throw Error(ErrorCode::corrupt_store, fmt::format("partition of '{}' does not cover its manifest", dataset_id));
    }
    const auto offset = static_cast<std::uint32_t>(sizes.size());
    for (std::size_t x = 0; x < manifest.items.size(); ++x) {
        const auto& item = manifest.items[x];
        if (partition.item_ids()[x] != item.id) {
            throw Error(ErrorCode::corrupt_store, fmt::format("partition of '{}' is out of step with its manifest", dataset_id));
        }
        ids.push_back(item.id);
        urls.push_back(item.url);
        bytes.push_back(item.size_bytes);
        assignment.push_back(offset + partition.assignment()[x]);
    }
    for (auto s : partition.sizes()) {
        sizes.push_back(s);
        expert_dataset.push_back(dataset_id);
    }
}

Recommendation recommend(const CandidatePool& pool, std::span<const double> z, const RecommendOptions& options) {
    if (pool.ids.empty()) throw Error(ErrorCode::empty_source, "no source items behind this bundle");
    if (z.size() != pool.sizes.size()) {
        throw Error(ErrorCode::length_mismatch,
                    fmt::format("report has {} accuracies but the bundle has {} experts", z.size(), pool.sizes.size()));
    }
    if (options.budget == 0) throw Error(ErrorCode::invalid_budget, "budget must be at least 1");
    if (options.budget_bytes && *options.budget_bytes == 0) throw Error(ErrorCode::invalid_budget, "byte budget must be positive");

    const auto weights = compute_weights(z, options.temperature);
    const auto pi = item_probabilities(weights, pool.view());
    const auto sample = sample_budget(pi, options.budget, options.seed);

    Recommendation rec;
    rec.dataset_ref = pool.dataset_ref;
    rec.budget = options.budget;
    rec.budget_bytes = options.budget_bytes;
    rec.seed = options.seed;
    rec.temperature = options.temperature;
    rec.padded = sample.padded;
    rec.z_min = weights.z_min;
    rec.z_max = weights.z_max;
    std::uint64_t used = 0;
    for (auto x : sample.indices) {
        if (options.budget_bytes) {
            if (!pool.bytes[x]) {
                throw Error(ErrorCode::invalid_budget, fmt::format("item '{}' has no size hint, byte budgets need one", pool.ids[x]));
            }
            if (used + *pool.bytes[x] > *options.budget_bytes) {
                rec.byte_capped = true;
                break;
            }
            used += *pool.bytes[x];
        }
        rec.items.push_back({pool.ids[x], pool.urls[x]});
    }
    for (std::size_t i = 0; i < weights.w.size(); ++i) {
        rec.weights.push_back({i, weights.w[i], pool.sizes[i], pool.expert_dataset.at(i)});
    }
    return rec;
}

json to_json(const Recommendation& rec) {
    json items = json::array();
    for (const auto& it : rec.items) items.push_back({{"id", it.id}, {"url", it.url}});
    json weights = json::array();
    for (const auto& w : rec.weights) {
        weights.push_back({{"expert", w.expert}, {"w", w.w}, {"size", w.size}, {"dataset_id", w.dataset_id}});
    }
    json j{{"dataset_ref", rec.dataset_ref},
           {"budget", rec.budget},
           {"seed", rec.seed},
           {"temperature", rec.temperature},
           {"flags", {{"padded", rec.padded}, {"byte_capped", rec.byte_capped}}},
           {"items", std::move(items)},
           {"weights", std::move(weights)},
           {"z_min", rec.z_min},
           {"z_max", rec.z_max}};
    if (rec.budget_bytes) j["budget_bytes"] = *rec.budget_bytes;
    return j;
}

Recommendation recommendation_from_json(const json& j) {
    try {
        Recommendation rec;
        rec.dataset_ref = j.at("dataset_ref").get<std::string>();
        rec.budget = j.at("budget").get<std::size_t>();
        if (j.contains("budget_bytes")) rec.budget_bytes = j["budget_bytes"].get<std::uint64_t>();
        rec.seed = j.at("seed").get<std::uint64_t>();
        rec.temperature = j.at("temperature").get<double>();
        rec.padded = j.at("flags").at("padded").get<bool>();
        rec.byte_capped = j.at("flags").value("byte_capped", false);
        for (const auto& it : j.at("items")) rec.items.push_back({it.at("id").get<std::string>(), it.at("url").get<std::string>()});
        for (const auto& w : j.at("weights")) {
            rec.weights.push_back({w.at("expert").get<std::size_t>(), w.at("w").get<double>(), w.at("size").get<std::size_t>(),
                                   w.value("dataset_id", std::string{})});
        }
        rec.z_min = j.at("z_min").get<double>();
        rec.z_max = j.at("z_max").get<double>();
        return rec;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::parse_error, fmt::format("malformed recommendation: {}", e.what()));
    }
}

std::string url_list(const Recommendation& rec) {
    std::string out;
    for (const auto& it : rec.items) {
        out += it.url;
        out += '\n';
    }
    return out;
}

}  // namespace nds::selection
