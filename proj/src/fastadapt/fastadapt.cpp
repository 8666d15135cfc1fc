#include "nds/fastadapt/fastadapt.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <future>
#include <random>
#include <unordered_map>

#include <fmt/format.h>

#include "nds/core/linear_model.hpp"
#include "nds/core/numeric.hpp"
#include "nds/error.hpp"
#include "nds/experts/rotation.hpp"

namespace nds::fastadapt {

using nlohmann::json;
using experts::ExpertKind;
using experts::ExpertModel;

std::string_view to_string(AdaptMode mode) noexcept { return mode == AdaptMode::proxy ? "proxy" : "probe"; }

AdaptMode adapt_mode_from_string(std::string_view name) {
    if (name == "proxy") return AdaptMode::proxy;
    if (name == "probe") return AdaptMode::probe;
    throw Error(ErrorCode::validation, fmt::format("unknown adapt mode '{}' (expected proxy or probe)", name));
}

json to_json(const AccuracyReport& r) {
    json j{{"dataset_ref", r.dataset_ref},
           {"mode", std::string(to_string(r.mode))},
           {"z", r.z},
           {"target_size", r.target_size},
           {"client_nonce", r.client_nonce}};
    if (r.probe) {
        j["probe"] = json{{"epochs", r.probe->epochs},
                          {"learning_rate", r.probe->learning_rate},
                          {"train_fraction", r.probe->split.train_fraction},
                          {"seed", r.probe->split.seed}};
    }
    return j;
}

namespace {

bool non_negative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

[[noreturn]] void schema_fail(const std::string& what) {
    throw Error(ErrorCode::validation, fmt::format("accuracy report rejected: {}", what));
}

bool is_token(const std::string& s, std::size_t max_len) {
    return s.size() <= max_len && std::all_of(s.begin(), s.end(), [](unsigned char c) {
               return std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == ',';
           });
}

}  // namespace

void check_report_schema(const json& j) {
    if (!j.is_object()) schema_fail("not a JSON object");
    static const std::array<std::string_view, 6> kAllowed{"dataset_ref", "mode", "z", "target_size", "client_nonce", "probe"};
    for (const auto& [key, value] : j.items()) {
        if (std::find(kAllowed.begin(), kAllowed.end(), key) == kAllowed.end()) schema_fail(fmt::format("unexpected field '{}'", key));
    }
    if (!j.contains("dataset_ref") || !j["dataset_ref"].is_string() || j["dataset_ref"].get<std::string>().empty() ||
        !is_token(j["dataset_ref"].get<std::string>(), 1024)) {
        schema_fail("dataset_ref must be a non-empty list of dataset ids");
    }
    if (!j.contains("mode") || !j["mode"].is_string()) schema_fail("mode must be \"proxy\" or \"probe\"");
    adapt_mode_from_string(j["mode"].get<std::string>());
    if (!j.contains("z") || !j["z"].is_array() || j["z"].empty()) schema_fail("z must be a non-empty array of accuracies");
    for (const auto& v : j["z"]) {
        if (!v.is_number()) schema_fail("z entries must be numbers");
        const double x = v.get<double>();
        if (!std::isfinite(x) || x < 0.0 || x > 1.0) schema_fail(fmt::format("z entry {} is outside [0, 1]", x));
    }
    if (!j.contains("target_size") || !non_negative_integer(j["target_size"])) schema_fail("target_size must be a non-negative integer");
    if (!j.contains("client_nonce") || !j["client_nonce"].is_string() || !is_token(j["client_nonce"].get<std::string>(), 128)) {
        schema_fail("client_nonce must be a short token");
    }
    if (j.contains("probe")) {
        const auto& p = j["probe"];
        if (!p.is_object()) schema_fail("probe must be an object");
        for (const auto& [key, value] : p.items()) {
            if (key != "epochs" && key != "learning_rate" && key != "train_fraction" && key != "seed") {
                schema_fail(fmt::format("unexpected probe field '{}'", key));
            }
            if (!value.is_number()) schema_fail(fmt::format("probe.{} must be a number", key));
        }
    }
}

AccuracyReport report_from_json(const json& j) {
    check_report_schema(j);
    AccuracyReport r;
    r.dataset_ref = j["dataset_ref"].get<std::string>();
    r.mode = adapt_mode_from_string(j["mode"].get<std::string>());
    r.z = j["z"].get<std::vector<double>>();
    r.target_size = j["target_size"].get<std::uint64_t>();
    r.client_nonce = j["client_nonce"].get<std::string>();
    if (j.contains("probe")) {
        const auto& p = j["probe"];
        ProbeConfig cfg;
        cfg.epochs = p.value("epochs", cfg.epochs);
        cfg.learning_rate = p.value("learning_rate", cfg.learning_rate);
        cfg.split.train_fraction = p.value("train_fraction", cfg.split.train_fraction);
        cfg.split.seed = p.value("seed", cfg.split.seed);
        r.probe = cfg;
    }
    return r;
}

std::string make_nonce() {
    std::random_device rd;
    std::uniform_int_distribution<std::uint32_t> dist;
    std::string out;
    for (int i = 0; i < 4; ++i) out += fmt::format("{:08x}", dist(rd));
    return out;
}

double proxy_accuracy(const ExpertModel& expert, const DatasetManifest& target) {
    if (expert.kind != ExpertKind::rotation) {
        throw Error(ErrorCode::kind_mismatch, "proxy accuracy needs a rotation expert");
    }
    if (target.items.empty()) throw Error(ErrorCode::validation, "target dataset is empty");
    const auto params = expert.params();
    const auto shape = expert.shape();
    std::vector<double> hidden(shape.hidden), probs(shape.outputs);
    std::size_t correct = 0;
    for (const auto& item : target.items) {
        for (const auto& inst : experts::rotation_instances(item)) {
            if (inst.input.size() != expert.d_in) {
                throw Error(ErrorCode::dimension_mismatch,
                            fmt::format("target item '{}' yields {} inputs, expert expects {}", item.id, inst.input.size(), expert.d_in));
            }
            experts::mlp_forward(shape, params, inst.input, hidden, probs);
            softmax_inplace(probs);
            if (argmax(probs) == static_cast<std::size_t>(inst.j)) ++correct;
        }
    }
    return static_cast<double>(correct) / (4.0 * static_cast<double>(target.items.size()));
}

double linear_probe(const ExpertModel& expert, const DatasetManifest& target, const ProbeConfig& cfg) {
    if (!target.all_labeled()) throw Error(ErrorCode::missing_labels, "linear probe needs a fully labeled target");
    const auto sides = split(target, cfg.split);
    const auto labels = target.label_indices();

    std::unordered_map<std::string_view, std::size_t> position;
    for (std::size_t i = 0; i < target.items.size(); ++i) position.emplace(target.items[i].id, i);

    const auto params = expert.params();
    const auto shape = expert.shape();
    std::vector<double> hidden(shape.hidden), logits(shape.outputs);
    auto representation = [&](const std::vector<std::string>& ids, Matrix& out, std::vector<std::size_t>& y) {
        out = Matrix(ids.size(), shape.hidden);
        y.clear();
        for (std::size_t r = 0; r < ids.size(); ++r) {
            const auto& item = target.items[position.at(ids[r])];
            const auto input = experts::expert_input(expert, item);
            if (input.size() != expert.d_in) {
                throw Error(ErrorCode::dimension_mismatch,
                            fmt::format("target item '{}' yields {} inputs, expert expects {}", item.id, input.size(), expert.d_in));
            }
            experts::mlp_forward(shape, params, input, hidden, logits);
            std::copy(hidden.begin(), hidden.end(), out.row(r).begin());
            y.push_back(labels[position.at(ids[r])]);
        }
    };
    Matrix train_x, val_x;
    std::vector<std::size_t> train_y, val_y;
    representation(sides.train, train_x, train_y);
    representation(sides.val, val_x, val_y);

    SoftmaxRegression head;
    head.fit(train_x, train_y, target.label_set.size(), {cfg.epochs, cfg.learning_rate, 0.0, false});
    std::size_t correct = 0;
    for (std::size_t r = 0; r < val_x.rows(); ++r) correct += head.predict(val_x.row(r)) == val_y[r] ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(val_x.rows());
}

AccuracyReport fast_adapt(std::span<const ExpertModel> bundle, const DatasetManifest& target, AdaptMode mode,
                          const ProbeConfig& cfg, std::string dataset_ref) {
    if (bundle.empty()) throw Error(ErrorCode::validation, "expert bundle is empty");
    if (mode == AdaptMode::proxy) {
        for (std::size_t i = 0; i < bundle.size(); ++i) {
            if (bundle[i].kind != ExpertKind::rotation) {
                throw Error(ErrorCode::kind_mismatch, fmt::format("expert {} is {}, proxy mode needs rotation experts", i,
                                                                  experts::to_string(bundle[i].kind)));
            }
        }
    }

    std::vector<std::future<double>> jobs;
    jobs.reserve(bundle.size());
    for (const auto& expert : bundle) {
        jobs.push_back(std::async(std::launch::async, [&expert, &target, &cfg, mode] {
            return mode == AdaptMode::proxy ? proxy_accuracy(expert, target) : linear_probe(expert, target, cfg);
        }));
    }
    AccuracyReport report;
    report.dataset_ref = std::move(dataset_ref);
    report.mode = mode;
    report.target_size = target.items.size();
    report.client_nonce = make_nonce();
    if (mode == AdaptMode::probe) report.probe = cfg;
    std::optional<Error> first_error;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        try {
            report.z.push_back(jobs[i].get());
        } catch (const Error& e) {
            if (!first_error) first_error = Error(e.code(), fmt::format("expert {}: {}", i, e.what()), e.detail());
        }
    }
    if (first_error) throw *first_error;
    return report;
}

}  // namespace nds::fastadapt
