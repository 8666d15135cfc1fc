#include "nds/experts/expert.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <set>

#include <fmt/format.h>

#include "nds/core/hashing.hpp"
#include "nds/error.hpp"
#include "nds/experts/rotation.hpp"

namespace nds::experts {

using nlohmann::json;

std::string_view to_string(ExpertKind kind) noexcept {
    return kind == ExpertKind::rotation ? "rotation" : "task_specific";
}

ExpertKind expert_kind_from_string(std::string_view name) {
    if (name == "rotation" || name == "self_supervised") return ExpertKind::rotation;
    if (name == "task_specific" || name == "task") return ExpertKind::task_specific;
    throw Error(ErrorCode::validation, fmt::format("unknown expert kind '{}'", name));
}

void to_json(json& j, const TrainConfig& cfg) {
    j = json{{"learning_rate", cfg.learning_rate}, {"epochs", cfg.epochs},
             {"batch_size", cfg.batch_size},       {"seed", cfg.seed},
             {"weight_init_scale", cfg.weight_init_scale}, {"hidden_units", cfg.hidden_units}};
}

void from_json(const json& j, TrainConfig& cfg) {
    TrainConfig d;
    cfg.learning_rate = j.value("learning_rate", d.learning_rate);
    cfg.epochs = j.value("epochs", d.epochs);
    cfg.batch_size = j.value("batch_size", d.batch_size);
    cfg.seed = j.value("seed", d.seed);
    cfg.weight_init_scale = j.value("weight_init_scale", d.weight_init_scale);
    cfg.hidden_units = j.value("hidden_units", d.hidden_units);
    if (!(cfg.learning_rate > 0.0) || cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.weight_init_scale > 0.0) ||
        cfg.hidden_units == 0) {
        throw Error(ErrorCode::validation, "train config values must all be positive");
    }
}

std::vector<double> ExpertModel::params() const {
    const auto s = shape();
    std::vector<double> p(s.param_count());
    std::copy(w1.begin(), w1.end(), p.begin() + static_cast<std::ptrdiff_t>(s.w1_offset()));
    std::copy(b1.begin(), b1.end(), p.begin() + static_cast<std::ptrdiff_t>(s.b1_offset()));
    std::copy(w2.begin(), w2.end(), p.begin() + static_cast<std::ptrdiff_t>(s.w2_offset()));
    std::copy(b2.begin(), b2.end(), p.begin() + static_cast<std::ptrdiff_t>(s.b2_offset()));
    return p;
}

ExpertModel zero_expert(ExpertKind kind, std::uint32_t d_in, std::uint32_t hidden, std::uint32_t n_out) {
    ExpertModel m;
    m.kind = kind;
    m.d_in = d_in;
    m.hidden = hidden;
    m.n_out = n_out;
    m.w1.assign(std::size_t{d_in} * hidden, 0.0f);
    m.b1.assign(hidden, 0.0f);
    m.w2.assign(std::size_t{hidden} * n_out, 0.0f);
    m.b2.assign(n_out, 0.0f);
    return m;
}

namespace {

ExpertModel model_from_params(ExpertKind kind, const MlpShape& shape, const std::vector<double>& p) {
    auto m = zero_expert(kind, static_cast<std::uint32_t>(shape.inputs), static_cast<std::uint32_t>(shape.hidden),
                         static_cast<std::uint32_t>(shape.outputs));
    auto narrow = [&](std::size_t offset, std::vector<float>& out) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(p[offset + i]);
    };
    narrow(shape.w1_offset(), m.w1);
    narrow(shape.b1_offset(), m.b1);
    narrow(shape.w2_offset(), m.w2);
    narrow(shape.b2_offset(), m.b2);
    for (const auto* v : {&m.w1, &m.b1, &m.w2, &m.b2}) {
        if (!std::all_of(v->begin(), v->end(), [](float x) { return std::isfinite(x); })) {
            throw Error(ErrorCode::divergence, "trained weights overflow single precision");
        }
    }
    return m;
}

SgdOptions sgd_options(const TrainConfig& cfg, std::uint32_t subset_index) {
    // Each subset trains from its own stream so experts of one build differ.
    return {cfg.learning_rate, cfg.epochs, cfg.batch_size, mix64(cfg.seed) ^ subset_index, cfg.weight_init_scale};
}

}  // namespace

TrainedExpert train_expert_ss(std::span<const Item* const> subset, const TrainConfig& cfg, std::uint32_t subset_index) {
    if (subset.empty()) throw Error(ErrorCode::validation, "cannot train an expert on an empty subset");
    const auto grid = rotation_grid(*subset.front());
    Matrix inputs(subset.size() * kRotationClasses, grid.values());
    std::vector<std::size_t> targets;
    targets.reserve(inputs.rows());
    std::size_t row = 0;
    for (const Item* item : subset) {
        const auto g = rotation_grid(*item);
        if (g.size != grid.size || g.channels != grid.channels) {
            throw Error(ErrorCode::dimension_mismatch, fmt::format("item '{}' has a different rotation grid", item->id), item->id);
        }
        for (auto& inst : rotation_instances(*item)) {
            std::copy(inst.input.begin(), inst.input.end(), inputs.row(row++).begin());
            targets.push_back(static_cast<std::size_t>(inst.target));
        }
    }
    const MlpShape shape{grid.values(), cfg.hidden_units, kRotationClasses};
    auto sgd = train_mlp(shape, inputs, targets, sgd_options(cfg, subset_index));
    TrainedExpert out{model_from_params(ExpertKind::rotation, shape, sgd.params), std::move(sgd.epoch_losses)};
    out.model.subset_index = subset_index;
    out.model.trained_on_size = static_cast<std::uint32_t>(subset.size());
    out.model.train_config = cfg;
    return out;
}

TrainedExpert train_expert_ts(std::span<const Item* const> subset, const TrainConfig& cfg, std::uint32_t subset_index) {
    if (subset.empty()) throw Error(ErrorCode::validation, "cannot train an expert on an empty subset");
    std::set<std::string> distinct;
    for (const Item* item : subset) {
        if (!item->label) throw Error(ErrorCode::missing_labels, fmt::format("item '{}' has no label", item->id), item->id);
        distinct.insert(*item->label);
    }
    if (distinct.size() < 2) {
        throw Error(ErrorCode::single_class, fmt::format("subset {} contains a single class", subset_index));
    }
    std::vector<std::string> labels(distinct.begin(), distinct.end());
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < labels.size(); ++i) index.emplace(labels[i], i);

    const auto d = subset.front()->features.size();
    Matrix inputs(subset.size(), d);
    std::vector<std::size_t> targets;
    targets.reserve(subset.size());
    for (std::size_t i = 0; i < subset.size(); ++i) {
        if (subset[i]->features.size() != d) {
            throw Error(ErrorCode::dimension_mismatch, fmt::format("item '{}' has a different feature width", subset[i]->id), subset[i]->id);
        }
        std::copy(subset[i]->features.begin(), subset[i]->features.end(), inputs.row(i).begin());
        targets.push_back(index.at(*subset[i]->label));
    }
    const MlpShape shape{d, cfg.hidden_units, labels.size()};
    auto sgd = train_mlp(shape, inputs, targets, sgd_options(cfg, subset_index));
    TrainedExpert out{model_from_params(ExpertKind::task_specific, shape, sgd.params), std::move(sgd.epoch_losses)};
    out.model.subset_index = subset_index;
    out.model.trained_on_size = static_cast<std::uint32_t>(subset.size());
    out.model.class_labels = std::move(labels);
    out.model.train_config = cfg;
    return out;
}

std::vector<double> expert_input(const ExpertModel& expert, const Item& item) {
    return expert.kind == ExpertKind::rotation ? rotation_input(item) : item.features;
}

std::vector<double> predict(const ExpertModel& expert, std::span<const double> input) {
    if (input.size() != expert.d_in) {
        throw Error(ErrorCode::dimension_mismatch, fmt::format("expert expects {} inputs, got {}", expert.d_in, input.size()));
    }
    const auto params = expert.params();
    std::vector<double> hidden(expert.hidden), probs(expert.n_out);
    mlp_forward(expert.shape(), params, input, hidden, probs);
    softmax_inplace(probs);
    return probs;
}

std::vector<double> hidden_representation(const ExpertModel& expert, std::span<const double> input) {
    if (input.size() != expert.d_in) {
        throw Error(ErrorCode::dimension_mismatch, fmt::format("expert expects {} inputs, got {}", expert.d_in, input.size()));
    }
    const auto params = expert.params();
    std::vector<double> hidden(expert.hidden), logits(expert.n_out);
    mlp_forward(expert.shape(), params, input, hidden, logits);
    return hidden;
}

// ---------------------------------------------------------------------------
// Blob format

namespace {

constexpr std::array<std::uint8_t, 4> kMagic{'N', 'D', 'S', 'X'};
constexpr std::uint32_t kMaxDim = 1u << 20;

class BlobWriter {
public:
    void bytes(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    template <typename T>
    void uint(T v) {
        for (std::size_t i = 0; i < sizeof(T); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
    void floats(const std::vector<float>& v) {
        for (float x : v) f32(x);
    }
    void str(const std::string& s) {
        uint(static_cast<std::uint32_t>(s.size()));
        out_.insert(out_.end(), s.begin(), s.end());
    }
    std::vector<std::uint8_t>& data() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class BlobReader {
public:
    explicit BlobReader(std::span<const std::uint8_t> in) : in_(in) {}

    std::span<const std::uint8_t> take(std::size_t n) {
        if (n > in_.size() - pos_) throw Error(ErrorCode::corrupt_blob, "expert blob is truncated");
        auto s = in_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    template <typename T>
    T uint() {
        auto b = take(sizeof(T));
        T v = 0;
        for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(b[i]) << (8 * i));
        return v;
    }
    float f32() { return std::bit_cast<float>(uint<std::uint32_t>()); }
    double f64() { return std::bit_cast<double>(uint<std::uint64_t>()); }
    std::vector<float> floats(std::size_t n) {
        if (n > (in_.size() - pos_) / 4) throw Error(ErrorCode::corrupt_blob, "expert blob is truncated");
        std::vector<float> v(n);
        for (auto& x : v) {
            x = f32();
            if (!std::isfinite(x)) throw Error(ErrorCode::corrupt_blob, "expert blob holds a non-finite weight");
        }
        return v;
    }
    std::string str() {
        const auto n = uint<std::uint32_t>();
        auto b = take(n);
        return {b.begin(), b.end()};
    }
    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return in_.size() - pos_; }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_expert(const ExpertModel& e) {
    BlobWriter w;
    w.bytes(kMagic);
    w.uint<std::uint16_t>(e.version);
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(e.kind));
    w.uint<std::uint32_t>(e.d_in);
    w.uint<std::uint32_t>(e.hidden);
    w.uint<std::uint32_t>(e.n_out);
    w.floats(e.w1);
    w.floats(e.b1);
    w.floats(e.w2);
    w.floats(e.b2);
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(e.activation));
    w.uint<std::uint32_t>(e.subset_index);
    w.uint<std::uint32_t>(e.trained_on_size);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(e.class_labels.size()));
    for (const auto& l : e.class_labels) w.str(l);
    w.f64(e.train_config.learning_rate);
    w.uint<std::uint32_t>(e.train_config.epochs);
    w.uint<std::uint32_t>(e.train_config.batch_size);
    w.uint<std::uint64_t>(e.train_config.seed);
    w.f64(e.train_config.weight_init_scale);
    w.uint<std::uint32_t>(e.train_config.hidden_units);
    w.uint<std::uint64_t>(fnv1a64(w.data()));
    return std::move(w.data());
}

ExpertModel deserialize_expert(std::span<const std::uint8_t> blob) {
    BlobReader r(blob);
    auto magic = r.take(kMagic.size());
    if (!std::equal(magic.begin(), magic.end(), kMagic.begin())) throw Error(ErrorCode::corrupt_blob, "not an expert blob (bad magic)");
    ExpertModel e;
    e.version = r.uint<std::uint16_t>();
    if (e.version != ExpertModel::kFormatVersion) {
        throw Error(ErrorCode::version_mismatch,
                    fmt::format("expert blob version {} is not supported (expected {})", e.version, ExpertModel::kFormatVersion));
    }
    const auto kind = r.uint<std::uint8_t>();
    if (kind > 1) throw Error(ErrorCode::corrupt_blob, fmt::format("unknown expert kind {}", kind));
    e.kind = static_cast<ExpertKind>(kind);
    e.d_in = r.uint<std::uint32_t>();
    e.hidden = r.uint<std::uint32_t>();
    e.n_out = r.uint<std::uint32_t>();
    if (e.d_in == 0 || e.hidden == 0 || e.n_out == 0 || e.d_in > kMaxDim || e.hidden > kMaxDim || e.n_out > kMaxDim) {
        throw Error(ErrorCode::corrupt_blob, "expert blob declares implausible dimensions");
    }
    e.w1 = r.floats(std::size_t{e.d_in} * e.hidden);
    e.b1 = r.floats(e.hidden);
    e.w2 = r.floats(std::size_t{e.hidden} * e.n_out);
    e.b2 = r.floats(e.n_out);
    const auto activation = r.uint<std::uint8_t>();
    if (activation != 0) throw Error(ErrorCode::corrupt_blob, fmt::format("unknown activation {}", activation));
    e.subset_index = r.uint<std::uint32_t>();
    e.trained_on_size = r.uint<std::uint32_t>();
    const auto n_labels = r.uint<std::uint32_t>();
    if (n_labels > r.remaining() / 4) throw Error(ErrorCode::corrupt_blob, "expert blob is truncated");
    for (std::uint32_t i = 0; i < n_labels; ++i) e.class_labels.push_back(r.str());
    e.train_config.learning_rate = r.f64();
    e.train_config.epochs = r.uint<std::uint32_t>();
    e.train_config.batch_size = r.uint<std::uint32_t>();
    e.train_config.seed = r.uint<std::uint64_t>();
    e.train_config.weight_init_scale = r.f64();
    e.train_config.hidden_units = r.uint<std::uint32_t>();
    const auto body = r.position();
    const auto stored = r.uint<std::uint64_t>();
    if (r.remaining() != 0) throw Error(ErrorCode::corrupt_blob, "trailing bytes after expert blob");
    if (stored != fnv1a64(blob.first(body))) throw Error(ErrorCode::corrupt_blob, "expert blob checksum mismatch");
    if (e.kind == ExpertKind::rotation ? e.n_out != 4 : e.class_labels.size() != e.n_out) {
        throw Error(ErrorCode::corrupt_blob, "expert output width inconsistent with its kind");
    }
    return e;
}

}  // namespace nds::experts
