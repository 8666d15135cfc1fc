#include "nds/core/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include "json.hpp"

#include "nds/core/hashing.hpp"
#include "nds/error.hpp"

namespace nds {

using nlohmann::json;

std::string_view to_string(Role role) noexcept { return role == Role::source ? "source" : "target"; }

bool DatasetManifest::all_labeled() const noexcept {
    return labeled() && std::all_of(items.begin(), items.end(), [](const Item& it) { return it.label.has_value(); });
}

std::size_t DatasetManifest::label_index(std::string_view label) const {
    auto it = std::find(label_set.begin(), label_set.end(), label);
    if (it == label_set.end()) {
        throw Error(ErrorCode::validation, fmt::format("label '{}' is not in the label set of '{}'", label, name));
    }
    return static_cast<std::size_t>(it - label_set.begin());
}

std::vector<std::size_t> DatasetManifest::label_indices() const {
    std::unordered_map<std::string_view, std::size_t> index;
    for (std::size_t i = 0; i < label_set.size(); ++i) index.emplace(label_set[i], i);
    std::vector<std::size_t> out;
    out.reserve(items.size());
    for (const auto& item : items) {
        if (!item.label) throw Error(ErrorCode::missing_labels, fmt::format("item '{}' has no label", item.id));
        auto found = index.find(*item.label);
        if (found == index.end()) {
            throw Error(ErrorCode::validation, fmt::format("item '{}' has label '{}' outside the label set", item.id, *item.label));
        }
        out.push_back(found->second);
    }
    return out;
}

void validate(const DatasetManifest& m) {
    if (m.items.empty()) throw Error(ErrorCode::validation, fmt::format("manifest '{}' has no items", m.name));
    if (m.feature_dim == 0) throw Error(ErrorCode::validation, "feature_dim must be positive");
    std::unordered_set<std::string_view> ids;
    std::unordered_set<std::string_view> labels(m.label_set.begin(), m.label_set.end());
    if (labels.size() != m.label_set.size()) throw Error(ErrorCode::validation, "label_set contains duplicates");
    for (const auto& item : m.items) {
        if (item.id.empty()) throw Error(ErrorCode::validation, "item with empty id");
        if (!ids.insert(item.id).second) {
            throw Error(ErrorCode::duplicate_id, fmt::format("duplicate item id '{}'", item.id), item.id);
        }
        if (item.features.size() != m.feature_dim) {
            throw Error(ErrorCode::dimension_mismatch,
                        fmt::format("item '{}' has {} features, manifest declares {}", item.id, item.features.size(),
                                    m.feature_dim),
                        item.id);
        }
        for (double f : item.features) {
            if (!std::isfinite(f)) throw Error(ErrorCode::validation, fmt::format("item '{}' has a non-finite feature", item.id));
        }
        if (item.image) {
            if (!m.image_shape) {
                throw Error(ErrorCode::validation, fmt::format("item '{}' has an image but the manifest declares no image_shape", item.id));
            }
            if (item.image->shape != *m.image_shape || item.image->pixels.size() != m.image_shape->values()) {
                throw Error(ErrorCode::dimension_mismatch, fmt::format("item '{}' image does not match image_shape", item.id), item.id);
            }
        }
        if (item.label && !labels.contains(*item.label)) {
            throw Error(ErrorCode::validation, fmt::format("item '{}' has label '{}' outside the label set", item.id, *item.label));
        }
    }
}

std::vector<std::uint8_t> quantize_pixels(std::span<const float> pixels) {
    std::vector<std::uint8_t> out(pixels.size());
    std::transform(pixels.begin(), pixels.end(), out.begin(), [](float v) {
        return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    });
    return out;
}

std::vector<float> dequantize_pixels(std::span<const std::uint8_t> bytes) {
    std::vector<float> out(bytes.size());
    std::transform(bytes.begin(), bytes.end(), out.begin(), [](std::uint8_t b) { return static_cast<float>(b) / 255.0f; });
    return out;
}

namespace {

bool non_negative_integer(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& what) {
    throw Error(ErrorCode::parse_error, fmt::format("manifest line {}: {}", line, what));
}

Role parse_role(const std::string& s, std::size_t line) {
    if (s == "source") return Role::source;
    if (s == "target") return Role::target;
    parse_fail(line, fmt::format("unknown role '{}'", s));
}

void read_meta(const json& meta, DatasetManifest& m, std::size_t line) {
    if (!meta.is_object()) parse_fail(line, "'meta' must be an object");
    if (!meta.contains("name") || !meta["name"].is_string()) parse_fail(line, "meta.name missing");
    if (!meta.contains("feature_dim") || !non_negative_integer(meta["feature_dim"])) {
        parse_fail(line, "meta.feature_dim missing or not a positive integer");
    }
    m.name = meta["name"].get<std::string>();
    m.feature_dim = meta["feature_dim"].get<std::size_t>();
    if (meta.contains("image_shape")) {
        const auto& s = meta["image_shape"];
        if (!s.is_array() || s.size() != 2 || !non_negative_integer(s[0]) || !non_negative_integer(s[1])) {
            parse_fail(line, "meta.image_shape must be [H, C]");
        }
        m.image_shape = ImageShape{s[0].get<std::uint32_t>(), s[1].get<std::uint32_t>()};
        if (m.image_shape->size == 0 || m.image_shape->channels == 0) parse_fail(line, "meta.image_shape must be positive");
    }
    if (meta.contains("label_set")) {
        if (!meta["label_set"].is_array()) parse_fail(line, "meta.label_set must be an array of strings");
        for (const auto& l : meta["label_set"]) {
            if (!l.is_string()) parse_fail(line, "meta.label_set must be an array of strings");
            m.label_set.push_back(l.get<std::string>());
        }
    }
    m.role = parse_role(meta.value("role", std::string("source")), line);
}

Item read_item(const json& j, const DatasetManifest& m, std::size_t line) {
    if (!j.is_object()) parse_fail(line, "item record must be an object");
    Item item;
    if (!j.contains("id") || !j["id"].is_string()) parse_fail(line, "missing string 'id'");
    item.id = j["id"].get<std::string>();
    if (!j.contains("url") || !j["url"].is_string()) parse_fail(line, fmt::format("item '{}' missing string 'url'", item.id));
    item.url = j["url"].get<std::string>();
    if (!j.contains("features") || !j["features"].is_array()) {
        parse_fail(line, fmt::format("item '{}' missing 'features' array", item.id));
    }
    item.features.reserve(j["features"].size());
    for (const auto& f : j["features"]) {
        if (!f.is_number()) parse_fail(line, fmt::format("item '{}' has a non-numeric feature", item.id));
        item.features.push_back(f.get<double>());
    }
    if (j.contains("label")) {
        if (!j["label"].is_string()) parse_fail(line, fmt::format("item '{}' label must be a string", item.id));
        item.label = j["label"].get<std::string>();
    }
    if (j.contains("image")) {
        if (!j["image"].is_string()) parse_fail(line, fmt::format("item '{}' image must be a base64 string", item.id));
        if (!m.image_shape) parse_fail(line, fmt::format("item '{}' has an image but meta has no image_shape", item.id));
        std::vector<std::uint8_t> bytes;
        try {
            bytes = base64_decode(j["image"].get<std::string>());
        } catch (const Error& e) {
            parse_fail(line, fmt::format("item '{}': {}", item.id, e.what()));
        }
        if (bytes.size() != m.image_shape->values()) {
            throw Error(ErrorCode::dimension_mismatch,
                        fmt::format("item '{}' image has {} bytes, expected {}", item.id, bytes.size(), m.image_shape->values()),
                        item.id);
        }
        item.image = Image{*m.image_shape, dequantize_pixels(bytes)};
    }
    if (j.contains("bytes")) {
        if (!non_negative_integer(j["bytes"])) parse_fail(line, fmt::format("item '{}' bytes must be a non-negative integer", item.id));
        item.size_bytes = j["bytes"].get<std::uint64_t>();
    }
    return item;
}

}  // namespace

DatasetManifest parse_manifest(std::string_view text) {
    DatasetManifest m;
    bool have_meta = false;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t end = std::min(text.find('\n', pos), text.size());
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            parse_fail(line_no, fmt::format("malformed JSON ({})", e.what()));
        }
        if (!have_meta) {
            if (!j.is_object() || !j.contains("meta")) parse_fail(line_no, "first record must be the {\"meta\": ...} header");
            read_meta(j["meta"], m, line_no);
            have_meta = true;
            continue;
        }
        m.items.push_back(read_item(j, m, line_no));
    }
    if (!have_meta) throw Error(ErrorCode::parse_error, "manifest is empty");

    // Labels without a declared label_set get dense indices in order of first appearance.
    if (m.label_set.empty()) {
        std::unordered_set<std::string> seen;
        for (const auto& item : m.items) {
            if (item.label && seen.insert(*item.label).second) m.label_set.push_back(*item.label);
        }
    }
    validate(m);
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io, fmt::format("cannot open manifest '{}'", path.string()));
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_manifest(buf.str());
}

std::string serialize_manifest(const DatasetManifest& m) {
    json meta{{"name", m.name}, {"feature_dim", m.feature_dim}, {"role", std::string(to_string(m.role))}};
    if (m.image_shape) meta["image_shape"] = {m.image_shape->size, m.image_shape->channels};
    if (!m.label_set.empty()) meta["label_set"] = m.label_set;
    std::string out = json{{"meta", meta}}.dump();
    out.push_back('\n');
    for (const auto& item : m.items) {
        json j{{"id", item.id}, {"url", item.url}, {"features", item.features}};
        if (item.label) j["label"] = *item.label;
        if (item.image) j["image"] = base64_encode(quantize_pixels(item.image->pixels));
        if (item.size_bytes) j["bytes"] = *item.size_bytes;
        out += j.dump();
        out.push_back('\n');
    }
    return out;
}

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, fmt::format("cannot write manifest '{}'", path.string()));
    out << serialize_manifest(m);
    if (!out) throw Error(ErrorCode::io, fmt::format("short write to '{}'", path.string()));
}

}  // namespace nds
