#include "nds/error.hpp"

namespace nds {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::parse_error: return "parse_error";
        case ErrorCode::dimension_mismatch: return "dimension_mismatch";
        case ErrorCode::duplicate_id: return "duplicate_id";
        case ErrorCode::validation: return "validation";
        case ErrorCode::too_few_items: return "too_few_items";
        case ErrorCode::k_too_large: return "k_too_large";
        case ErrorCode::missing_labels: return "missing_labels";
        case ErrorCode::unknown_item: return "unknown_item";
        case ErrorCode::non_square_image: return "non_square_image";
        case ErrorCode::missing_image: return "missing_image";
        case ErrorCode::divergence: return "divergence";
        case ErrorCode::single_class: return "single_class";
        case ErrorCode::version_mismatch: return "version_mismatch";
        case ErrorCode::corrupt_blob: return "corrupt_blob";
        case ErrorCode::kind_mismatch: return "kind_mismatch";
        case ErrorCode::non_finite_input: return "non_finite_input";
        case ErrorCode::non_positive_temperature: return "non_positive_temperature";
        case ErrorCode::length_mismatch: return "length_mismatch";
        case ErrorCode::empty_source: return "empty_source";
        case ErrorCode::invalid_budget: return "invalid_budget";
        case ErrorCode::duplicate_name: return "duplicate_name";
        case ErrorCode::not_ready: return "not_ready";
        case ErrorCode::unknown_dataset: return "unknown_dataset";
        case ErrorCode::corrupt_store: return "corrupt_store";
        case ErrorCode::network: return "network";
        case ErrorCode::io: return "io";
        case ErrorCode::internal: return "internal";
    }
    return "internal";
}

std::optional<ErrorCode> error_code_from_string(std::string_view name) noexcept {
    for (int i = 0; i <= static_cast<int>(ErrorCode::internal); ++i) {
        auto code = static_cast<ErrorCode>(i);
        if (to_string(code) == name) return code;
    }
    return std::nullopt;
}

}  // namespace nds
