#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace nds {

// Every failure the library reports carries one of these codes. The HTTP
// layer and the CLI exit codes are both derived from it.
enum class ErrorCode {
    parse_error,
    dimension_mismatch,
    duplicate_id,
    validation,
    too_few_items,
    k_too_large,
    missing_labels,
    unknown_item,
    non_square_image,
    missing_image,
    divergence,
    single_class,
    version_mismatch,
    corrupt_blob,
    kind_mismatch,
    non_finite_input,
    non_positive_temperature,
    length_mismatch,
    empty_source,
    invalid_budget,
    duplicate_name,
    not_ready,
    unknown_dataset,
    corrupt_store,
    network,
    io,
    internal,
};

std::string_view to_string(ErrorCode code) noexcept;
std::optional<ErrorCode> error_code_from_string(std::string_view name) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message, std::string detail = {})
        : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

    ErrorCode code() const noexcept { return code_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

}  // namespace nds
