#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace irera {

/// Categorized failure reasons raised by the engine.
enum class ErrorCode {
    invalid_argument,
    missing_input_field,
    missing_output_field,
    transport,
    request_rejected,
    malformed_response,
    dimension_mismatch,
    unknown_input,
    empty_query_set,
    negative_prior_weight,
    non_finite_score,
    length_mismatch,
    k_non_positive,
    malformed_record,
    empty_dataset,
    duplicate_label_name,
    prior_out_of_range,
    config,
    io,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace irera
