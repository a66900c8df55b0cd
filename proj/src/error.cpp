#include "irera/error.hpp"

namespace irera {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::missing_input_field: return "MissingInputField";
    case ErrorCode::missing_output_field: return "MissingOutputField";
    case ErrorCode::transport: return "TransportError";
    case ErrorCode::request_rejected: return "RequestRejected";
    case ErrorCode::malformed_response: return "MalformedResponse";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::unknown_input: return "UnknownInput";
    case ErrorCode::empty_query_set: return "EmptyQuerySet";
    case ErrorCode::negative_prior_weight: return "NegativeA";
    case ErrorCode::non_finite_score: return "NonFiniteScore";
    case ErrorCode::length_mismatch: return "LengthMismatch";
    case ErrorCode::k_non_positive: return "KNonPositive";
    case ErrorCode::malformed_record: return "MalformedRecord";
    case ErrorCode::empty_dataset: return "EmptyDataset";
    case ErrorCode::duplicate_label_name: return "DuplicateLabelName";
    case ErrorCode::prior_out_of_range: return "PriorOutOfRange";
    case ErrorCode::config: return "ConfigError";
    case ErrorCode::io: return "IoError";
    }
    return "Unknown";
}

} // namespace irera
