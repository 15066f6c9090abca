#pragma once

#include <stdexcept>
#include <string>

namespace protoclr {

enum class Errc {
    zero_norm,
    empty_input,
    dim_mismatch,
    non_positive_temperature,
    empty_batch,
    batch_too_small,
    singleton_anchor,
    odd_row_count,
    label_out_of_range,
    shape_mismatch,
    stale_cache,
    insufficient_data,
    class_too_small,
    empty_support,
    malformed_header,
    truncated_payload,
    inconsistent_row_length,
    counter_mismatch,
    invalid_argument,
    io_failure,
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::zero_norm: return "ZeroNorm";
        case Errc::empty_input: return "EmptyInput";
        case Errc::dim_mismatch: return "DimMismatch";
        case Errc::non_positive_temperature: return "NonPositiveTemperature";
        case Errc::empty_batch: return "EmptyBatch";
        case Errc::batch_too_small: return "BatchTooSmall";
        case Errc::singleton_anchor: return "SingletonAnchor";
        case Errc::odd_row_count: return "OddRowCount";
        case Errc::label_out_of_range: return "LabelOutOfRange";
        case Errc::shape_mismatch: return "ShapeMismatch";
        case Errc::stale_cache: return "StaleCache";
        case Errc::insufficient_data: return "InsufficientData";
        case Errc::class_too_small: return "ClassTooSmall";
        case Errc::empty_support: return "EmptySupport";
        case Errc::malformed_header: return "MalformedHeader";
        case Errc::truncated_payload: return "TruncatedPayload";
        case Errc::inconsistent_row_length: return "InconsistentRowLength";
        case Errc::counter_mismatch: return "CounterMismatch";
        case Errc::invalid_argument: return "InvalidArgument";
        case Errc::io_failure: return "IoFailure";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, Errc code, const std::string& what) {
    if (!ok) fail(code, what);
}

} // namespace protoclr
