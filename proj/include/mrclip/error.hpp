#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mrclip {

enum class ErrorCode {
    MissingMagic,
    TruncatedElement,
    MalformedDecimal,
    MissingVolumeId,
    DegenerateOrientation,
    DuplicateVolumeId,
    SchemaViolation,
    InsufficientData,
    EmptyText,
    NonScalarLoss,
    NonFiniteValue,
    ShapeMismatch,
    EmptySequence,
    NoPositive,
    TooFewRecords,
    SingleGroupCorpus,
    DuplicateKey,
    EmptyStore,
    DegenerateLabels,
    InsufficientClassSize,
    DegenerateCovariance,
    SingleClass,
    BadFormat,
    Io,
    InvalidArgument,
};

constexpr std::string_view code_name(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::MissingMagic: return "MissingMagic";
    case ErrorCode::TruncatedElement: return "TruncatedElement";
    case ErrorCode::MalformedDecimal: return "MalformedDecimal";
    case ErrorCode::MissingVolumeId: return "MissingVolumeId";
    case ErrorCode::DegenerateOrientation: return "DegenerateOrientation";
    case ErrorCode::DuplicateVolumeId: return "DuplicateVolumeId";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::EmptyText: return "EmptyText";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::NoPositive: return "NoPositive";
    case ErrorCode::TooFewRecords: return "TooFewRecords";
    case ErrorCode::SingleGroupCorpus: return "SingleGroupCorpus";
    case ErrorCode::DuplicateKey: return "DuplicateKey";
    case ErrorCode::EmptyStore: return "EmptyStore";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::InsufficientClassSize: return "InsufficientClassSize";
    case ErrorCode::DegenerateCovariance: return "DegenerateCovariance";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::BadFormat: return "BadFormat";
    case ErrorCode::Io: return "Io";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

/// Every module reports failures through this exception; `code()` is what
/// callers and tests branch on, `what()` carries "<Code>: detail".
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& detail)
        : std::runtime_error(std::string(code_name(code)) + ": " + detail), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& detail) {
    throw Error(code, detail);
}

inline void require(bool condition, ErrorCode code, const std::string& detail) {
    if (!condition) {
        throw Error(code, detail);
    }
}

} // namespace mrclip
