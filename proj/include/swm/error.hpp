#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace swm {

enum class ErrorCode {
    Io,
    ZeroMatches,
    InvalidPattern,
    DecodeError,
    UnsupportedDepth,
    NotInManifest,
    InvalidTimestamp,
    OutOfBounds,
    InvalidRegion,
    InvalidArgument,
    ShapeMismatch,
    NonFinite,
    NotScalar,
    FormatError,
    WrongModelKind,
    ChecksumError,
    EmptyIndex,
    ModelMismatch,
    DimMismatch,
    ZeroVector,
    Divergence,
    ConfigError,
    MissingData,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::Io: return "Io";
    case ErrorCode::ZeroMatches: return "ZeroMatches";
    case ErrorCode::InvalidPattern: return "InvalidPattern";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::UnsupportedDepth: return "UnsupportedDepth";
    case ErrorCode::NotInManifest: return "NotInManifest";
    case ErrorCode::InvalidTimestamp: return "InvalidTimestamp";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::InvalidRegion: return "InvalidRegion";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::WrongModelKind: return "WrongModelKind";
    case ErrorCode::ChecksumError: return "ChecksumError";
    case ErrorCode::EmptyIndex: return "EmptyIndex";
    case ErrorCode::ModelMismatch: return "ModelMismatch";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::Divergence: return "Divergence";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::MissingData: return "MissingData";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace swm
