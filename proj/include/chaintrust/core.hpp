#pragma once

#include <compare>
#include <stdexcept>
#include <string>

namespace chaintrust {

// Seconds since the simulation epoch.
using Timestamp = double;

// Opaque, totally ordered device identifier. Lexicographic order is the
// tie-breaking order everywhere (member listings, path search).
struct DeviceId {
    std::string value;

    DeviceId() = default;
    explicit DeviceId(std::string v) : value(std::move(v)) {}

    bool empty() const { return value.empty(); }
    auto operator<=>(const DeviceId&) const = default;
};

enum class ErrorCode {
    SelfPlacement,
    UnknownMember,
    StaleAnnotation,
    UnknownLabel,
    NotTrusted,
    BrokenChain,
    DuplicateOwner,
    MissingGraph,
    EmptyHistory,
    InsufficientHistory,
    DegenerateTime,
    SubjectMismatch,
    NoSamples,
    ConfigInvalid,
    IoError,
    NoTasks,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::SelfPlacement: return "SelfPlacement";
        case ErrorCode::UnknownMember: return "UnknownMember";
        case ErrorCode::StaleAnnotation: return "StaleAnnotation";
        case ErrorCode::UnknownLabel: return "UnknownLabel";
        case ErrorCode::NotTrusted: return "NotTrusted";
        case ErrorCode::BrokenChain: return "BrokenChain";
        case ErrorCode::DuplicateOwner: return "DuplicateOwner";
        case ErrorCode::MissingGraph: return "MissingGraph";
        case ErrorCode::EmptyHistory: return "EmptyHistory";
        case ErrorCode::InsufficientHistory: return "InsufficientHistory";
        case ErrorCode::DegenerateTime: return "DegenerateTime";
        case ErrorCode::SubjectMismatch: return "SubjectMismatch";
        case ErrorCode::NoSamples: return "NoSamples";
        case ErrorCode::ConfigInvalid: return "ConfigInvalid";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::NoTasks: return "NoTasks";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
  public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + what),
          code_(code) {}

    ErrorCode code() const { return code_; }

  private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& what) {
    throw Error(code, what);
}

}  // namespace chaintrust
