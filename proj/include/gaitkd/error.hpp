#pragma once

#include <stdexcept>
#include <string>

namespace gaitkd {

// Error taxonomy. The CLI maps these onto process exit codes
// (config -> 2, io -> 3, training -> 5, everything numeric-ish -> 4).
enum class ErrorCode {
    config,
    io,
    shape,
    index,
    class_mismatch,
    label,
    numeric,
    mining,
    training,
    degenerate_gap,
};

inline const char* error_code_name(ErrorCode c) {
    switch (c) {
        case ErrorCode::config: return "config";
        case ErrorCode::io: return "io";
        case ErrorCode::shape: return "shape";
        case ErrorCode::index: return "index";
        case ErrorCode::class_mismatch: return "class_mismatch";
        case ErrorCode::label: return "label";
        case ErrorCode::numeric: return "numeric";
        case ErrorCode::mining: return "mining";
        case ErrorCode::training: return "training";
        case ErrorCode::degenerate_gap: return "degenerate_gap";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& msg)
        : std::runtime_error(std::string(error_code_name(code)) + " error: " + msg), code_(code) {}

    ErrorCode code() const { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, ErrorCode code, const std::string& msg) {
    if (!cond) fail(code, msg);
}

}  // namespace gaitkd
