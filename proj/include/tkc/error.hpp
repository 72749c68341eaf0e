#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tkc {

enum class ErrorCode {
    InvalidArgument,
    NotFound,
    Policy,           // operation not allowed on this node (e.g. non-decomposable layer)
    Config,
    DegenerateInput,  // ratio undefined because the reference norm is zero
    Domain,
    Numerical,
    Io,
    Parse,
    BadMagic,
    VersionMismatch,
    DimMismatch,
    DuplicateName,
    Truncated,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) raise(code, message);
}

}  // namespace tkc
