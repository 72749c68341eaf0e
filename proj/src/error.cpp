#include "tkc/error.hpp"

namespace tkc {

std::string_view to_string(ErrorCode code) {
    switch (code) {
        case ErrorCode::InvalidArgument: return "invalid-argument";
        case ErrorCode::NotFound: return "not-found";
        case ErrorCode::Policy: return "policy";
        case ErrorCode::Config: return "configuration";
        case ErrorCode::DegenerateInput: return "degenerate-input";
        case ErrorCode::Domain: return "domain";
        case ErrorCode::Numerical: return "numerical";
        case ErrorCode::Io: return "io";
        case ErrorCode::Parse: return "parse";
        case ErrorCode::BadMagic: return "bad-magic";
        case ErrorCode::VersionMismatch: return "version-mismatch";
        case ErrorCode::DimMismatch: return "dim-mismatch";
        case ErrorCode::DuplicateName: return "duplicate-name";
        case ErrorCode::Truncated: return "truncated";
    }
    return "unknown";
}

}  // namespace tkc
