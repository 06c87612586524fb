#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mfq {

enum class ErrorCode {
    RowNotStochastic,
    ParallelEmbeddings,
    ReducibleChain,
    NonPositiveInitialDist,
    ConvergenceFailure,
    ZeroMassState,
    IterationCapExceeded,
    DiscountNotContractive,
    UnsupportedLaw,
    UnsupportedActivation,
    DimensionMismatch,
    EpisodeLengthMismatch,
    AsymmetricInput,
    NonFiniteState,
    NotPositiveDefinite,
    SpecHashMismatch,
    GridMismatch,
    InvalidInput,
    Io,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::RowNotStochastic: return "RowNotStochastic";
    case ErrorCode::ParallelEmbeddings: return "ParallelEmbeddings";
    case ErrorCode::ReducibleChain: return "ReducibleChain";
    case ErrorCode::NonPositiveInitialDist: return "NonPositiveInitialDist";
    case ErrorCode::ConvergenceFailure: return "ConvergenceFailure";
    case ErrorCode::ZeroMassState: return "ZeroMassState";
    case ErrorCode::IterationCapExceeded: return "IterationCapExceeded";
    case ErrorCode::DiscountNotContractive: return "DiscountNotContractive";
    case ErrorCode::UnsupportedLaw: return "UnsupportedLaw";
    case ErrorCode::UnsupportedActivation: return "UnsupportedActivation";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EpisodeLengthMismatch: return "EpisodeLengthMismatch";
    case ErrorCode::AsymmetricInput: return "AsymmetricInput";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::SpecHashMismatch: return "SpecHashMismatch";
    case ErrorCode::GridMismatch: return "GridMismatch";
    case ErrorCode::InvalidInput: return "InvalidInput";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

/// Every failure in the library surfaces as this exception; `code()` lets
/// callers branch without parsing the message.
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

inline void require_dims(std::size_t got, std::size_t expected, std::string_view what) {
    if (got != expected) {
        fail(ErrorCode::DimensionMismatch,
             std::string(what) + ": expected " + std::to_string(expected) + ", got " +
                 std::to_string(got));
    }
}

} // namespace mfq
