#pragma once

#include <stdexcept>
#include <string>

namespace mtcal {

/// Failure categories surfaced by the library. The CLI maps these onto exit codes.
enum class ErrorKind {
    InvalidArgument,
    LengthMismatch,
    OutOfRange,
    EmptyInput,
    TooFewObservations,
    DegenerateVariance,
    RankDeficient,
    PositivityViolation,
    NoTrueStrategies,
    InsufficientIterations,
    BudgetExceeded,
    AllFundsFiltered,
    ParseError,
    DuplicateIdentifier,
    Io,
    Config,
};

inline const char* to_string(ErrorKind kind) noexcept
{
    switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::TooFewObservations: return "TooFewObservations";
    case ErrorKind::DegenerateVariance: return "DegenerateVariance";
    case ErrorKind::RankDeficient: return "RankDeficient";
    case ErrorKind::PositivityViolation: return "PositivityViolation";
    case ErrorKind::NoTrueStrategies: return "NoTrueStrategies";
    case ErrorKind::InsufficientIterations: return "InsufficientIterations";
    case ErrorKind::BudgetExceeded: return "BudgetExceeded";
    case ErrorKind::AllFundsFiltered: return "AllFundsFiltered";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::DuplicateIdentifier: return "DuplicateIdentifier";
    case ErrorKind::Io: return "Io";
    case ErrorKind::Config: return "Config";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind)
    {
    }

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

} // namespace mtcal
