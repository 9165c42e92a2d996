#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace polylean {

enum class ErrorCode {
    // ingest
    UnreadableSource,
    SchemaMismatch,
    EmptyInput,
    NetworkError,
    MalformedPage,
    // accuracy
    NoTrades,
    NotResolved,
    DegenerateDesign,
    // pbls
    FutureTrade,
    NoQualifyingTrades,
    InvalidConfig,
    // validation
    ZeroVariance,
    LengthMismatch,
    InsufficientData,
    NoRepublicans,
    ZeroRepShare,
    // predictor
    AllColumnsConstant,
    DegenerateInput,
    MissingFeatureColumn,
    // casestudy
    UnknownOutcomeLabel,
    InsufficientPanel,
    SingularGLS,
    // synth
    InsufficientAgents,
    // cli
    ConfigInvalid,
    IoFailure,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so that
/// callers (the CLI in particular) can map it to an exit status.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace polylean
