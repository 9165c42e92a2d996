#include "polylean/error.hpp"

namespace polylean {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::UnreadableSource: return "UnreadableSource";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::NetworkError: return "NetworkError";
    case ErrorCode::MalformedPage: return "MalformedPage";
    case ErrorCode::NoTrades: return "NoTrades";
    case ErrorCode::NotResolved: return "NotResolved";
    case ErrorCode::DegenerateDesign: return "DegenerateDesign";
    case ErrorCode::FutureTrade: return "FutureTrade";
    case ErrorCode::NoQualifyingTrades: return "NoQualifyingTrades";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::ZeroVariance: return "ZeroVariance";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::NoRepublicans: return "NoRepublicans";
    case ErrorCode::ZeroRepShare: return "ZeroRepShare";
    case ErrorCode::AllColumnsConstant: return "AllColumnsConstant";
    case ErrorCode::DegenerateInput: return "DegenerateInput";
    case ErrorCode::MissingFeatureColumn: return "MissingFeatureColumn";
    case ErrorCode::UnknownOutcomeLabel: return "UnknownOutcomeLabel";
    case ErrorCode::InsufficientPanel: return "InsufficientPanel";
    case ErrorCode::SingularGLS: return "SingularGLS";
    case ErrorCode::InsufficientAgents: return "InsufficientAgents";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::IoFailure: return "IoFailure";
    }
    return "Unknown";
}

} // namespace polylean
