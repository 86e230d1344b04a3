#include "egomem/error.hpp"

namespace egomem {

std::string_view to_string(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::EmptyText: return "EmptyText";
        case ErrorCode::UnknownSpeaker: return "UnknownSpeaker";
        case ErrorCode::NotFound: return "NotFound";
        case ErrorCode::SelfLink: return "SelfLink";
        case ErrorCode::UnknownMemory: return "UnknownMemory";
        case ErrorCode::LinkingBackendError: return "LinkingBackendError";
        case ErrorCode::DimMismatch: return "DimMismatch";
        case ErrorCode::EmbeddingError: return "EmbeddingError";
        case ErrorCode::EmptySession: return "EmptySession";
        case ErrorCode::EmptyDataset: return "EmptyDataset";
        case ErrorCode::NoTaggedUtterances: return "NoTaggedUtterances";
        case ErrorCode::EncoderFormatError: return "EncoderFormatError";
        case ErrorCode::MalformedTurnOrder: return "MalformedTurnOrder";
        case ErrorCode::UnparseableLabel: return "UnparseableLabel";
        case ErrorCode::ScriptMiss: return "ScriptMiss";
        case ErrorCode::HttpError: return "HttpError";
        case ErrorCode::Timeout: return "Timeout";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::InvalidScenario: return "InvalidScenario";
        case ErrorCode::SessionOpen: return "SessionOpen";
        case ErrorCode::EpisodeComplete: return "EpisodeComplete";
        case ErrorCode::MainAsPartner: return "MainAsPartner";
        case ErrorCode::TurnLimitReached: return "TurnLimitReached";
        case ErrorCode::WrongTurnOrder: return "WrongTurnOrder";
        case ErrorCode::NoOpenSession: return "NoOpenSession";
        case ErrorCode::ParseError: return "ParseError";
        case ErrorCode::SchemaError: return "SchemaError";
        case ErrorCode::BadRatios: return "BadRatios";
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::ScenarioParseError: return "ScenarioParseError";
        case ErrorCode::DialogueFormatError: return "DialogueFormatError";
        case ErrorCode::MemoryFormatError: return "MemoryFormatError";
        case ErrorCode::PairFormatError: return "PairFormatError";
        case ErrorCode::PromptRenderError: return "PromptRenderError";
        case ErrorCode::TagFormatError: return "TagFormatError";
    }
    return "Unknown";
}

namespace {

std::string describe(const std::vector<Violation>& violations) {
    std::string out = "invalid scenario";
    for (const auto& v : violations) {
        out += "; ";
        out += v.rule;
        out += ": ";
        out += v.message;
    }
    return out;
}

}  // namespace

ScenarioError::ScenarioError(std::vector<Violation> violations)
    : Error(ErrorCode::InvalidScenario, describe(violations)),
      violations_(std::move(violations)) {}

}  // namespace egomem
