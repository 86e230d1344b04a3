#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace egomem {

enum class ErrorCode {
    // memory_core / link_graph
    EmptyText,
    UnknownSpeaker,
    NotFound,
    SelfLink,
    UnknownMemory,
    LinkingBackendError,
    // retrieval / trainer
    DimMismatch,
    EmbeddingError,
    EmptySession,
    EmptyDataset,
    NoTaggedUtterances,
    EncoderFormatError,
    // backend
    MalformedTurnOrder,
    UnparseableLabel,
    ScriptMiss,
    HttpError,
    Timeout,
    InvalidConfig,
    // orchestrator
    InvalidScenario,
    SessionOpen,
    EpisodeComplete,
    MainAsPartner,
    TurnLimitReached,
    WrongTurnOrder,
    NoOpenSession,
    // dataset
    ParseError,
    SchemaError,
    BadRatios,
    IoError,
    // pipeline
    ScenarioParseError,
    DialogueFormatError,
    MemoryFormatError,
    PairFormatError,
    PromptRenderError,
    TagFormatError,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Base exception for every failure raised by the engine. The code is
/// machine-readable and stable; the message is for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// A named rule failure (R1..R7 for records, also reused for scenarios).
struct Violation {
    std::string rule;
    std::string message;
    /// Location inside the record, e.g. "sessions[2].utterances[4]". May be empty.
    std::string where;

    bool operator==(const Violation&) const = default;
};

class ScenarioError : public Error {
public:
    explicit ScenarioError(std::vector<Violation> violations);

    const std::vector<Violation>& violations() const noexcept { return violations_; }

private:
    std::vector<Violation> violations_;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& message)
        : Error(ErrorCode::ParseError, "line " + std::to_string(line) + ": " + message),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace egomem
