#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "egomem/error.hpp"
#include "egomem/memory.hpp"

namespace egomem {

struct Utterance {
    SpeakerId speaker;
    std::string text;
    /// Memory ids this utterance draws on (dataset supervision; empty live).
    std::set<MemoryId> tags;

    bool operator==(const Utterance&) const = default;
};

struct SessionState {
    int index = 0;
    SpeakerId partner;
    std::vector<Utterance> turns;
    int max_turns = 8;
    bool closed = false;
    /// Plain abstractive summary (pipeline only).
    std::optional<std::string> summary;

    bool operator==(const SessionState&) const = default;
};

struct SessionEvent {
    std::string description;
    SpeakerId partner;

    bool operator==(const SessionEvent&) const = default;
};

struct Scenario {
    std::string topic;
    std::vector<SpeakerProfile> speakers;
    std::vector<SessionEvent> events;

    /// nullptr when absent.
    const SpeakerProfile* find(const SpeakerId& id) const noexcept;
    const SpeakerProfile* find_by_name(std::string_view name) const noexcept;
    /// The first speaker with is_main set, or nullptr.
    const SpeakerProfile* main_speaker() const noexcept;
    std::set<SpeakerId> roster() const;

    bool operator==(const Scenario&) const = default;
};

/// Shape constraints for scenario validation. The defaults are the strict
/// four-speaker, six-session episode layout.
struct ScenarioShape {
    std::size_t speakers = 4;
    std::size_t sessions = 6;
    /// Every non-main speaker must be the partner of at least one event.
    bool require_partner_coverage = true;
};

/// Returns R1 (roster), R2 (event count) and R3 (partner coverage)
/// violations, plus structural problems reported under R1/R2.
std::vector<Violation> validate_scenario(const Scenario& scenario, const ScenarioShape& shape = {});

/// "NAME: text" per utterance, newline separated, in order.
/// Throws Error{EmptySession} when the session has no turns.
std::string build_context_text(const SessionState& session, const Scenario& scenario);

}  // namespace egomem
