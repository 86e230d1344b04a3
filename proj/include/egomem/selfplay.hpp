#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>

#include "egomem/orchestrator.hpp"

namespace egomem {

struct SelfPlayConfig {
    int max_turns = 8;
    std::uint64_t seed = 0;
    /// First utterance of session 1, taken from a seed episode when given.
    std::optional<std::string> opening_utterance;
    bool transitive_expansion = false;
};

struct SelfPlayResult {
    /// The main agent's episode: full transcript, its memories and links.
    EpisodeRecord record;
    /// Every agent's own egocentric episode, keyed by speaker id. The main
    /// agent's entry equals `record` minus provenance.
    std::map<SpeakerId, EpisodeRecord> agents;
};

using BackendFor = std::function<Backend&(const SpeakerId&)>;

/// The scenario as seen by `agent`: `agent` becomes the main speaker and
/// the events are those it takes part in, with the original main speaker
/// as partner. For the original main speaker this is the scenario itself.
Scenario agent_view(const Scenario& scenario, const SpeakerId& agent);

/// Four agents play out the scenario. In each session the partner agent
/// opens, the two alternate up to max_turns utterances, then both run
/// end_session on their own episode. Throws ScenarioError for an invalid
/// scenario; backend and embedding errors propagate.
SelfPlayResult run_selfplay(const Scenario& scenario, const BackendFor& backends, const Embedder& embedder,
                            const SelfPlayConfig& config);
SelfPlayResult run_selfplay(const Scenario& scenario, Backend& backend, const Embedder& embedder,
                            const SelfPlayConfig& config);

}  // namespace egomem
