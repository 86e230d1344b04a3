#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "egomem/backend.hpp"
#include "egomem/dataset.hpp"
#include "egomem/link_graph.hpp"
#include "egomem/memory.hpp"
#include "egomem/retrieval.hpp"
#include "egomem/sequence.hpp"
#include "egomem/session.hpp"

namespace egomem {

struct EngineOptions {
    ScenarioShape shape;
    /// Utterance cap per session (both speakers counted).
    int max_turns = 8;
    /// Memories from the session in progress are not retrieval candidates.
    bool exclude_current_session = true;
    bool transitive_expansion = false;
};

struct TurnResult {
    std::string reply;
    std::optional<MemoryEvidence> used;
};

struct EndSessionResult {
    std::vector<MemoryId> new_memories;
    std::vector<MemoryLink> new_links;
};

/// One Mixed-Session episode from a single agent's point of view: the
/// scenario's main speaker is the agent, every memory is written from its
/// perspective. Not thread-safe; callers serialize access per episode.
class Episode {
public:
    /// Throws ScenarioError listing every violated rule.
    static Episode start(Scenario scenario, EngineOptions options = {});

    /// Opens the next session with `partner`. Throws Error{SessionOpen},
    /// Error{EpisodeComplete}, Error{UnknownSpeaker}, Error{MainAsPartner}.
    int start_session(const SpeakerId& partner);

    /// Appends the partner's utterance, retrieves from earlier sessions and
    /// generates the main speaker's reply. On any failure the session is
    /// left exactly as it was.
    TurnResult take_turn(std::string_view user_text, Backend& backend, const Embedder& embedder);

    /// Lower-level halves of take_turn, used by self-play.
    void add_partner_utterance(std::string_view text);
    void add_own_utterance(std::string_view text);
    /// Generates the main speaker's next utterance. With no turns yet the
    /// session's event description (if any) serves as retrieval context.
    TurnResult respond(Backend& backend, const Embedder& embedder);

    /// Summarizes the session into memories about main then partner, links
    /// them, and archives the session. State is unchanged on failure.
    EndSessionResult end_session(Backend& backend);

    const Scenario& scenario() const noexcept { return scenario_; }
    const SpeakerProfile& main() const noexcept { return *scenario_.main_speaker(); }
    const EngineOptions& options() const noexcept { return options_; }
    const std::vector<SessionState>& sessions() const noexcept { return sessions_; }
    const std::optional<SessionState>& current() const noexcept { return current_; }
    const MemoryStore& store() const noexcept { return store_; }
    const LinkGraph& graph() const noexcept { return graph_; }
    int completed_sessions() const noexcept { return static_cast<int>(sessions_.size()); }

    /// Resolves a RetrievalResult's ids into texts.
    MemoryEvidence evidence_for(const RetrievalResult& result) const;

    /// Snapshot in dataset form; an open session is included with closed=false.
    EpisodeRecord to_record() const;
    /// Rebuilds an episode from a record (validates the scenario only).
    static Episode from_record(const EpisodeRecord& record, EngineOptions options = {});

private:
    Episode(Scenario scenario, EngineOptions options);

    SessionState& require_open();
    const SpeakerProfile& partner_of(const SessionState& s) const;

    Scenario scenario_;
    EngineOptions options_;
    std::vector<SessionState> sessions_;
    std::optional<SessionState> current_;
    std::optional<MemoryEvidence> last_evidence_;
    MemoryStore store_;
    LinkGraph graph_;
};

}  // namespace egomem
