#include "egomem/orchestrator.hpp"

#include "egomem/error.hpp"

namespace egomem {

Episode::Episode(Scenario scenario, EngineOptions options)
    : scenario_(std::move(scenario)), options_(options), store_(scenario_.roster()) {}

Episode Episode::start(Scenario scenario, EngineOptions options) {
    auto violations = validate_scenario(scenario, options.shape);
    if (!violations.empty()) throw ScenarioError(std::move(violations));
    return Episode(std::move(scenario), options);
}

SessionState& Episode::require_open() {
    if (!current_) throw Error(ErrorCode::NoOpenSession, "no session is open");
    return *current_;
}

const SpeakerProfile& Episode::partner_of(const SessionState& s) const { return *scenario_.find(s.partner); }

int Episode::start_session(const SpeakerId& partner) {
    if (current_) throw Error(ErrorCode::SessionOpen, "session " + std::to_string(current_->index) + " is still open");
    if (sessions_.size() >= options_.shape.sessions) {
        throw Error(ErrorCode::EpisodeComplete,
                    "episode already has " + std::to_string(sessions_.size()) + " sessions");
    }
    if (scenario_.find(partner) == nullptr) {
        throw Error(ErrorCode::UnknownSpeaker, "unknown partner '" + partner.value + "'");
    }
    if (partner == main().id) throw Error(ErrorCode::MainAsPartner, "the main speaker cannot be the partner");

    SessionState s;
    s.index = static_cast<int>(sessions_.size()) + 1;
    s.partner = partner;
    s.max_turns = options_.max_turns;
    current_ = std::move(s);
    last_evidence_.reset();
    return current_->index;
}

void Episode::add_partner_utterance(std::string_view text) {
    auto& s = require_open();
    if (static_cast<int>(s.turns.size()) >= s.max_turns) {
        throw Error(ErrorCode::TurnLimitReached, "session " + std::to_string(s.index) + " reached " +
                                                     std::to_string(s.max_turns) + " turns");
    }
    if (!s.turns.empty() && s.turns.back().speaker == s.partner) {
        throw Error(ErrorCode::WrongTurnOrder, "the partner already has the floor");
    }
    if (trim(text).empty()) throw Error(ErrorCode::EmptyText, "utterance is empty");
    s.turns.push_back({s.partner, std::string(trim(text)), {}});
}

void Episode::add_own_utterance(std::string_view text) {
    auto& s = require_open();
    if (static_cast<int>(s.turns.size()) >= s.max_turns) {
        throw Error(ErrorCode::TurnLimitReached, "session " + std::to_string(s.index) + " reached " +
                                                     std::to_string(s.max_turns) + " turns");
    }
    if (!s.turns.empty() && s.turns.back().speaker == main().id) {
        throw Error(ErrorCode::WrongTurnOrder, "the main speaker already has the floor");
    }
    if (trim(text).empty()) throw Error(ErrorCode::EmptyText, "utterance is empty");
    s.turns.push_back({main().id, std::string(trim(text)), {}});
}

MemoryEvidence Episode::evidence_for(const RetrievalResult& result) const {
    MemoryEvidence ev;
    ev.primary = {result.primary, store_.get_memory(result.primary).text};
    ev.score = result.score;
    for (const auto id : result.expansion) ev.links.push_back({id, store_.get_memory(id).text});
    return ev;
}

TurnResult Episode::respond(Backend& backend, const Embedder& embedder) {
    auto& s = require_open();
    if (static_cast<int>(s.turns.size()) >= s.max_turns) {
        throw Error(ErrorCode::TurnLimitReached, "session " + std::to_string(s.index) + " reached " +
                                                     std::to_string(s.max_turns) + " turns");
    }
    if (!s.turns.empty() && s.turns.back().speaker == main().id) {
        throw Error(ErrorCode::WrongTurnOrder, "waiting for the partner to speak");
    }

    std::string context;
    if (!s.turns.empty()) {
        context = build_context_text(s, scenario_);
    } else if (s.index >= 1 && static_cast<std::size_t>(s.index) <= scenario_.events.size()) {
        context = scenario_.events[static_cast<std::size_t>(s.index) - 1].description;
    }

    TurnResult out;
    if (!context.empty()) {
        RetrievalOptions ro;
        ro.exclude_session = options_.exclude_current_session ? s.index : 0;
        ro.transitive_expansion = options_.transitive_expansion;
        if (auto hit = retrieve(context, store_, graph_, embedder, ro)) out.used = evidence_for(*hit);
    }
    const auto seq = build_reply_sequence(main(), partner_of(s), out.used, s.index, s.turns);
    out.reply = std::string(trim(backend.complete(seq)));
    if (out.reply.empty()) throw Error(ErrorCode::EmptyText, "backend returned an empty reply");

    s.turns.push_back({main().id, out.reply, {}});
    if (out.used) last_evidence_ = out.used;
    return out;
}

TurnResult Episode::take_turn(std::string_view user_text, Backend& backend, const Embedder& embedder) {
    auto& s = require_open();
    if (static_cast<int>(s.turns.size()) + 2 > s.max_turns) {
        throw Error(ErrorCode::TurnLimitReached, "session " + std::to_string(s.index) + " reached " +
                                                     std::to_string(s.max_turns) + " turns");
    }
    if (!s.turns.empty() && s.turns.back().speaker == s.partner) {
        throw Error(ErrorCode::WrongTurnOrder, "the previous partner utterance has no reply yet");
    }
    add_partner_utterance(user_text);
    try {
        return respond(backend, embedder);
    } catch (...) {
        current_->turns.pop_back();
        throw;
    }
}

EndSessionResult Episode::end_session(Backend& backend) {
    auto& s = require_open();
    if (s.turns.empty()) throw Error(ErrorCode::EmptySession, "session " + std::to_string(s.index) + " has no turns");

    const auto& me = main();
    const auto& partner = partner_of(s);
    const auto final_seq = build_final_sequence(me, partner, last_evidence_, s.index, s.turns);

    const auto about_main = parse_summary_output(backend.complete(build_summarize_sequence(me.name, final_seq)));
    const auto about_partner =
        parse_summary_output(backend.complete(build_summarize_sequence(partner.name, final_seq)));

    MemoryStore store = store_;
    LinkGraph graph = graph_;
    EndSessionResult out;
    for (const auto& text : about_main) out.new_memories.push_back(store.add_memory(me.id, me.id, text, s.index));
    for (const auto& text : about_partner) {
        out.new_memories.push_back(store.add_memory(me.id, partner.id, text, s.index));
    }

    out.new_links = graph.connect_new_memories(store, out.new_memories,
                                               [&](const MemoryEntry& a, const MemoryEntry& b) {
                                                   return parse_link_output(
                                                       backend.complete(build_link_sequence(a.text, b.text)));
                                               });

    store_ = std::move(store);
    graph_ = std::move(graph);
    s.closed = true;
    sessions_.push_back(std::move(s));
    current_.reset();
    last_evidence_.reset();
    return out;
}

EpisodeRecord Episode::to_record() const {
    EpisodeRecord r;
    r.scenario = scenario_;
    r.sessions = sessions_;
    if (current_) r.sessions.push_back(*current_);
    r.memories = store_.entries();
    r.links.assign(graph_.links().begin(), graph_.links().end());
    return r;
}

Episode Episode::from_record(const EpisodeRecord& record, EngineOptions options) {
    Episode ep = start(record.scenario, options);
    for (const auto& m : record.memories) ep.store_.restore(m);
    for (const auto& l : record.links) ep.graph_.add_link(l.lo, l.hi, ep.store_);
    for (const auto& s : record.sessions) {
        SessionState copy = s;
        copy.max_turns = options.max_turns;
        if (s.closed) {
            ep.sessions_.push_back(std::move(copy));
        } else {
            ep.current_ = std::move(copy);
        }
    }
    return ep;
}

}  // namespace egomem
