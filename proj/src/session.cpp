#include "egomem/session.hpp"

#include <algorithm>

#include "egomem/error.hpp"

namespace egomem {

const SpeakerProfile* Scenario::find(const SpeakerId& id) const noexcept {
    for (const auto& s : speakers) {
        if (s.id == id) return &s;
    }
    return nullptr;
}

const SpeakerProfile* Scenario::find_by_name(std::string_view name) const noexcept {
    const auto wanted = trim(name);
    for (const auto& s : speakers) {
        if (trim(s.name) == wanted) return &s;
    }
    return nullptr;
}

const SpeakerProfile* Scenario::main_speaker() const noexcept {
    for (const auto& s : speakers) {
        if (s.is_main) return &s;
    }
    return nullptr;
}

std::set<SpeakerId> Scenario::roster() const {
    std::set<SpeakerId> out;
    for (const auto& s : speakers) out.insert(s.id);
    return out;
}

std::vector<Violation> validate_scenario(const Scenario& scenario, const ScenarioShape& shape) {
    std::vector<Violation> out;
    auto flag = [&](std::string rule, std::string message, std::string where = {}) {
        out.push_back({std::move(rule), std::move(message), std::move(where)});
    };

    if (scenario.speakers.size() != shape.speakers) {
        flag("R1", "expected " + std::to_string(shape.speakers) + " speakers, got " +
                       std::to_string(scenario.speakers.size()),
             "scenario.speakers");
    }
    const auto mains = std::count_if(scenario.speakers.begin(), scenario.speakers.end(),
                                     [](const SpeakerProfile& s) { return s.is_main; });
    if (mains != 1) {
        flag("R1", "expected exactly 1 main speaker, got " + std::to_string(mains),
             "scenario.speakers");
    }
    std::set<SpeakerId> ids;
    for (std::size_t i = 0; i < scenario.speakers.size(); ++i) {
        const auto& s = scenario.speakers[i];
        const auto where = "scenario.speakers[" + std::to_string(i) + "]";
        if (s.id.value.empty()) flag("R1", "speaker id is empty", where);
        if (trim(s.name).empty()) flag("R1", "speaker name is empty", where);
        if (!ids.insert(s.id).second) flag("R1", "duplicate speaker id '" + s.id.value + "'", where);
    }

    if (scenario.events.size() != shape.sessions) {
        flag("R2", "expected " + std::to_string(shape.sessions) + " session events, got " +
                       std::to_string(scenario.events.size()),
             "scenario.events");
    }
    const auto* main = scenario.main_speaker();
    std::set<SpeakerId> used;
    for (std::size_t i = 0; i < scenario.events.size(); ++i) {
        const auto& ev = scenario.events[i];
        const auto where = "scenario.events[" + std::to_string(i) + "]";
        if (!ids.contains(ev.partner)) {
            flag("R2", "event partner '" + ev.partner.value + "' is not in the roster", where);
        } else if (main != nullptr && ev.partner == main->id) {
            flag("R2", "event partner is the main speaker", where);
        }
        used.insert(ev.partner);
    }

    if (shape.require_partner_coverage) {
        for (const auto& s : scenario.speakers) {
            if (s.is_main || used.contains(s.id)) continue;
            flag("R3", "speaker '" + s.name + "' participates in no session", "scenario.speakers");
        }
    }
    return out;
}

std::string build_context_text(const SessionState& session, const Scenario& scenario) {
    if (session.turns.empty()) {
        throw Error(ErrorCode::EmptySession, "session " + std::to_string(session.index) + " has no turns");
    }
    std::string out;
    for (const auto& turn : session.turns) {
        if (!out.empty()) out += '\n';
        const auto* who = scenario.find(turn.speaker);
        out += who != nullptr ? who->name : turn.speaker.value;
        out += ": ";
        out += turn.text;
    }
    return out;
}

}  // namespace egomem
