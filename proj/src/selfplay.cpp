#include "egomem/selfplay.hpp"

#include "egomem/error.hpp"

namespace egomem {

Scenario agent_view(const Scenario& scenario, const SpeakerId& agent) {
    const auto* main = scenario.main_speaker();
    if (main == nullptr) throw ScenarioError({{"R1", "scenario has no main speaker", "scenario.speakers"}});
    if (agent == main->id) return scenario;

    Scenario view;
    view.topic = scenario.topic;
    for (auto s : scenario.speakers) {
        s.is_main = s.id == agent;
        view.speakers.push_back(std::move(s));
    }
    for (const auto& ev : scenario.events) {
        if (ev.partner == agent) view.events.push_back({ev.description, main->id});
    }
    return view;
}

SelfPlayResult run_selfplay(const Scenario& scenario, const BackendFor& backends, const Embedder& embedder,
                            const SelfPlayConfig& config) {
    EngineOptions main_opts;
    main_opts.max_turns = config.max_turns;
    main_opts.transitive_expansion = config.transitive_expansion;
    Episode main_ep = Episode::start(scenario, main_opts);
    const SpeakerId main_id = main_ep.main().id;

    std::map<SpeakerId, Episode> others;
    for (const auto& s : scenario.speakers) {
        if (s.id == main_id) continue;
        auto view = agent_view(scenario, s.id);
        EngineOptions opts = main_opts;
        opts.shape = {scenario.speakers.size(), view.events.size(), false};
        others.emplace(s.id, Episode::start(std::move(view), opts));
    }

    for (const auto& ev : scenario.events) {
        Episode& partner_ep = others.at(ev.partner);
        Backend& main_backend = backends(main_id);
        Backend& partner_backend = backends(ev.partner);
        main_ep.start_session(ev.partner);
        partner_ep.start_session(main_id);

        const bool first_session = main_ep.completed_sessions() == 0;
        for (int turn = 0; turn < config.max_turns; ++turn) {
            if (turn % 2 == 0) {
                std::string text;
                if (turn == 0 && first_session && config.opening_utterance) {
                    text = *config.opening_utterance;
                    partner_ep.add_own_utterance(text);
                } else {
                    text = partner_ep.respond(partner_backend, embedder).reply;
                }
                main_ep.add_partner_utterance(text);
            } else {
                const auto text = main_ep.respond(main_backend, embedder).reply;
                partner_ep.add_partner_utterance(text);
            }
        }
        main_ep.end_session(main_backend);
        partner_ep.end_session(partner_backend);
    }

    SelfPlayResult out;
    out.record = main_ep.to_record();
    out.agents.emplace(main_id, out.record);
    for (const auto& [id, ep] : others) out.agents.emplace(id, ep.to_record());
    out.record.provenance = {{"generator", "selfplay"},
                             {"seed", config.seed},
                             {"max_turns", config.max_turns}};
    return out;
}

SelfPlayResult run_selfplay(const Scenario& scenario, Backend& backend, const Embedder& embedder,
                            const SelfPlayConfig& config) {
    return run_selfplay(
        scenario, [&backend](const SpeakerId&) -> Backend& { return backend; }, embedder, config);
}

}  // namespace egomem
