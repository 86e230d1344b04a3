#include <map>
#include <memory>

#include "doctest.h"
#include "egomem/error.hpp"
#include "egomem/selfplay.hpp"
#include "support.hpp"

using namespace egomem;

namespace {

const SpeakerId kAlice("s1");
const SpeakerId kBob("s2");
const SpeakerId kGrace("s4");

std::uint64_t hash_of(std::string_view s) {
    return fnv1a64({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
}

// Output depends only on the rendered text.
std::string pure_reply(const GenerationSequence& s) {
    const auto h = hash_of(s.rendered);
    switch (s.task) {
        case Task::Reply: return "Utterance number " + std::to_string(h % 997) + ".";
        case Task::Summarize:
            return h % 3 == 0 ? "[NONE]" : "Fact " + std::to_string(h % 89) + ". [SEP] Fact " + std::to_string(h % 83) + ".";
        case Task::LinkClassify: return h % 4 == 0 ? "positive" : "negative";
        default: return "";
    }
}

SelfPlayResult play(const SelfPlayConfig& cfg) {
    test::FnBackend backend(pure_reply);
    HashedEmbedder emb;
    return run_selfplay(test::school_scenario(), backend, emb, cfg);
}

}  // namespace

TEST_CASE("agent view") {
    const auto sc = test::school_scenario();
    CHECK(agent_view(sc, kAlice) == sc);
    const auto bob = agent_view(sc, kBob);
    CHECK(bob.main_speaker()->id == kBob);
    REQUIRE(bob.events.size() == 2);
    for (const auto& e : bob.events) CHECK(e.partner == kAlice);
    CHECK(bob.events[0].description == sc.events[0].description);
    CHECK(bob.events[1].description == sc.events[2].description);
}

TEST_CASE("self-play transcript structure") {
    SelfPlayConfig cfg;
    cfg.seed = 5;
    cfg.opening_utterance = "Hi Alice, do you have a minute to talk?";
    const auto r = play(cfg);
    const auto sc = test::school_scenario();
    REQUIRE(r.record.sessions.size() == 6);
    for (std::size_t k = 0; k < 6; ++k) {
        const auto& s = r.record.sessions[k];
        CHECK(s.index == static_cast<int>(k + 1));
        CHECK(s.partner == sc.events[k].partner);
        REQUIRE(s.turns.size() == 8);
        for (std::size_t t = 0; t < s.turns.size(); ++t) {
            CHECK(s.turns[t].speaker == (t % 2 == 0 ? s.partner : kAlice));
        }
        CHECK(s.closed);
    }
    CHECK(r.record.sessions[0].turns[0].text == *cfg.opening_utterance);
    CHECK(r.record.provenance["generator"] == "selfplay");
    CHECK(r.record.provenance["seed"] == 5);
}

TEST_CASE("every agent keeps its own egocentric store over shared sessions") {
    const auto r = play(SelfPlayConfig{});
    REQUIRE(r.agents.size() == 4);
    auto main_copy = r.record;
    main_copy.provenance = nlohmann::json::object();
    CHECK(r.agents.at(kAlice) == main_copy);

    for (const auto& [id, rec] : r.agents) {
        for (const auto& m : rec.memories) CHECK(m.perspective == id);
        if (id == kAlice) continue;
        // The agent's sessions are exactly the main sessions it took part in, same words.
        std::vector<const SessionState*> shared;
        for (const auto& s : r.record.sessions) {
            if (s.partner == id) shared.push_back(&s);
        }
        REQUIRE(rec.sessions.size() == shared.size());
        for (std::size_t i = 0; i < shared.size(); ++i) {
            CHECK(rec.sessions[i].partner == kAlice);
            REQUIRE(rec.sessions[i].turns.size() == shared[i]->turns.size());
            for (std::size_t t = 0; t < shared[i]->turns.size(); ++t) {
                CHECK(rec.sessions[i].turns[t].speaker == shared[i]->turns[t].speaker);
                CHECK(rec.sessions[i].turns[t].text == shared[i]->turns[t].text);
            }
        }
        for (const auto& m : rec.memories) {
            CHECK(m.source_session >= 1);
            CHECK(m.source_session <= static_cast<int>(rec.sessions.size()));
            CHECK((m.subject == id || m.subject == kAlice));
        }
    }
}

TEST_CASE("agents outside a session are never consulted for it") {
    std::map<std::string, std::unique_ptr<test::FnBackend>> per_agent;
    for (const char* id : {"s1", "s2", "s3", "s4"}) per_agent.emplace(id, std::make_unique<test::FnBackend>(pure_reply));
    HashedEmbedder emb;
    run_selfplay(
        test::school_scenario(), [&](const SpeakerId& id) -> Backend& { return *per_agent.at(id.value); }, emb,
        SelfPlayConfig{});
    // Grace's first call opens her own first session, which is main session 4.
    const auto grace_calls = per_agent.at("s4")->calls();
    REQUIRE_FALSE(grace_calls.empty());
    CHECK(grace_calls.front().rendered ==
          "generation: [Grace] School counselor [Alice] Bob's teacher [NOW] 1 [BOT]");
    for (const auto& c : per_agent.at("s2")->calls()) CHECK(c.rendered.find("[Grace]") == std::string::npos);
    for (const auto& c : per_agent.at("s1")->calls()) {
        if (c.task == Task::Reply) CHECK(c.rendered.rfind("generation: [Alice] Bob's teacher", 0) == 0);
    }
}

TEST_CASE("self-play is deterministic") {
    SelfPlayConfig cfg;
    cfg.seed = 11;
    const auto a = play(cfg);
    const auto b = play(cfg);
    CHECK(canonical_line(a.record) == canonical_line(b.record));
    CHECK(a.agents == b.agents);
    CHECK_FALSE(a.record.memories.empty());
}

TEST_CASE("self-play rejects invalid scenarios") {
    auto sc = test::school_scenario();
    sc.events.pop_back();
    test::FnBackend backend(pure_reply);
    HashedEmbedder emb;
    CHECK_THROWS_AS(run_selfplay(sc, backend, emb, SelfPlayConfig{}), ScenarioError);
}
