#include <cmath>
#include <set>

#include "doctest.h"
#include "egomem/error.hpp"
#include "egomem/orchestrator.hpp"
#include "egomem/rng.hpp"
#include "support.hpp"

using namespace egomem;

namespace {

const SpeakerId kAlice("s1");
const SpeakerId kBob("s2");
const SpeakerId kHenry("s3");
const SpeakerId kGrace("s4");

ErrorCode code_of(const auto& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::IoError;
}

std::set<std::string> rules_of(const Scenario& sc) {
    try {
        Episode::start(sc);
    } catch (const ScenarioError& e) {
        CHECK(e.code() == ErrorCode::InvalidScenario);
        std::set<std::string> out;
        for (const auto& v : e.violations()) out.insert(v.rule);
        return out;
    }
    return {};
}

// Summaries keyed by the "About" name; link labels from a pair predicate.
test::FnBackend scripted_memories(std::string about_main, std::string about_partner,
                                  std::function<bool(const std::string&)> link = {}) {
    return test::FnBackend([=](const GenerationSequence& s) -> std::string {
        switch (s.task) {
            case Task::Reply: return "Reply from the main speaker.";
            case Task::Summarize: return s.rendered.rfind("summarize [Alice]:", 0) == 0 ? about_main : about_partner;
            case Task::LinkClassify: return link && link(s.rendered) ? "positive" : "negative";
            default: return "";
        }
    });
}

double naive_cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.dim(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return na == 0 || nb == 0 ? 0.0 : dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace

TEST_CASE("starting an episode validates the scenario") {
    const auto ep = Episode::start(test::school_scenario());
    CHECK(ep.sessions().empty());
    CHECK_FALSE(ep.current().has_value());
    CHECK(ep.store().empty());
    CHECK(ep.graph().empty());
    CHECK(ep.main().name == "Alice");

    auto three = test::school_scenario();
    three.speakers.pop_back();
    for (auto& e : three.events) {
        if (e.partner == kGrace) e.partner = kBob;
    }
    CHECK(rules_of(three).contains("R1"));

    auto idle = test::school_scenario();
    for (auto& e : idle.events) {
        if (e.partner == kGrace) e.partner = kHenry;
    }
    CHECK(rules_of(idle) == std::set<std::string>{"R3"});

    auto five = test::school_scenario();
    five.events.pop_back();
    CHECK(rules_of(five).contains("R2"));

    auto no_main = test::school_scenario();
    no_main.speakers[0].is_main = false;
    CHECK(rules_of(no_main).contains("R1"));
}

TEST_CASE("session lifecycle errors") {
    auto ep = Episode::start(test::school_scenario());
    auto backend = scripted_memories("[NONE]", "[NONE]");
    HashedEmbedder emb;
    CHECK(code_of([&] { ep.end_session(backend); }) == ErrorCode::NoOpenSession);
    CHECK(code_of([&] { ep.start_session(kAlice); }) == ErrorCode::MainAsPartner);
    CHECK(code_of([&] { ep.start_session(SpeakerId("nobody")); }) == ErrorCode::UnknownSpeaker);
    CHECK(ep.start_session(kBob) == 1);
    CHECK(code_of([&] { ep.start_session(kHenry); }) == ErrorCode::SessionOpen);
    CHECK(code_of([&] { ep.end_session(backend); }) == ErrorCode::EmptySession);
    CHECK(code_of([&] { ep.take_turn("   ", backend, emb); }) == ErrorCode::EmptyText);
    CHECK(ep.current()->turns.empty());

    ep.take_turn("Hello, teacher.", backend, emb);
    ep.end_session(backend);
    for (int k = 2; k <= 6; ++k) {
        CHECK(ep.start_session(k % 2 ? kBob : kGrace) == k);
        ep.take_turn("Hello again, teacher.", backend, emb);
        ep.end_session(backend);
    }
    CHECK(code_of([&] { ep.start_session(kBob); }) == ErrorCode::EpisodeComplete);
    std::vector<int> idx;
    for (const auto& s : ep.sessions()) {
        idx.push_back(s.index);
        CHECK(s.closed);
    }
    CHECK(idx == std::vector<int>{1, 2, 3, 4, 5, 6});
}

TEST_CASE("cold start turn has no memory block") {
    auto ep = Episode::start(test::school_scenario());
    auto backend = scripted_memories("[NONE]", "[NONE]");
    HashedEmbedder emb;
    ep.start_session(kBob);
    const auto r = ep.take_turn("I'm worried about my grades.", backend, emb);
    CHECK(r.reply == "Reply from the main speaker.");
    CHECK_FALSE(r.used.has_value());
    const auto calls = backend.calls();
    REQUIRE(calls.size() == 1);
    CHECK(calls[0].task == Task::Reply);
    CHECK(calls[0].rendered ==
          "generation: [Alice] Bob's teacher [Bob] Student [NOW] 1 [USER] I'm worried about my grades. [BOT]");
    REQUIRE(ep.current()->turns.size() == 2);
    CHECK(ep.current()->turns[1].speaker == kAlice);
}

TEST_CASE("turn cap counts utterances") {
    auto ep = Episode::start(test::school_scenario());
    auto backend = scripted_memories("[NONE]", "[NONE]");
    HashedEmbedder emb;
    ep.start_session(kBob);
    for (int i = 0; i < 4; ++i) ep.take_turn("Partner line " + std::to_string(i), backend, emb);
    CHECK(ep.current()->turns.size() == 8);
    CHECK(code_of([&] { ep.take_turn("one more", backend, emb); }) == ErrorCode::TurnLimitReached);
    CHECK(code_of([&] { ep.add_partner_utterance("ninth utterance"); }) == ErrorCode::TurnLimitReached);
    CHECK(ep.current()->turns.size() == 8);

    EngineOptions odd;
    odd.max_turns = 3;
    auto ep2 = Episode::start(test::school_scenario(), odd);
    ep2.start_session(kBob);
    ep2.take_turn("first", backend, emb);
    // A third utterance fits but a full exchange does not.
    CHECK(code_of([&] { ep2.take_turn("second", backend, emb); }) == ErrorCode::TurnLimitReached);
    ep2.add_partner_utterance("third utterance");
    CHECK(code_of([&] { ep2.respond(backend, emb); }) == ErrorCode::TurnLimitReached);
}

TEST_CASE("turn order") {
    auto ep = Episode::start(test::school_scenario());
    auto backend = scripted_memories("[NONE]", "[NONE]");
    HashedEmbedder emb;
    ep.start_session(kBob);
    ep.add_partner_utterance("I spoke first.");
    CHECK(code_of([&] { ep.take_turn("again", backend, emb); }) == ErrorCode::WrongTurnOrder);
    CHECK(code_of([&] { ep.add_partner_utterance("again"); }) == ErrorCode::WrongTurnOrder);
    ep.add_own_utterance("I answer.");
    CHECK(code_of([&] { ep.add_own_utterance("twice"); }) == ErrorCode::WrongTurnOrder);
    CHECK(code_of([&] { ep.respond(backend, emb); }) == ErrorCode::WrongTurnOrder);
}

TEST_CASE("take_turn is atomic on backend failure") {
    auto ep = Episode::start(test::school_scenario());
    HashedEmbedder emb;
    test::FnBackend failing([](const GenerationSequence&) -> std::string {
        throw Error(ErrorCode::HttpError, "upstream down");
    });
    ep.start_session(kBob);
    const auto before = ep.to_record();
    CHECK(code_of([&] { ep.take_turn("Hello, teacher.", failing, emb); }) == ErrorCode::HttpError);
    CHECK(ep.to_record() == before);

    test::FnBackend blank([](const GenerationSequence&) -> std::string { return "   "; });
    CHECK(code_of([&] { ep.take_turn("Hello, teacher.", blank, emb); }) == ErrorCode::EmptyText);
    CHECK(ep.to_record() == before);
}

TEST_CASE("end_session with no memories") {
    auto ep = Episode::start(test::school_scenario());
    auto backend = scripted_memories("[NONE]", "[NONE]");
    HashedEmbedder emb;
    ep.start_session(kBob);
    ep.take_turn("Hello, teacher.", backend, emb);
    const auto r = ep.end_session(backend);
    CHECK(r.new_memories.empty());
    CHECK(r.new_links.empty());
    CHECK(ep.completed_sessions() == 1);
    const auto calls = backend.calls();
    REQUIRE(calls.size() == 3);
    CHECK(calls[1].rendered.rfind("summarize [Alice]: generation:", 0) == 0);
    CHECK(calls[2].rendered.rfind("summarize [Bob]: generation:", 0) == 0);
}

TEST_CASE("end_session creates memories about main then partner") {
    auto ep = Episode::start(test::school_scenario());
    auto backend = scripted_memories("A first. [SEP] A second.", "C about Bob.");
    HashedEmbedder emb;
    ep.start_session(kBob);
    ep.take_turn("Hello, teacher.", backend, emb);
    const auto r = ep.end_session(backend);
    CHECK(r.new_memories == std::vector<MemoryId>{1, 2, 3});
    const auto& st = ep.store();
    CHECK(st.get_memory(1).subject == kAlice);
    CHECK(st.get_memory(2).subject == kAlice);
    CHECK(st.get_memory(3).subject == kBob);
    for (const auto& e : st.entries()) {
        CHECK(e.perspective == kAlice);
        CHECK(e.source_session == 1);
    }
    CHECK(st.get_memory(2).text == "A second.");
    // Three phase-1 pairs, no old memories.
    std::size_t link_calls = 0;
    for (const auto& c : backend.calls()) link_calls += c.task == Task::LinkClassify;
    CHECK(link_calls == 3);
}

TEST_CASE("end_session is atomic on failure") {
    HashedEmbedder emb;
    SUBCASE("summarizer failure") {
        auto ep = Episode::start(test::school_scenario());
        int n = 0;
        test::FnBackend backend([&](const GenerationSequence& s) -> std::string {
            if (s.task == Task::Summarize && ++n == 2) throw Error(ErrorCode::Timeout, "slow");
            return s.task == Task::Reply ? "ok reply" : "Something happened.";
        });
        ep.start_session(kBob);
        ep.take_turn("Hello, teacher.", backend, emb);
        const auto before = ep.to_record();
        CHECK(code_of([&] { ep.end_session(backend); }) == ErrorCode::Timeout);
        CHECK(ep.to_record() == before);
        CHECK(ep.current().has_value());
    }
    SUBCASE("link classifier failure") {
        auto ep = Episode::start(test::school_scenario());
        test::FnBackend backend([&](const GenerationSequence& s) -> std::string {
            if (s.task == Task::LinkClassify) return "unsure";
            return s.task == Task::Reply ? "ok reply" : "One. [SEP] Two.";
        });
        ep.start_session(kBob);
        ep.take_turn("Hello, teacher.", backend, emb);
        const auto before = ep.to_record();
        CHECK(code_of([&] { ep.end_session(backend); }) == ErrorCode::LinkingBackendError);
        CHECK(ep.to_record() == before);
        CHECK(ep.store().empty());
    }
}

TEST_CASE("counseling memory from the Bob session is retrieved for Henry") {
    auto ep = Episode::start(test::school_scenario());
    ScriptedBackend backend(load_script(test::fixture("scripts/counseling.jsonl")));
    HashedEmbedder emb;

    ep.start_session(kBob);
    ep.take_turn("I'm worried that my grades aren't good enough for college.", backend, emb);
    ep.take_turn("Could you possibly talk to my parents about this? They worry more than I do.", backend, emb);
    const auto end1 = ep.end_session(backend);
    REQUIRE(end1.new_memories == std::vector<MemoryId>{1, 2, 3});
    const MemoryId counseling = 2;
    CHECK(ep.store().get_memory(counseling).text.find("asked me for counseling to his parents") != std::string::npos);
    CHECK(ep.store().get_memory(counseling).subject == kAlice);
    CHECK(ep.store().get_memory(3).subject == kBob);
    CHECK(end1.new_links == std::vector<MemoryLink>{{2, 3}});

    ep.start_session(kHenry);
    const std::string henry = "Could I discuss my child with you?";
    const auto r = ep.take_turn(henry, backend, emb);

    // Brute-force argmax over prior-session memories, smallest id on ties.
    const auto q = emb.embed_context("Henry: " + henry);
    MemoryId best = 0;
    double best_score = 0;
    for (const auto& e : ep.store().entries()) {
        const double s = naive_cosine(q, emb.embed_memory(e.text));
        if (best == 0 || s > best_score) {
            best = e.id;
            best_score = s;
        }
    }
    CHECK(best == counseling);
    REQUIRE(r.used.has_value());
    CHECK(r.used->primary.id == counseling);
    CHECK(r.used->score == doctest::Approx(best_score).epsilon(1e-12));
    REQUIRE(r.used->links.size() == 1);
    CHECK(r.used->links[0].id == 3);
    CHECK(r.reply == "Of course. Bob asked me to talk with you about his grades.");
    const auto last = backend.calls().back();
    CHECK(last.rendered.find("[MEMORY] I am willing to help Bob with his grades, and he asked me for counseling to "
                             "his parents. [LINK] Bob is having") != std::string::npos);
}

TEST_CASE("retrieval excludes the session in progress") {
    EngineOptions opts;
    auto ep = Episode::start(test::school_scenario(), opts);
    auto backend = scripted_memories("Henry likes hiking.", "[NONE]");
    HashedEmbedder emb;
    ep.start_session(kHenry);
    ep.take_turn("Hello teacher.", backend, emb);
    CHECK(ep.end_session(backend).new_memories.size() == 1);
    // Walk to a state where session 2 is open; only session 1's memory is a candidate.
    ep.start_session(kBob);
    const auto r = ep.take_turn("anything at all", backend, emb);
    REQUIRE(r.used.has_value());
    CHECK(r.used->primary.id == 1);
}

TEST_CASE("records round trip through from_record") {
    auto ep = Episode::start(test::school_scenario());
    auto backend = scripted_memories("A first. [SEP] A second.", "C about Bob.",
                                     [](const std::string&) { return true; });
    HashedEmbedder emb;
    ep.start_session(kBob);
    ep.take_turn("Hello, teacher.", backend, emb);
    ep.end_session(backend);
    ep.start_session(kHenry);
    ep.take_turn("Hello, I am Henry.", backend, emb);
    const auto rec = ep.to_record();
    CHECK(rec.sessions.size() == 2);
    CHECK_FALSE(rec.sessions.back().closed);
    const auto copy = Episode::from_record(rec);
    CHECK(copy.to_record() == rec);
    CHECK(copy.current().has_value());
    CHECK(copy.graph() == ep.graph());
}

TEST_CASE("random sessions keep the memory invariants and replay identically") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        auto ep = Episode::start(test::school_scenario());
        test::FnBackend backend([&](const GenerationSequence& s) -> std::string {
            switch (s.task) {
                case Task::Reply: return "reply " + std::to_string(rng.below(1000));
                case Task::Summarize: {
                    const auto n = rng.below(3);
                    if (n == 0) return "[NONE]";
                    std::string out;
                    for (std::uint64_t i = 0; i < n; ++i) out += "fact " + std::to_string(rng.below(50)) + " [SEP] ";
                    return out;
                }
                case Task::LinkClassify: return rng.below(4) == 0 ? "positive" : "negative";
                default: return "";
            }
        });
        HashedEmbedder emb;
        for (const auto& ev : ep.scenario().events) {
            const auto idx = ep.start_session(ev.partner);
            const auto turns = 1 + rng.below(4);
            for (std::uint64_t t = 0; t < turns; ++t) ep.take_turn("line " + std::to_string(rng.below(100)), backend, emb);
            const auto r = ep.end_session(backend);
            for (const auto id : r.new_memories) {
                const auto& m = ep.store().get_memory(id);
                CHECK(m.source_session == idx);
                CHECK((m.subject == ep.main().id || m.subject == ev.partner));
            }
            for (const auto& l : ep.graph().links()) {
                CHECK(ep.store().contains(l.lo));
                CHECK(ep.store().contains(l.hi));
            }
        }
        return ep.to_record();
    };
    for (std::uint64_t seed = 0; seed < 20; ++seed) CHECK(run(seed) == run(seed));
}
