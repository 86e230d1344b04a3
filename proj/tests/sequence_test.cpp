#include "doctest.h"
#include "egomem/error.hpp"
#include "egomem/sequence.hpp"
#include "support.hpp"

using namespace egomem;

namespace {

const SpeakerProfile kAlice{SpeakerId("s1"), "Alice", "Bob's teacher", true};
const SpeakerProfile kBob{SpeakerId("s2"), "Bob", "Student", false};
const SpeakerProfile kHenry{SpeakerId("s3"), "Henry", "Bob's father", false};

std::string golden(const std::string& name) { return test::read_file(test::fixture("golden/" + name)); }

Utterance u(const SpeakerProfile& who, std::string text) { return {who.id, std::move(text), {}}; }

MemoryEvidence help_evidence() {
    MemoryEvidence ev;
    ev.primary = {2, "I am willing to help Bob with his grades."};
    ev.score = 0.5;
    ev.links = {{3, "Bob is worried his grades are not good enough for college."}};
    return ev;
}

}  // namespace

TEST_CASE("reply sequence without retrieval") {
    const SpeakerProfile a{SpeakerId("a"), "A", "teacher", true};
    const SpeakerProfile b{SpeakerId("b"), "B", "student", false};
    const std::vector<Utterance> turns{u(b, "Hi")};
    const auto seq = build_reply_sequence(a, b, std::nullopt, 2, turns);
    CHECK(seq.task == Task::Reply);
    CHECK(seq.rendered == "generation: [A] teacher [B] student [NOW] 2 [USER] Hi [BOT]");
}

TEST_CASE("reply sequence goldens") {
    {
        const std::vector<Utterance> turns{u(kBob, "I'm worried my grades are not good enough for college.")};
        CHECK(build_reply_sequence(kAlice, kBob, std::nullopt, 1, turns).rendered == golden("reply_cold.txt"));
    }
    {
        const std::vector<Utterance> turns{u(kHenry, "Could I discuss my child with you, please?")};
        const auto seq = build_reply_sequence(kAlice, kHenry, help_evidence(), 2, turns);
        CHECK(seq.rendered == golden("reply.txt"));
        CHECK(seq.rendered.rfind("generation:", 0) == 0);
    }
    {
        auto ev = help_evidence();
        ev.links.push_back({4, "Bob asked me to talk to his parents."});
        const std::vector<Utterance> turns{u(kHenry, "Could I discuss my child with you, please?"),
                                           u(kAlice, "Of course, I was hoping we could talk."),
                                           u(kHenry, "He says his grades worry him.")};
        CHECK(build_reply_sequence(kAlice, kHenry, ev, 2, turns).rendered == golden("reply_links.txt"));
    }
    {
        const std::vector<MemoryEvidence> groups{help_evidence(),
                                                {{5, "Henry wants to discuss Bob's situation with me."}, 0.1, {}}};
        const std::vector<Utterance> turns{u(kHenry, "Thank you for helping Bob, his mood is much better."),
                                           u(kAlice, "I am glad to hear that, he worked hard."),
                                           u(kHenry, "Is there anything we can do at home?")};
        CHECK(build_reply_sequence(kAlice, kHenry, groups, 5, turns).rendered == golden("reply_groups.txt"));
    }
}

TEST_CASE("one memory block per retrieval") {
    const std::vector<Utterance> turns{u(kHenry, "Hello there, teacher.")};
    const auto r = build_reply_sequence(kAlice, kHenry, help_evidence(), 2, turns).rendered;
    auto count = [&](std::string_view tok) {
        std::size_t n = 0;
        for (auto pos = r.find(tok); pos != std::string::npos; pos = r.find(tok, pos + 1)) ++n;
        return n;
    };
    CHECK(count("[MEMORY]") == 1);
    CHECK(count("[LINK]") == 1);
}

TEST_CASE("reply sequence turn order") {
    CHECK_NOTHROW(build_reply_sequence(kAlice, kBob, std::nullopt, 1, {}));
    const std::vector<Utterance> ends_with_bot{u(kBob, "Hi"), u(kAlice, "Hello")};
    try {
        build_reply_sequence(kAlice, kBob, std::nullopt, 1, ends_with_bot);
        FAIL("expected MalformedTurnOrder");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::MalformedTurnOrder);
    }
}

TEST_CASE("final and summarize sequences") {
    const std::vector<Utterance> turns{u(kHenry, "Could I discuss my child with you, please?"),
                                       u(kAlice, "Of course, Bob has been struggling with his grades lately.")};
    const auto final_seq = build_final_sequence(kAlice, kHenry, help_evidence(), 2, turns);
    CHECK(final_seq.rendered == golden("final.txt"));

    const auto sum = build_summarize_sequence("Henry", final_seq);
    CHECK(sum.task == Task::Summarize);
    CHECK(sum.rendered == golden("summarize.txt"));
    CHECK(sum.rendered.rfind("summarize [Henry]: generation:", 0) == 0);
    CHECK(build_summarize_sequence("Alice", final_seq).rendered.rfind("summarize [Alice]: generation:", 0) == 0);

    const auto stripped = strip_summarize_prefix(sum.rendered, "Henry");
    REQUIRE(stripped.has_value());
    CHECK(*stripped == final_seq.rendered);
    CHECK_FALSE(strip_summarize_prefix(sum.rendered, "Alice").has_value());
}

TEST_CASE("summary output parsing") {
    CHECK(parse_summary_output("[NONE]").empty());
    CHECK(parse_summary_output("  [NONE] \n").empty());
    CHECK(parse_summary_output("A. [SEP] B.") == std::vector<std::string>{"A.", "B."});
    CHECK(parse_summary_output(" A. [SEP] [SEP] B. ") == std::vector<std::string>{"A.", "B."});
    CHECK(parse_summary_output("Only one.") == std::vector<std::string>{"Only one."});
    CHECK(parse_summary_output("").empty());
    for (const auto& s : parse_summary_output("[SEP] x [SEP]  [SEP]")) CHECK_FALSE(s.empty());
}

TEST_CASE("link sequence") {
    const auto seq = build_link_sequence("a", "b");
    CHECK(seq.task == Task::LinkClassify);
    CHECK(seq.rendered == "memory sentence 1: a memory sentence 2: b");
    CHECK(build_link_sequence("b", "a").rendered != seq.rendered);
    CHECK(build_link_sequence("I am willing to help Bob with his grades.",
                              "Bob is worried his grades are not good enough for college.")
              .rendered == golden("link.txt"));
    CHECK_THROWS_AS(build_link_sequence("  ", "b"), Error);
}

TEST_CASE("link label parsing") {
    CHECK(parse_link_output("positive"));
    CHECK_FALSE(parse_link_output(" Negative "));
    CHECK(parse_link_output("POSITIVE\n"));
    try {
        parse_link_output("maybe");
        FAIL("expected UnparseableLabel");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnparseableLabel);
    }
}
