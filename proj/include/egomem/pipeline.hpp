#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "egomem/backend.hpp"
#include "egomem/dataset.hpp"
#include "egomem/session.hpp"

namespace egomem {

/// Extracts the four characters and six outlines from a scenario answer.
/// Accepts `Character k: Name-Descriptor` / `Outline k: text (Name)` and
/// the `Main Speaker:` / `Sub Speaker k:` / `Event for Session k:` layout.
/// Speakers get ids s1..s4, s1 is main. Throws Error{ScenarioParseError}
/// naming the missing or ambiguous field.
Scenario parse_scenario(std::string_view raw, std::string topic = {});

inline constexpr std::size_t kMinDialogueTurns = 6;

/// One utterance per `[Name] text` line; blank lines are skipped. Throws
/// Error{DialogueFormatError} on an off-roster marker, a line without a
/// marker, or fewer than kMinDialogueTurns utterances.
std::vector<Utterance> parse_dialogue(std::string_view raw, const SpeakerProfile& main,
                                      const SpeakerProfile& partner);

struct ParsedMemories {
    std::vector<std::string> about_main;
    std::vector<std::string> about_partner;
    bool operator==(const ParsedMemories&) const = default;
};

/// `About A: ... | About B: ... [END]`, groups in either order, `N/A` for an
/// empty list. Throws Error{MemoryFormatError}.
ParsedMemories parse_memory_output(std::string_view raw, std::string_view main_name,
                                   std::string_view partner_name);

/// Splits a memory list into sentences. Bullet or line-separated lists are
/// split per item; running text at sentence punctuation followed by an
/// upper-case start, except after common title abbreviations.
std::vector<std::string> split_sentences(std::string_view text);

using MemoryPair = std::pair<MemoryId, MemoryId>;

/// `N/A` or comma-separated `a-b`. Duplicates (in either orientation) are
/// dropped, first occurrence order kept. Throws Error{PairFormatError}.
std::vector<MemoryPair> parse_pair_list(std::string_view raw);
/// Inverse of parse_pair_list: `N/A` when empty, else `a-b, c-d`.
std::string format_pair_list(const std::vector<MemoryPair>& pairs);

/// Tagging answer: one `TURN_INDEX: NUMBER[,NUMBER...]` or
/// `TURN_INDEX: NONE` line per utterance. Throws Error{TagFormatError}.
std::map<std::size_t, std::vector<MemoryId>> parse_tag_output(std::string_view raw);

/// `id. text (About Name, From <ordinal> session)` lines, `N/A` when empty.
/// Only memories with source_session < before_session are listed when
/// before_session is positive.
std::string format_memory_list(const std::vector<MemoryEntry>& memories, const Scenario& scenario,
                               int before_session = 0);

/// Returns a reason to drop an accepted episode, or nullopt to keep it.
using ContentFilter = std::function<std::optional<std::string>(const EpisodeRecord&)>;

struct PipelineConfig {
    /// Checkpoint and call-log directory; no persistence when empty.
    std::filesystem::path job_dir;
    std::size_t concurrency = 1;
    /// Recorded into provenance; forwarded by callers that build the backend.
    std::string model;
    std::optional<double> temperature;
    std::optional<std::uint64_t> seed;
    ContentFilter content_filter;
};

enum class EpisodeStatus { Accepted, Discarded, Failed };
std::string_view to_string(EpisodeStatus status) noexcept;

struct EpisodeOutcome {
    std::string topic;
    EpisodeStatus status = EpisodeStatus::Failed;
    /// Present for Accepted and Discarded episodes.
    std::optional<EpisodeRecord> record;
    std::vector<Violation> violations;
    /// Failing stage key (e.g. "session3.memory_gen") and message.
    std::string stage;
    std::string diagnostic;
    /// Backend calls issued by this run (stages reused from a checkpoint excluded).
    std::size_t backend_calls = 0;
};

/// Stage keys in execution order for one episode: "scenario", then for each
/// session k "sessionk.dialogue", ".summary", ".memory_gen", ".memory_link",
/// ".tag". The last two are skipped when they have nothing to do.
std::string stage_key(int session, std::string_view stage);

/// Runs every stage for one topic against `backend`. Parse and backend
/// failures return a Failed outcome; the checkpoint keeps every stage that
/// completed, and a rerun with the same job_dir reuses them without calls.
EpisodeOutcome run_episode_pipeline(const std::string& topic, Backend& backend, const PipelineConfig& config);

/// Runs distinct topics (exact match after trimming; first occurrence wins)
/// with up to config.concurrency episodes in flight. Outcomes are in topic order.
std::vector<EpisodeOutcome> run_pipeline(const std::vector<std::string>& topics, Backend& backend,
                                         const PipelineConfig& config);

/// File name used for a topic's checkpoint inside the job directory.
std::string checkpoint_name(std::string_view topic);

}  // namespace egomem
