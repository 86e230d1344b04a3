#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "egomem/memory.hpp"
#include "egomem/session.hpp"

namespace egomem {

enum class Task { Reply, Summarize, LinkClassify, Tag, Prompt };

std::string_view to_string(Task task) noexcept;

/// Text handed to a generation backend. `rendered` is the user content;
/// `system` is optional extra context some pipeline prompts carry.
struct GenerationSequence {
    Task task = Task::Reply;
    std::string rendered;
    std::string system;
    /// Pipeline stage name for Task::Prompt (e.g. "dialogue"); empty otherwise.
    std::string stage;

    bool operator==(const GenerationSequence&) const = default;
};

inline constexpr std::string_view kGenerationPrefix = "generation:";
inline constexpr std::string_view kNoneToken = "[NONE]";

/// A retrieved memory and its linked memories, with texts resolved.
struct MemoryEvidence {
    struct Item {
        MemoryId id = 0;
        std::string text;
        bool operator==(const Item&) const = default;
    };
    Item primary;
    double score = 0.0;
    std::vector<Item> links;

    bool operator==(const MemoryEvidence&) const = default;
};

/// Renders `generation: [MAIN] job [PARTNER] job [MEMORY] .. [LINK] .. [NOW] k
/// [USER] .. [BOT] .. [BOT]`. Partner turns render as [USER], main-speaker
/// turns as [BOT]. The memory block is omitted when `evidence` is empty.
/// `turns` must be empty or end with a partner utterance; otherwise
/// Error{MalformedTurnOrder}.
GenerationSequence build_reply_sequence(const SpeakerProfile& main, const SpeakerProfile& partner,
                                        const std::optional<MemoryEvidence>& evidence, int session_index,
                                        std::span<const Utterance> turns);

/// Training-data variant: renders every memory group in order.
GenerationSequence build_reply_sequence(const SpeakerProfile& main, const SpeakerProfile& partner,
                                        std::span<const MemoryEvidence> groups, int session_index,
                                        std::span<const Utterance> turns);

/// The whole finished session in generation format. Unlike the reply
/// sequence it may end with a main-speaker turn, in which case no open
/// [BOT] slot is appended.
GenerationSequence build_final_sequence(const SpeakerProfile& main, const SpeakerProfile& partner,
                                        const std::optional<MemoryEvidence>& evidence, int session_index,
                                        std::span<const Utterance> turns);

/// `summarize [<about>]: <reply sequence>`.
GenerationSequence build_summarize_sequence(std::string_view about, const GenerationSequence& reply_sequence);

/// Inverse of build_summarize_sequence; nullopt if the prefix is absent.
std::optional<std::string> strip_summarize_prefix(std::string_view rendered, std::string_view about);

/// `[NONE]` yields nothing; otherwise split on [SEP], trim, drop empties.
std::vector<std::string> parse_summary_output(std::string_view raw);

/// `memory sentence 1: <m1> memory sentence 2: <m2>`. Throws Error{EmptyText}.
GenerationSequence build_link_sequence(std::string_view first, std::string_view second);

/// Case-insensitive trimmed "positive" / "negative". Throws Error{UnparseableLabel}.
bool parse_link_output(std::string_view raw);

}  // namespace egomem
