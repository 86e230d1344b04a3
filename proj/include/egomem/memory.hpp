#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace egomem {

/// Opaque speaker identifier. Distinct from the display name so that two
/// speakers may share a name without aliasing.
struct SpeakerId {
    std::string value;

    SpeakerId() = default;
    explicit SpeakerId(std::string v) : value(std::move(v)) {}

    auto operator<=>(const SpeakerId&) const = default;
    bool operator==(const SpeakerId&) const = default;
};

using MemoryId = std::uint32_t;

/// Record separator emitted by the summarizer between memory sentences.
inline constexpr std::string_view kRecordSeparator = "[SEP]";

struct SpeakerProfile {
    SpeakerId id;
    std::string name;
    /// Job or relationship, e.g. "Bob's teacher".
    std::string descriptor;
    bool is_main = false;

    bool operator==(const SpeakerProfile&) const = default;
};

/// One egocentric memory sentence. `perspective` is whose view it is written
/// from; `subject` is who it is about.
struct MemoryEntry {
    MemoryId id = 0;
    SpeakerId perspective;
    SpeakerId subject;
    std::string text;
    int source_session = 0;

    bool operator==(const MemoryEntry&) const = default;
};

/// Append-only store of memory entries for one episode. Ids start at 1 and
/// are assigned in insertion order.
class MemoryStore {
public:
    MemoryStore() = default;
    explicit MemoryStore(std::set<SpeakerId> roster) : roster_(std::move(roster)) {}

    /// Trims `text`, validates speakers against the roster and appends.
    /// Throws Error{EmptyText} / Error{UnknownSpeaker}.
    MemoryId add_memory(const SpeakerId& perspective, const SpeakerId& subject,
                        std::string_view text, int source_session);

    /// Throws Error{NotFound}.
    const MemoryEntry& get_memory(MemoryId id) const;
    const MemoryEntry* find(MemoryId id) const noexcept;
    bool contains(MemoryId id) const noexcept { return find(id) != nullptr; }

    std::vector<MemoryEntry> memories_about(const SpeakerId& subject) const;

    const std::vector<MemoryEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    MemoryId next_id() const noexcept { return static_cast<MemoryId>(entries_.size() + 1); }

    const std::set<SpeakerId>& roster() const noexcept { return roster_; }
    bool knows(const SpeakerId& id) const { return roster_.contains(id); }

    /// Re-inserts an entry loaded from disk. The id must equal next_id().
    void restore(MemoryEntry entry);

    bool operator==(const MemoryStore&) const = default;

private:
    std::set<SpeakerId> roster_;
    // ids are 1..N, so entries_[id - 1] is the entry with that id.
    std::vector<MemoryEntry> entries_;
};

/// Trims ASCII whitespace from both ends.
std::string_view trim(std::string_view text) noexcept;

}  // namespace egomem

template <>
struct std::hash<egomem::SpeakerId> {
    std::size_t operator()(const egomem::SpeakerId& id) const noexcept {
        return std::hash<std::string>{}(id.value);
    }
};
