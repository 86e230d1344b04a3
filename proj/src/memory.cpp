#include "egomem/memory.hpp"

#include "egomem/error.hpp"

namespace egomem {

std::string_view trim(std::string_view text) noexcept {
    constexpr std::string_view ws = " \t\r\n\f\v";
    const auto first = text.find_first_not_of(ws);
    if (first == std::string_view::npos) return {};
    const auto last = text.find_last_not_of(ws);
    return text.substr(first, last - first + 1);
}

MemoryId MemoryStore::add_memory(const SpeakerId& perspective, const SpeakerId& subject,
                                 std::string_view text, int source_session) {
    const auto body = trim(text);
    if (body.empty()) {
        throw Error(ErrorCode::EmptyText, "memory text is empty");
    }
    if (body.find(kRecordSeparator) != std::string_view::npos) {
        throw Error(ErrorCode::EmptyText, "memory text contains the record separator");
    }
    if (source_session < 1) {
        throw Error(ErrorCode::InvalidConfig, "source_session must be >= 1");
    }
    if (!knows(perspective)) {
        throw Error(ErrorCode::UnknownSpeaker, "unknown perspective speaker '" + perspective.value + "'");
    }
    if (!knows(subject)) {
        throw Error(ErrorCode::UnknownSpeaker, "unknown subject speaker '" + subject.value + "'");
    }
    MemoryEntry entry{next_id(), perspective, subject, std::string(body), source_session};
    entries_.push_back(std::move(entry));
    return entries_.back().id;
}

const MemoryEntry* MemoryStore::find(MemoryId id) const noexcept {
    if (id == 0 || id > entries_.size()) return nullptr;
    return &entries_[id - 1];
}

const MemoryEntry& MemoryStore::get_memory(MemoryId id) const {
    if (const auto* e = find(id)) return *e;
    throw Error(ErrorCode::NotFound, "no memory with id " + std::to_string(id));
}

std::vector<MemoryEntry> MemoryStore::memories_about(const SpeakerId& subject) const {
    std::vector<MemoryEntry> out;
    for (const auto& e : entries_) {
        if (e.subject == subject) out.push_back(e);
    }
    return out;
}

void MemoryStore::restore(MemoryEntry entry) {
    if (entry.id != next_id()) {
        throw Error(ErrorCode::SchemaError, "memory ids must be 1..N in order; got " +
                                                std::to_string(entry.id) + ", expected " +
                                                std::to_string(next_id()));
    }
    const auto expected = entry.id;
    if (add_memory(entry.perspective, entry.subject, entry.text, entry.source_session) != expected) {
        throw Error(ErrorCode::SchemaError, "memory id mismatch on restore");
    }
}

}  // namespace egomem
