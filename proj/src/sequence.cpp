#include "egomem/sequence.hpp"

#include <algorithm>
#include <cctype>

#include "egomem/error.hpp"

namespace egomem {

std::string_view to_string(Task task) noexcept {
    switch (task) {
        case Task::Reply: return "reply";
        case Task::Summarize: return "summarize";
        case Task::LinkClassify: return "link_classify";
        case Task::Tag: return "tag";
        case Task::Prompt: return "prompt";
    }
    return "unknown";
}

namespace {

void append_segment(std::string& out, std::string_view token, std::string_view text) {
    out += ' ';
    out += token;
    if (!text.empty()) {
        out += ' ';
        out += text;
    }
}

std::string render_generation(const SpeakerProfile& main, const SpeakerProfile& partner,
                              std::span<const MemoryEvidence> groups, int session_index,
                              std::span<const Utterance> turns, bool leave_bot_slot) {
    std::string out(kGenerationPrefix);
    out += " [";
    out += main.name;
    out += ']';
    if (!main.descriptor.empty()) (out += ' ') += main.descriptor;
    out += " [";
    out += partner.name;
    out += ']';
    if (!partner.descriptor.empty()) (out += ' ') += partner.descriptor;

    for (const auto& group : groups) {
        append_segment(out, "[MEMORY]", group.primary.text);
        for (const auto& link : group.links) append_segment(out, "[LINK]", link.text);
    }
    append_segment(out, "[NOW]", std::to_string(session_index));
    for (const auto& turn : turns) {
        if (turn.speaker == partner.id) {
            append_segment(out, "[USER]", turn.text);
        } else if (turn.speaker == main.id) {
            append_segment(out, "[BOT]", turn.text);
        } else {
            throw Error(ErrorCode::MalformedTurnOrder,
                        "turn by '" + turn.speaker.value + "' who is neither main nor partner");
        }
    }
    if (leave_bot_slot) out += " [BOT]";
    return out;
}

void require_open_slot(const SpeakerProfile& main, std::span<const Utterance> turns) {
    if (!turns.empty() && turns.back().speaker == main.id) {
        throw Error(ErrorCode::MalformedTurnOrder, "reply sequence must end with a partner utterance");
    }
}

}  // namespace

GenerationSequence build_reply_sequence(const SpeakerProfile& main, const SpeakerProfile& partner,
                                        const std::optional<MemoryEvidence>& evidence, int session_index,
                                        std::span<const Utterance> turns) {
    require_open_slot(main, turns);
    std::span<const MemoryEvidence> groups;
    if (evidence) groups = std::span<const MemoryEvidence>(&*evidence, 1);
    return {Task::Reply, render_generation(main, partner, groups, session_index, turns, true), {}, {}};
}

GenerationSequence build_reply_sequence(const SpeakerProfile& main, const SpeakerProfile& partner,
                                        std::span<const MemoryEvidence> groups, int session_index,
                                        std::span<const Utterance> turns) {
    require_open_slot(main, turns);
    return {Task::Reply, render_generation(main, partner, groups, session_index, turns, true), {}, {}};
}

GenerationSequence build_final_sequence(const SpeakerProfile& main, const SpeakerProfile& partner,
                                        const std::optional<MemoryEvidence>& evidence, int session_index,
                                        std::span<const Utterance> turns) {
    std::span<const MemoryEvidence> groups;
    if (evidence) groups = std::span<const MemoryEvidence>(&*evidence, 1);
    const bool open = turns.empty() || turns.back().speaker != main.id;
    return {Task::Reply, render_generation(main, partner, groups, session_index, turns, open), {}, {}};
}

GenerationSequence build_summarize_sequence(std::string_view about, const GenerationSequence& reply_sequence) {
    std::string out = "summarize [";
    out += about;
    out += "]: ";
    out += reply_sequence.rendered;
    return {Task::Summarize, std::move(out), {}, {}};
}

std::optional<std::string> strip_summarize_prefix(std::string_view rendered, std::string_view about) {
    std::string prefix = "summarize [";
    prefix += about;
    prefix += "]: ";
    if (!rendered.starts_with(prefix)) return std::nullopt;
    return std::string(rendered.substr(prefix.size()));
}

std::vector<std::string> parse_summary_output(std::string_view raw) {
    std::vector<std::string> out;
    const auto body = trim(raw);
    if (body == kNoneToken) return out;
    std::size_t pos = 0;
    while (pos <= body.size()) {
        const auto next = body.find(kRecordSeparator, pos);
        const auto piece = trim(body.substr(pos, next == std::string_view::npos ? std::string_view::npos : next - pos));
        if (!piece.empty() && piece != kNoneToken) out.emplace_back(piece);
        if (next == std::string_view::npos) break;
        pos = next + kRecordSeparator.size();
    }
    return out;
}

GenerationSequence build_link_sequence(std::string_view first, std::string_view second) {
    if (trim(first).empty() || trim(second).empty()) {
        throw Error(ErrorCode::EmptyText, "link sequence needs two non-empty memory sentences");
    }
    std::string out = "memory sentence 1: ";
    out += first;
    out += " memory sentence 2: ";
    out += second;
    return {Task::LinkClassify, std::move(out), {}, {}};
}

bool parse_link_output(std::string_view raw) {
    std::string label(trim(raw));
    std::transform(label.begin(), label.end(), label.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (label == "positive") return true;
    if (label == "negative") return false;
    throw Error(ErrorCode::UnparseableLabel, "unrecognized link label '" + std::string(trim(raw)) + "'");
}

}  // namespace egomem
