#include "egomem/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <charconv>
#include <chrono>
#include <fstream>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "egomem/error.hpp"
#include "egomem/link_graph.hpp"
#include "egomem/memory.hpp"
#include "egomem/prompts.hpp"
#include "egomem/retrieval.hpp"

namespace egomem {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> out;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        auto line = text.substr(pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        out.push_back(line);
        pos = nl + 1;
    }
    return out;
}

bool parse_uint(std::string_view s, std::uint64_t& out) {
    s = trim(s);
    if (s.empty()) return false;
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end;
}

bool is_na(std::string_view s) {
    s = trim(s);
    while (!s.empty() && s.back() == '.') s.remove_suffix(1);
    return s == "N/A" || s == "n/a" || s == "NA";
}

bool ends_sentence(std::string_view s) {
    while (!s.empty() && (s.back() == '"' || s.back() == '\'' || s.back() == ')')) s.remove_suffix(1);
    return !s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '?');
}

std::string capitalized(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

}  // namespace

Scenario parse_scenario(std::string_view raw, std::string topic) {
    static const std::regex character_re(R"(^\s*(?:Character\s+(\d+)|(Main)\s+Speaker|Sub\s+Speaker\s+(\d+))\s*:\s*(.*?)\s*$)",
                                         std::regex::icase);
    static const std::regex outline_re(R"(^\s*(?:Outline|Event\s+for\s+Session)\s+(\d+)\s*:\s*(.*?)\s*$)",
                                       std::regex::icase);
    static const std::regex partner_re(R"(^(.*?)\s*\(([^()]+)\)\s*([.!?]?)$)");

    std::map<int, std::string> characters;
    std::map<int, std::string> outlines;
    for (const auto line_view : split_lines(raw)) {
        const std::string line(line_view);
        std::smatch m;
        if (std::regex_match(line, m, character_re)) {
            int k = 0;
            if (m[1].matched) k = std::stoi(m[1].str());
            else if (m[2].matched) k = 1;
            else k = std::stoi(m[3].str()) + 1;
            if (characters.contains(k)) {
                throw Error(ErrorCode::ScenarioParseError, "Character " + std::to_string(k) + " is given twice");
            }
            characters[k] = m[4].str();
        } else if (std::regex_match(line, m, outline_re)) {
            const int k = std::stoi(m[1].str());
            if (outlines.contains(k)) {
                throw Error(ErrorCode::ScenarioParseError, "Outline " + std::to_string(k) + " is given twice");
            }
            outlines[k] = m[2].str();
        }
    }

    Scenario sc;
    sc.topic = std::move(topic);
    for (int k = 1; k <= 4; ++k) {
        auto it = characters.find(k);
        if (it == characters.end() || it->second.empty()) {
            throw Error(ErrorCode::ScenarioParseError, "Character " + std::to_string(k) + " is missing");
        }
        const auto dash = it->second.find('-');
        if (dash == std::string::npos) {
            throw Error(ErrorCode::ScenarioParseError,
                        "Character " + std::to_string(k) + " has no '-' between name and descriptor");
        }
        std::string name(trim(std::string_view(it->second).substr(0, dash)));
        std::string descriptor(trim(std::string_view(it->second).substr(dash + 1)));
        if (name.empty() || descriptor.empty()) {
            throw Error(ErrorCode::ScenarioParseError,
                        "Character " + std::to_string(k) + " needs both a name and a descriptor");
        }
        if (sc.find_by_name(name) != nullptr) {
            throw Error(ErrorCode::ScenarioParseError, "Character name '" + name + "' is ambiguous");
        }
        sc.speakers.push_back({SpeakerId("s" + std::to_string(k)), std::move(name), std::move(descriptor), k == 1});
    }
    if (characters.size() != 4) throw Error(ErrorCode::ScenarioParseError, "expected exactly 4 characters");

    for (int k = 1; k <= 6; ++k) {
        auto it = outlines.find(k);
        if (it == outlines.end() || it->second.empty()) {
            throw Error(ErrorCode::ScenarioParseError, "Outline " + std::to_string(k) + " is missing");
        }
        std::smatch m;
        if (!std::regex_match(it->second, m, partner_re)) {
            throw Error(ErrorCode::ScenarioParseError,
                        "Outline " + std::to_string(k) + " does not end with a parenthesized partner name");
        }
        std::string description(trim(m[1].str()));
        if (!ends_sentence(description) && m[3].length() > 0) description += m[3].str();
        const std::string partner_name(trim(m[2].str()));
        const auto* partner = sc.find_by_name(partner_name);
        if (partner == nullptr) {
            throw Error(ErrorCode::ScenarioParseError,
                        "Outline " + std::to_string(k) + " names unknown partner '" + partner_name + "'");
        }
        if (partner->is_main) {
            throw Error(ErrorCode::ScenarioParseError,
                        "Outline " + std::to_string(k) + " names the main character as partner");
        }
        if (description.empty()) {
            throw Error(ErrorCode::ScenarioParseError, "Outline " + std::to_string(k) + " has no text");
        }
        sc.events.push_back({std::move(description), partner->id});
    }
    if (outlines.size() != 6) throw Error(ErrorCode::ScenarioParseError, "expected exactly 6 outlines");
    return sc;
}

std::vector<Utterance> parse_dialogue(std::string_view raw, const SpeakerProfile& main,
                                      const SpeakerProfile& partner) {
    std::vector<Utterance> out;
    std::size_t lineno = 0;
    for (const auto line_view : split_lines(raw)) {
        ++lineno;
        const auto line = trim(line_view);
        if (line.empty()) continue;
        const auto where = "dialogue line " + std::to_string(lineno);
        if (line.front() != '[') throw Error(ErrorCode::DialogueFormatError, where + " has no speaker marker");
        const auto close = line.find(']');
        if (close == std::string_view::npos) {
            throw Error(ErrorCode::DialogueFormatError, where + " has an unterminated speaker marker");
        }
        const auto name = trim(line.substr(1, close - 1));
        const SpeakerProfile* who = nullptr;
        if (name == main.name) who = &main;
        else if (name == partner.name) who = &partner;
        if (who == nullptr) {
            throw Error(ErrorCode::DialogueFormatError,
                        where + " is spoken by '" + std::string(name) + "', who is not in this session");
        }
        auto text = trim(line.substr(close + 1));
        if (!text.empty() && text.front() == ':') text = trim(text.substr(1));
        if (text.empty()) throw Error(ErrorCode::DialogueFormatError, where + " is empty");
        out.push_back({who->id, std::string(text), {}});
    }
    if (out.size() < kMinDialogueTurns) {
        throw Error(ErrorCode::DialogueFormatError, "dialogue has " + std::to_string(out.size()) +
                                                        " turns, at least " + std::to_string(kMinDialogueTurns) +
                                                        " are required");
    }
    return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
    std::vector<std::string> out;
    text = trim(text);
    if (text.empty()) return out;

    auto strip_bullet = [](std::string_view s) {
        s = trim(s);
        if (!s.empty() && (s.front() == '-' || s.front() == '*')) return trim(s.substr(1));
        if (s.starts_with("\xE2\x80\xA2")) return trim(s.substr(3));
        std::size_t digits = 0;
        while (digits < s.size() && std::isdigit(static_cast<unsigned char>(s[digits]))) ++digits;
        if (digits > 0 && digits + 1 < s.size() && (s[digits] == '.' || s[digits] == ')') && s[digits + 1] == ' ') {
            return trim(s.substr(digits + 1));
        }
        return s;
    };

    if (text.find('\n') != std::string_view::npos) {
        for (const auto line : split_lines(text)) {
            const auto item = strip_bullet(line);
            if (!item.empty()) out.emplace_back(item);
        }
        return out;
    }

    if (text.front() == '-') {
        // "- a. - b." on one line.
        std::string_view rest = text;
        while (!rest.empty()) {
            rest = trim(rest.substr(rest.front() == '-' ? 1 : 0));
            std::size_t cut = std::string_view::npos;
            for (std::size_t i = 0; i + 2 < rest.size(); ++i) {
                if ((rest[i] == '.' || rest[i] == '!' || rest[i] == '?') && rest[i + 1] == ' ' && rest[i + 2] == '-') {
                    cut = i + 1;
                    break;
                }
            }
            const auto item = trim(rest.substr(0, cut));
            if (!item.empty()) out.emplace_back(item);
            if (cut == std::string_view::npos) break;
            rest = trim(rest.substr(cut));
        }
        return out;
    }

    static const std::set<std::string, std::less<>> abbreviations = {"Mr", "Mrs", "Ms",  "Dr", "Prof",
                                                                     "St", "Jr",  "Sr",  "Mt", "vs"};
    std::size_t start = 0;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c != '.' && c != '!' && c != '?') continue;
        std::size_t end = i + 1;
        while (end < text.size() && (text[end] == '"' || text[end] == '\'' || text[end] == ')')) ++end;
        if (end >= text.size() || text[end] != ' ') continue;
        std::size_t next = end;
        while (next < text.size() && text[next] == ' ') ++next;
        if (next >= text.size() || std::islower(static_cast<unsigned char>(text[next]))) continue;
        if (c == '.') {
            std::size_t w = i;
            while (w > start && std::isalpha(static_cast<unsigned char>(text[w - 1]))) --w;
            if (abbreviations.contains(text.substr(w, i - w))) continue;
        }
        const auto item = trim(text.substr(start, end - start));
        if (!item.empty()) out.emplace_back(item);
        start = next;
        i = next - 1;
    }
    const auto tail = trim(text.substr(start));
    if (!tail.empty()) out.emplace_back(tail);
    return out;
}

ParsedMemories parse_memory_output(std::string_view raw, std::string_view main_name,
                                   std::string_view partner_name) {
    auto body = trim(raw);
    constexpr std::string_view end_marker = "[END]";
    if (!body.ends_with(end_marker)) throw Error(ErrorCode::MemoryFormatError, "answer does not end with [END]");
    body = trim(body.substr(0, body.size() - end_marker.size()));
    if (body.find(end_marker) != std::string_view::npos) {
        throw Error(ErrorCode::MemoryFormatError, "[END] appears before the end of the answer");
    }

    std::vector<std::string_view> groups;
    std::size_t pos = 0;
    while (true) {
        const auto bar = body.find('|', pos);
        groups.push_back(trim(body.substr(pos, bar == std::string_view::npos ? std::string_view::npos : bar - pos)));
        if (bar == std::string_view::npos) break;
        pos = bar + 1;
    }
    if (groups.size() != 2) {
        throw Error(ErrorCode::MemoryFormatError,
                    "expected 2 'About' groups separated by '|', found " + std::to_string(groups.size()));
    }

    ParsedMemories out;
    bool seen_main = false;
    bool seen_partner = false;
    for (const auto group : groups) {
        if (!group.starts_with("About ")) throw Error(ErrorCode::MemoryFormatError, "group lacks an 'About' header");
        const auto colon = group.find(':');
        if (colon == std::string_view::npos) throw Error(ErrorCode::MemoryFormatError, "'About' header lacks ':'");
        const auto subject = trim(group.substr(6, colon - 6));
        const auto list = trim(group.substr(colon + 1));
        std::vector<std::string>* target = nullptr;
        if (subject == main_name && !seen_main) {
            target = &out.about_main;
            seen_main = true;
        } else if (subject == partner_name && !seen_partner) {
            target = &out.about_partner;
            seen_partner = true;
        } else {
            throw Error(ErrorCode::MemoryFormatError, "unexpected subject '" + std::string(subject) + "'");
        }
        if (!is_na(list)) *target = split_sentences(list);
    }
    return out;
}

std::vector<MemoryPair> parse_pair_list(std::string_view raw) {
    auto body = trim(raw);
    if (body.size() >= 2 && body.front() == '"' && body.back() == '"') body = trim(body.substr(1, body.size() - 2));
    if (is_na(body)) return {};
    std::vector<MemoryPair> out;
    std::set<MemoryPair> seen;
    std::size_t pos = 0;
    while (pos <= body.size()) {
        auto comma = body.find(',', pos);
        if (comma == std::string_view::npos) comma = body.size();
        const auto item = trim(body.substr(pos, comma - pos));
        pos = comma + 1;
        const auto dash = item.find('-');
        std::uint64_t a = 0;
        std::uint64_t b = 0;
        if (dash == std::string_view::npos || !parse_uint(item.substr(0, dash), a) ||
            !parse_uint(item.substr(dash + 1), b) || a == 0 || b == 0 ||
            a > std::numeric_limits<MemoryId>::max() || b > std::numeric_limits<MemoryId>::max()) {
            throw Error(ErrorCode::PairFormatError, "'" + std::string(item) + "' is not a NUMBER-NUMBER pair");
        }
        if (a == b) throw Error(ErrorCode::PairFormatError, "'" + std::string(item) + "' pairs a memory with itself");
        const MemoryPair pair{static_cast<MemoryId>(a), static_cast<MemoryId>(b)};
        const MemoryPair key{std::min(pair.first, pair.second), std::max(pair.first, pair.second)};
        if (seen.insert(key).second) out.push_back(pair);
    }
    return out;
}

std::string format_pair_list(const std::vector<MemoryPair>& pairs) {
    if (pairs.empty()) return "N/A";
    std::string out;
    for (const auto& [a, b] : pairs) {
        if (!out.empty()) out += ", ";
        out += std::to_string(a) + "-" + std::to_string(b);
    }
    return out;
}

std::map<std::size_t, std::vector<MemoryId>> parse_tag_output(std::string_view raw) {
    std::map<std::size_t, std::vector<MemoryId>> out;
    std::size_t lineno = 0;
    for (const auto line_view : split_lines(raw)) {
        ++lineno;
        const auto line = trim(line_view);
        if (line.empty()) continue;
        const auto where = "tag line " + std::to_string(lineno);
        const auto colon = line.find(':');
        std::uint64_t turn = 0;
        if (colon == std::string_view::npos || !parse_uint(line.substr(0, colon), turn) || turn == 0) {
            throw Error(ErrorCode::TagFormatError, where + " does not start with 'TURN_INDEX:'");
        }
        if (out.contains(turn)) throw Error(ErrorCode::TagFormatError, where + " repeats turn " + std::to_string(turn));
        auto& ids = out[turn];
        const auto list = trim(line.substr(colon + 1));
        if (list == "NONE" || list == "[NONE]" || is_na(list)) continue;
        std::size_t pos = 0;
        while (pos <= list.size()) {
            auto comma = list.find(',', pos);
            if (comma == std::string_view::npos) comma = list.size();
            std::uint64_t id = 0;
            if (!parse_uint(list.substr(pos, comma - pos), id) || id == 0 ||
                id > std::numeric_limits<MemoryId>::max()) {
                throw Error(ErrorCode::TagFormatError, where + " has a malformed memory number");
            }
            if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(static_cast<MemoryId>(id));
            pos = comma + 1;
        }
    }
    return out;
}

std::string format_memory_list(const std::vector<MemoryEntry>& memories, const Scenario& scenario,
                               int before_session) {
    std::string out;
    for (const auto& m : memories) {
        if (before_session > 0 && m.source_session >= before_session) continue;
        const auto* subject = scenario.find(m.subject);
        if (!out.empty()) out += '\n';
        out += std::to_string(m.id) + ". " + m.text + " (About " + (subject ? subject->name : m.subject.value) +
               ", From " + ordinal_word(m.source_session) + " session)";
    }
    return out.empty() ? "N/A" : out;
}

std::string_view to_string(EpisodeStatus status) noexcept {
    switch (status) {
        case EpisodeStatus::Accepted: return "accepted";
        case EpisodeStatus::Discarded: return "discarded";
        case EpisodeStatus::Failed: return "failed";
    }
    return "failed";
}

std::string stage_key(int session, std::string_view stage) {
    if (session <= 0) return std::string(stage);
    return "session" + std::to_string(session) + "." + std::string(stage);
}

std::string checkpoint_name(std::string_view topic) {
    std::string slug;
    for (const char c : topic) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            slug += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!slug.empty() && slug.back() != '-') {
            slug += '-';
        }
        if (slug.size() >= 40) break;
    }
    while (!slug.empty() && slug.back() == '-') slug.pop_back();
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(fnv1a64({reinterpret_cast<const unsigned char*>(topic.data()), topic.size()})));
    return (slug.empty() ? std::string("topic") : slug) + "-" + std::string(hash, 8) + ".json";
}

namespace {

std::mutex& call_log_mutex() {
    static std::mutex mu;
    return mu;
}

class StageRunner {
public:
    StageRunner(const std::string& topic, Backend& backend, const PipelineConfig& config)
        : topic_(topic), backend_(backend), config_(config) {
        if (config_.job_dir.empty()) return;
        fs::create_directories(config_.job_dir);
        path_ = config_.job_dir / checkpoint_name(topic);
        if (fs::exists(path_)) {
            std::ifstream in(path_);
            try {
                checkpoint_ = json::parse(in);
            } catch (const json::exception& e) {
                throw Error(ErrorCode::IoError, "checkpoint " + path_.string() + " is corrupt: " + e.what());
            }
            if (checkpoint_.value("topic", std::string()) != topic) {
                throw Error(ErrorCode::IoError, "checkpoint " + path_.string() + " belongs to another topic");
            }
        }
        checkpoint_["topic"] = topic;
        if (!checkpoint_.contains("stages")) checkpoint_["stages"] = json::object();
    }

    /// Returns parse(output), reusing a checkpointed output when present.
    template <class Parse>
    auto run(const std::string& key, const GenerationSequence& seq, Parse parse) {
        current_ = key;
        auto& stages = checkpoint_["stages"];
        if (auto it = stages.find(key); it != stages.end() && it->is_string()) {
            return parse(it->template get<std::string>());
        }
        const auto t0 = std::chrono::steady_clock::now();
        std::string raw = backend_.complete(seq);
        const auto elapsed = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0);
        ++calls_;
        log_call(key, seq, raw, elapsed.count());
        auto parsed = parse(raw);
        stages[key] = raw;
        save();
        return parsed;
    }

    void finish(const EpisodeOutcome& outcome) {
        checkpoint_["status"] = std::string(to_string(outcome.status));
        if (!outcome.diagnostic.empty()) {
            checkpoint_["diagnostic"] = outcome.diagnostic;
            checkpoint_["failed_stage"] = outcome.stage;
        } else {
            checkpoint_.erase("diagnostic");
            checkpoint_.erase("failed_stage");
        }
        json violations = json::array();
        for (const auto& v : outcome.violations) {
            violations.push_back({{"rule", v.rule}, {"message", v.message}, {"where", v.where}});
        }
        checkpoint_["violations"] = violations;
        save();
    }

    const std::string& current() const noexcept { return current_; }
    std::size_t calls() const noexcept { return calls_; }

private:
    void save() {
        if (path_.empty()) return;
        auto tmp = path_;
        tmp += ".tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << checkpoint_.dump(2) << '\n';
            if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
        }
        fs::rename(tmp, path_);
    }

    void log_call(const std::string& key, const GenerationSequence& seq, const std::string& raw, double ms) {
        if (config_.job_dir.empty()) return;
        const json entry = {{"topic", topic_},
                            {"stage", key},
                            {"latency_ms", ms},
                            {"prompt_chars", seq.rendered.size() + seq.system.size()},
                            {"output_chars", raw.size()}};
        std::lock_guard lock(call_log_mutex());
        std::ofstream out(config_.job_dir / "calls.jsonl", std::ios::app);
        out << entry.dump() << '\n';
    }

    const std::string& topic_;
    Backend& backend_;
    const PipelineConfig& config_;
    fs::path path_;
    json checkpoint_ = json::object();
    std::string current_;
    std::size_t calls_ = 0;
};

GenerationSequence prompt(std::string stage, std::string rendered, std::string system = {}) {
    GenerationSequence seq;
    seq.task = stage == "tag" ? Task::Tag : Task::Prompt;
    seq.rendered = std::move(rendered);
    seq.system = std::move(system);
    seq.stage = std::move(stage);
    return seq;
}

std::string conversation_text(const std::vector<Utterance>& turns, const Scenario& scenario) {
    SessionState s;
    s.turns = turns;
    return build_context_text(s, scenario);
}

json provenance_for(const std::string& topic, const PipelineConfig& config) {
    json p = {{"generator", "pipeline"}, {"topic", topic}};
    if (!config.model.empty()) p["model"] = config.model;
    if (config.temperature) p["temperature"] = *config.temperature;
    if (config.seed) p["seed"] = *config.seed;
    return p;
}

EpisodeRecord generate_episode(const std::string& topic, StageRunner& runner, EpisodeOutcome& outcome) {
    EpisodeRecord record;
    record.episode_id = "ep-" + checkpoint_name(topic).substr(0, checkpoint_name(topic).size() - 5);

    record.scenario = runner.run("scenario", prompt("scenario", prompts::scenario().render({{"SUB TOPIC", topic}})),
                                 [&](const std::string& raw) { return parse_scenario(raw, topic); });
    const Scenario& sc = record.scenario;
    outcome.violations = validate_scenario(sc);
    if (!outcome.violations.empty()) return record;

    const auto& main = *sc.main_speaker();
    MemoryStore store(sc.roster());
    LinkGraph graph;
    std::string system;

    for (int k = 1; k <= static_cast<int>(sc.events.size()); ++k) {
        const auto& event = sc.events[static_cast<std::size_t>(k) - 1];
        const auto& partner = *sc.find(event.partner);

        SessionState session;
        session.index = k;
        session.partner = partner.id;
        session.closed = true;

        const auto dialogue_prompt = prompts::dialogue().render({{"SESSION NUMBER", ordinal_word(k)},
                                                                 {"MAIN SPEAKER NAME", main.name},
                                                                 {"MAIN SPEAKER JOB", main.descriptor},
                                                                 {"SUB SPEAKER NAME", partner.name},
                                                                 {"SUB SPEAKER JOB", partner.descriptor},
                                                                 {"SESSION EVENT", event.description},
                                                                 {"MEMORY LIST", format_memory_list(store.entries(), sc)}});
        session.turns = runner.run(stage_key(k, "dialogue"), prompt("dialogue", dialogue_prompt, system),
                                   [&](const std::string& raw) { return parse_dialogue(raw, main, partner); });
        const auto conversation = conversation_text(session.turns, sc);

        const auto summary_prompt = prompts::session_summary().render({{"MAIN SPEAKER NAME", main.name},
                                                                       {"SUB SPEAKER NAME", partner.name},
                                                                       {"SESSION CONVERSATION", conversation}});
        session.summary = runner.run(stage_key(k, "summary"), prompt("summary", summary_prompt),
                                     [&](const std::string& raw) {
                                         std::string s(trim(raw));
                                         if (s.empty()) throw Error(ErrorCode::EmptyText, "summary is empty");
                                         return s;
                                     });
        if (!system.empty()) system += '\n';
        system += prompts::dialogue_system_line().render(
            {{"SESSION ORDINAL", capitalized(ordinal_word(k))}, {"SESSION SUMMARY", *session.summary}});

        const auto memory_prompt = prompts::memory_gen().render({{"MAIN SPEAKER NAME", main.name},
                                                                 {"SUB SPEAKER NAME", partner.name},
                                                                 {"SESSION CONVERSATION", conversation}});
        const auto memories = runner.run(stage_key(k, "memory_gen"), prompt("memory_gen", memory_prompt),
                                         [&](const std::string& raw) {
                                             return parse_memory_output(raw, main.name, partner.name);
                                         });
        std::vector<MemoryId> new_ids;
        for (const auto& text : memories.about_main) new_ids.push_back(store.add_memory(main.id, main.id, text, k));
        for (const auto& text : memories.about_partner) {
            new_ids.push_back(store.add_memory(main.id, partner.id, text, k));
        }

        if (!new_ids.empty() && store.size() >= 2) {
            std::vector<MemoryPair> previous;
            for (const auto& l : graph.links()) previous.push_back({l.lo, l.hi});
            const auto link_prompt = prompts::memory_link().render(
                {{"MEMORY LIST", format_memory_list(store.entries(), sc)}, {"PAIR LIST", format_pair_list(previous)}});
            const auto pairs = runner.run(stage_key(k, "memory_link"), prompt("memory_link", link_prompt),
                                          [&](const std::string& raw) {
                                              auto parsed = parse_pair_list(raw);
                                              for (const auto& [a, b] : parsed) {
                                                  if (!store.contains(a) || !store.contains(b)) {
                                                      throw Error(ErrorCode::PairFormatError,
                                                                  "pair " + std::to_string(a) + "-" +
                                                                      std::to_string(b) + " names an unknown memory");
                                                  }
                                              }
                                              return parsed;
                                          });
            std::set<MemoryLink> wanted;
            for (const auto& [a, b] : pairs) wanted.insert(MemoryLink::canonical(a, b));
            graph.connect_new_memories(store, new_ids, [&](const MemoryEntry& a, const MemoryEntry& b) {
                return wanted.contains(MemoryLink::canonical(a.id, b.id));
            });
        }

        const auto prior = format_memory_list(store.entries(), sc, k);
        if (prior != "N/A") {
            std::string utterances;
            std::set<std::size_t> main_turns;
            for (std::size_t i = 0; i < session.turns.size(); ++i) {
                if (session.turns[i].speaker != main.id) continue;
                main_turns.insert(i + 1);
                if (!utterances.empty()) utterances += '\n';
                utterances += std::to_string(i + 1) + ": " + session.turns[i].text;
            }
            const auto tag_prompt = prompts::tagging().render(
                {{"MAIN SPEAKER NAME", main.name}, {"MEMORY LIST", prior}, {"UTTERANCE LIST", utterances}});
            const auto tags = runner.run(stage_key(k, "tag"), prompt("tag", tag_prompt), [&](const std::string& raw) {
                auto parsed = parse_tag_output(raw);
                for (const auto& [turn, ids] : parsed) {
                    if (!main_turns.contains(turn)) {
                        throw Error(ErrorCode::TagFormatError,
                                    "turn " + std::to_string(turn) + " is not a " + main.name + " utterance");
                    }
                    for (const auto id : ids) {
                        const auto* m = store.find(id);
                        if (m == nullptr || m->source_session >= k) {
                            throw Error(ErrorCode::TagFormatError,
                                        "memory " + std::to_string(id) + " is not in the listed memories");
                        }
                    }
                }
                return parsed;
            });
            for (const auto& [turn, ids] : tags) session.turns[turn - 1].tags.insert(ids.begin(), ids.end());
        }

        record.sessions.push_back(std::move(session));
    }

    record.memories = store.entries();
    record.links.assign(graph.links().begin(), graph.links().end());
    return record;
}

}  // namespace

EpisodeOutcome run_episode_pipeline(const std::string& topic, Backend& backend, const PipelineConfig& config) {
    EpisodeOutcome outcome;
    outcome.topic = topic;
    std::optional<StageRunner> runner;
    try {
        runner.emplace(topic, backend, config);
        auto record = generate_episode(topic, *runner, outcome);
        outcome.backend_calls = runner->calls();
        if (!outcome.violations.empty()) {
            outcome.status = EpisodeStatus::Discarded;
            outcome.stage = "scenario";
        } else {
            record.provenance = provenance_for(topic, config);
            outcome.violations = validate(record);
            if (outcome.violations.empty() && config.content_filter) {
                if (auto reason = config.content_filter(record)) {
                    outcome.violations.push_back({"filter", *reason, "episode"});
                }
            }
            outcome.status = outcome.violations.empty() ? EpisodeStatus::Accepted : EpisodeStatus::Discarded;
            outcome.record = std::move(record);
        }
    } catch (const std::exception& e) {
        outcome.status = EpisodeStatus::Failed;
        outcome.record.reset();
        outcome.stage = runner ? runner->current() : std::string("checkpoint");
        outcome.diagnostic = e.what();
        if (runner) outcome.backend_calls = runner->calls();
    }
    if (runner) {
        try {
            runner->finish(outcome);
        } catch (const std::exception& e) {
            if (outcome.diagnostic.empty()) outcome.diagnostic = e.what();
        }
    }
    return outcome;
}

std::vector<EpisodeOutcome> run_pipeline(const std::vector<std::string>& topics, Backend& backend,
                                         const PipelineConfig& config) {
    std::vector<std::string> unique;
    std::set<std::string> seen;
    for (const auto& t : topics) {
        std::string key(trim(t));
        if (key.empty() || !seen.insert(key).second) continue;
        unique.push_back(std::move(key));
    }

    std::vector<EpisodeOutcome> out(unique.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (auto i = next.fetch_add(1); i < unique.size(); i = next.fetch_add(1)) {
            out[i] = run_episode_pipeline(unique[i], backend, config);
        }
    };
    const auto n = std::min(std::max<std::size_t>(config.concurrency, 1), unique.size());
    if (n <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t i = 0; i < n; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return out;
}

}  // namespace egomem
