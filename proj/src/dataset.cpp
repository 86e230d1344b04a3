#include "egomem/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "egomem/rng.hpp"

namespace egomem {

using nlohmann::json;

namespace {

[[noreturn]] void schema_error(const std::string& message) {
    throw Error(ErrorCode::SchemaError, message);
}

const json& field(const json& obj, const char* name, const std::string& path) {
    if (!obj.is_object()) schema_error("'" + path + "' is not an object");
    auto it = obj.find(name);
    if (it == obj.end()) schema_error("missing field '" + path + "." + name + "'");
    return *it;
}

std::string string_field(const json& obj, const char* name, const std::string& path) {
    const auto& v = field(obj, name, path);
    if (!v.is_string()) schema_error("field '" + path + "." + name + "' must be a string");
    return v.get<std::string>();
}

const json& array_field(const json& obj, const char* name, const std::string& path) {
    const auto& v = field(obj, name, path);
    if (!v.is_array()) schema_error("field '" + path + "." + name + "' must be an array");
    return v;
}

std::int64_t int_field(const json& obj, const char* name, const std::string& path) {
    const auto& v = field(obj, name, path);
    if (!v.is_number_integer()) schema_error("field '" + path + "." + name + "' must be an integer");
    return v.get<std::int64_t>();
}

MemoryId memory_id(const json& v, const std::string& path) {
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0 ||
        v.get<std::int64_t>() > std::numeric_limits<MemoryId>::max()) {
        schema_error("'" + path + "' must be a non-negative memory id");
    }
    return static_cast<MemoryId>(v.get<std::int64_t>());
}

std::string at(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

}  // namespace

json to_json(const Scenario& scenario) {
    json speakers = json::array();
    for (const auto& s : scenario.speakers) {
        speakers.push_back({{"id", s.id.value},
                            {"name", s.name},
                            {"descriptor", s.descriptor},
                            {"is_main", s.is_main}});
    }
    json events = json::array();
    for (const auto& e : scenario.events) {
        events.push_back({{"description", e.description}, {"partner", e.partner.value}});
    }
    return {{"topic", scenario.topic}, {"speakers", speakers}, {"events", events}};
}

Scenario scenario_from_json(const json& j) {
    const std::string path = "scenario";
    Scenario out;
    out.topic = string_field(j, "topic", path);
    const auto& speakers = array_field(j, "speakers", path);
    for (std::size_t i = 0; i < speakers.size(); ++i) {
        const auto p = at(path + ".speakers", i);
        SpeakerProfile s;
        s.id = SpeakerId(string_field(speakers[i], "id", p));
        s.name = string_field(speakers[i], "name", p);
        s.descriptor = string_field(speakers[i], "descriptor", p);
        const auto& main = field(speakers[i], "is_main", p);
        if (!main.is_boolean()) schema_error("field '" + p + ".is_main' must be a boolean");
        s.is_main = main.get<bool>();
        out.speakers.push_back(std::move(s));
    }
    const auto& events = array_field(j, "events", path);
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto p = at(path + ".events", i);
        out.events.push_back({string_field(events[i], "description", p),
                              SpeakerId(string_field(events[i], "partner", p))});
    }
    return out;
}

json to_json(const EpisodeRecord& record) {
    json sessions = json::array();
    for (const auto& s : record.sessions) {
        json utterances = json::array();
        for (const auto& u : s.turns) {
            json ju = {{"speaker", u.speaker.value}, {"text", u.text}};
            if (!u.tags.empty()) ju["tags"] = std::vector<MemoryId>(u.tags.begin(), u.tags.end());
            utterances.push_back(std::move(ju));
        }
        json js = {{"index", s.index}, {"partner", s.partner.value}, {"utterances", utterances}};
        if (s.summary) js["summary"] = *s.summary;
        if (!s.closed) js["closed"] = false;
        sessions.push_back(std::move(js));
    }
    json memories = json::array();
    for (const auto& m : record.memories) {
        memories.push_back({{"id", m.id},
                            {"perspective", m.perspective.value},
                            {"subject", m.subject.value},
                            {"text", m.text},
                            {"source_session", m.source_session}});
    }
    json links = json::array();
    for (const auto& l : record.links) links.push_back({l.lo, l.hi});

    json out = {{"scenario", to_json(record.scenario)},
                {"sessions", sessions},
                {"memories", memories},
                {"links", links}};
    if (!record.episode_id.empty()) out["episode_id"] = record.episode_id;
    if (!record.provenance.empty()) out["provenance"] = record.provenance;
    return out;
}

EpisodeRecord record_from_json(const json& j) {
    if (!j.is_object()) schema_error("record is not an object");
    EpisodeRecord out;
    if (auto it = j.find("episode_id"); it != j.end()) {
        if (!it->is_string()) schema_error("field 'episode_id' must be a string");
        out.episode_id = it->get<std::string>();
    }
    out.scenario = scenario_from_json(field(j, "scenario", "record"));

    const auto& sessions = array_field(j, "sessions", "record");
    for (std::size_t i = 0; i < sessions.size(); ++i) {
        const auto p = at("sessions", i);
        SessionState s;
        s.index = static_cast<int>(int_field(sessions[i], "index", p));
        s.partner = SpeakerId(string_field(sessions[i], "partner", p));
        const auto& utterances = array_field(sessions[i], "utterances", p);
        for (std::size_t k = 0; k < utterances.size(); ++k) {
            const auto up = at(p + ".utterances", k);
            Utterance u;
            u.speaker = SpeakerId(string_field(utterances[k], "speaker", up));
            u.text = string_field(utterances[k], "text", up);
            if (auto it = utterances[k].find("tags"); it != utterances[k].end()) {
                if (!it->is_array()) schema_error("field '" + up + ".tags' must be an array");
                for (std::size_t t = 0; t < it->size(); ++t) {
                    u.tags.insert(memory_id((*it)[t], at(up + ".tags", t)));
                }
            }
            s.turns.push_back(std::move(u));
        }
        if (auto it = sessions[i].find("summary"); it != sessions[i].end()) {
            if (!it->is_string()) schema_error("field '" + p + ".summary' must be a string");
            s.summary = it->get<std::string>();
        }
        if (auto it = sessions[i].find("closed"); it != sessions[i].end()) {
            if (!it->is_boolean()) schema_error("field '" + p + ".closed' must be a boolean");
            s.closed = it->get<bool>();
        } else {
            s.closed = true;
        }
        out.sessions.push_back(std::move(s));
    }

    const auto& memories = array_field(j, "memories", "record");
    for (std::size_t i = 0; i < memories.size(); ++i) {
        const auto p = at("memories", i);
        MemoryEntry m;
        m.id = memory_id(field(memories[i], "id", p), p + ".id");
        m.perspective = SpeakerId(string_field(memories[i], "perspective", p));
        m.subject = SpeakerId(string_field(memories[i], "subject", p));
        m.text = string_field(memories[i], "text", p);
        m.source_session = static_cast<int>(int_field(memories[i], "source_session", p));
        out.memories.push_back(std::move(m));
    }

    const auto& links = array_field(j, "links", "record");
    for (std::size_t i = 0; i < links.size(); ++i) {
        const auto p = at("links", i);
        if (!links[i].is_array() || links[i].size() != 2) schema_error("'" + p + "' must be a [lo, hi] pair");
        out.links.push_back(MemoryLink::canonical(memory_id(links[i][0], p + "[0]"),
                                                  memory_id(links[i][1], p + "[1]")));
    }

    if (auto it = j.find("provenance"); it != j.end()) {
        if (!it->is_object()) schema_error("field 'provenance' must be an object");
        out.provenance = *it;
    }
    return out;
}

std::string canonical_line(const EpisodeRecord& record) { return to_json(record).dump(); }

std::vector<EpisodeRecord> load_records(std::istream& in) {
    std::vector<EpisodeRecord> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(lineno, e.what());
        }
        try {
            out.push_back(record_from_json(j));
        } catch (const Error& e) {
            throw Error(e.code(), "line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

std::vector<EpisodeRecord> load_records(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    return load_records(in);
}

std::vector<EpisodeRecord> load_records_from(const std::filesystem::path& file_or_dir) {
    if (!std::filesystem::is_directory(file_or_dir)) return load_records(file_or_dir);
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(file_or_dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::vector<EpisodeRecord> out;
    for (const auto& f : files) {
        auto part = load_records(f);
        std::move(part.begin(), part.end(), std::back_inserter(out));
    }
    return out;
}

void save_records(std::ostream& out, const std::vector<EpisodeRecord>& records) {
    for (const auto& r : records) out << canonical_line(r) << '\n';
}

void save_records(const std::filesystem::path& path, const std::vector<EpisodeRecord>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    save_records(out, records);
}

std::size_t utf8_length(std::string_view text) noexcept {
    std::size_t count = 0;
    for (std::size_t i = 0; i < text.size();) {
        const auto c = static_cast<unsigned char>(text[i]);
        std::size_t len = 1;
        if (c >= 0xF0 && c <= 0xF4) len = 4;
        else if (c >= 0xE0) len = 3;
        else if (c >= 0xC2 && c <= 0xDF) len = 2;
        if (c >= 0xF5 || (c >= 0x80 && c < 0xC2)) len = 1;
        if (i + len > text.size()) len = 1;
        for (std::size_t k = 1; k < len; ++k) {
            if ((static_cast<unsigned char>(text[i + k]) & 0xC0) != 0x80) {
                len = 1;
                break;
            }
        }
        i += len;
        ++count;
    }
    return count;
}

std::vector<Violation> validate(const EpisodeRecord& record) {
    std::vector<Violation> out;
    auto flag = [&](const char* rule, std::string message, std::string where) {
        out.push_back({rule, std::move(message), std::move(where)});
    };

    // R1/R2 from the scenario; coverage (R3) is judged on the sessions below.
    for (auto& v : validate_scenario(record.scenario, {4, 6, false})) out.push_back(std::move(v));

    const auto& sc = record.scenario;
    const auto* main = sc.main_speaker();
    const auto roster = sc.roster();

    if (record.sessions.size() != 6) {
        flag("R2", "expected 6 sessions, got " + std::to_string(record.sessions.size()), "sessions");
    }
    std::set<SpeakerId> partners_seen;
    std::map<int, SpeakerId> partner_of_session;
    for (std::size_t i = 0; i < record.sessions.size(); ++i) {
        const auto& s = record.sessions[i];
        const auto where = at("sessions", i);
        if (s.index != static_cast<int>(i) + 1) {
            flag("R2", "session index " + std::to_string(s.index) + " out of order", where);
        }
        partner_of_session.emplace(s.index, s.partner);
        partners_seen.insert(s.partner);

        const bool partner_ok = roster.contains(s.partner) && (main == nullptr || s.partner != main->id);
        if (!partner_ok) {
            flag("R4", "session partner '" + s.partner.value + "' is not a non-main roster speaker", where);
        } else if (i < sc.events.size() && sc.events[i].partner != s.partner) {
            flag("R4", "session partner does not match the scenario event partner", where);
        }
        for (std::size_t k = 0; k < s.turns.size(); ++k) {
            const auto& u = s.turns[k];
            const auto uw = at(where + ".utterances", k);
            const bool speaker_ok = u.speaker == s.partner || (main != nullptr && u.speaker == main->id);
            if (!speaker_ok) {
                flag("R4", "utterance speaker '" + u.speaker.value + "' is neither main nor the session partner", uw);
            }
            const auto len = utf8_length(trim(u.text));
            if (len < kMinUtteranceChars) {
                flag("R5", "utterance has " + std::to_string(len) + " characters (minimum " +
                               std::to_string(kMinUtteranceChars) + ")",
                     uw);
            }
        }
    }
    for (const auto& s : sc.speakers) {
        if (s.is_main || partners_seen.contains(s.id)) continue;
        flag("R3", "speaker '" + s.name + "' participates in no session", "sessions");
    }

    std::set<MemoryId> ids;
    for (std::size_t i = 0; i < record.memories.size(); ++i) {
        const auto& m = record.memories[i];
        const auto where = at("memories", i);
        if (m.id != i + 1) flag("R6", "memory ids must be 1..N in order", where);
        ids.insert(m.id);
        const auto body = trim(m.text);
        if (body.empty()) {
            flag("R6", "memory text is empty", where);
        } else if (body.find(kRecordSeparator) != std::string_view::npos) {
            flag("R6", "memory text contains the record separator", where);
        } else if (std::string_view(".!?\"'").find(body.back()) == std::string_view::npos &&
                   !body.ends_with("\xe2\x80\x9d") && !body.ends_with("\xe2\x80\x99")) {
            flag("R6", "memory text is not a complete sentence", where);
        }
        if (!roster.contains(m.perspective)) {
            flag("R6", "memory perspective '" + m.perspective.value + "' is not in the roster", where);
        }
        auto ps = partner_of_session.find(m.source_session);
        if (ps == partner_of_session.end()) {
            flag("R6", "memory source session " + std::to_string(m.source_session) + " does not exist", where);
        } else if (m.subject != m.perspective && m.subject != ps->second) {
            flag("R6", "memory subject '" + m.subject.value + "' is neither the perspective nor the session partner",
                 where);
        }
    }

    std::set<MemoryLink> seen_links;
    for (std::size_t i = 0; i < record.links.size(); ++i) {
        const auto& l = record.links[i];
        const auto where = at("links", i);
        if (l.lo == l.hi) flag("R7", "self link on memory " + std::to_string(l.lo), where);
        if (!ids.contains(l.lo) || !ids.contains(l.hi)) {
            flag("R7", "link (" + std::to_string(l.lo) + "," + std::to_string(l.hi) + ") references a missing memory",
                 where);
        }
        if (!seen_links.insert(l).second) flag("R7", "duplicate link", where);
    }
    for (std::size_t i = 0; i < record.sessions.size(); ++i) {
        for (std::size_t k = 0; k < record.sessions[i].turns.size(); ++k) {
            for (const auto tag : record.sessions[i].turns[k].tags) {
                if (!ids.contains(tag)) {
                    flag("R7", "tag references missing memory " + std::to_string(tag),
                         at(at("sessions", i) + ".utterances", k));
                }
            }
        }
    }
    return out;
}

DatasetStats stats(const std::vector<EpisodeRecord>& records) {
    DatasetStats s;
    std::set<std::string> names;
    std::set<std::string> descriptors;
    for (const auto& r : records) {
        ++s.episodes;
        s.sessions += r.sessions.size();
        for (const auto& sess : r.sessions) s.total_turns += sess.turns.size();
        s.total_memories += r.memories.size();
        s.total_links += r.links.size();
        for (const auto& sp : r.scenario.speakers) {
            names.emplace(trim(sp.name));
            descriptors.emplace(trim(sp.descriptor));
        }
    }
    s.unique_names = names.size();
    s.unique_descriptors = descriptors.size();
    if (s.episodes > 0) {
        const auto n = static_cast<double>(s.episodes);
        s.avg_turns_per_episode = static_cast<double>(s.total_turns) / n;
        s.avg_memories_per_episode = static_cast<double>(s.total_memories) / n;
        s.avg_links_per_episode = static_cast<double>(s.total_links) / n;
    }
    return s;
}

std::string format_2dp(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", value);
    return buf;
}

json to_json(const DatasetStats& s) {
    return {{"episodes", s.episodes},
            {"sessions", s.sessions},
            {"unique_names", s.unique_names},
            {"unique_descriptors", s.unique_descriptors},
            {"total_turns", s.total_turns},
            {"total_memories", s.total_memories},
            {"total_links", s.total_links},
            {"avg_turns_per_episode", format_2dp(s.avg_turns_per_episode)},
            {"avg_memories_per_episode", format_2dp(s.avg_memories_per_episode)},
            {"avg_links_per_episode", format_2dp(s.avg_links_per_episode)}};
}

std::string format_stats_table(const DatasetStats& s) {
    std::ostringstream out;
    auto row = [&](const char* label, const std::string& value) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%-32s %12s\n", label, value.c_str());
        out << buf;
    };
    row("# of Episodes", std::to_string(s.episodes));
    row("# of Sessions", std::to_string(s.sessions));
    row("# of Unique Speaker Name", std::to_string(s.unique_names));
    row("# of Unique Speaker Job", std::to_string(s.unique_descriptors));
    row("Avg. Turns per Episode", format_2dp(s.avg_turns_per_episode));
    row("Avg. Memory per Episode", format_2dp(s.avg_memories_per_episode));
    row("Avg. Memory Links per Episode", format_2dp(s.avg_links_per_episode));
    return out.str();
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
    double sum = 0.0;
    for (const auto r : ratios) {
        if (!(r > 0.0) || !std::isfinite(r)) throw Error(ErrorCode::BadRatios, "split ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorCode::BadRatios, "split ratios must sum to 1");

    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> remainders{};
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = static_cast<double>(n) * ratios[i];
        sizes[i] = static_cast<std::size_t>(std::floor(exact));
        remainders[i] = exact - static_cast<double>(sizes[i]);
        assigned += sizes[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
    for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
    return sizes;
}

DatasetSplit split(std::vector<EpisodeRecord> records, const std::array<double, 3>& ratios,
                   std::uint64_t seed) {
    const auto sizes = split_sizes(records.size(), ratios);
    Rng rng(seed);
    rng.shuffle(std::span<EpisodeRecord>(records));
    DatasetSplit out;
    auto it = std::make_move_iterator(records.begin());
    out.train.assign(it, it + static_cast<std::ptrdiff_t>(sizes[0]));
    it += static_cast<std::ptrdiff_t>(sizes[0]);
    out.valid.assign(it, it + static_cast<std::ptrdiff_t>(sizes[1]));
    it += static_cast<std::ptrdiff_t>(sizes[1]);
    out.test.assign(it, std::make_move_iterator(records.end()));
    return out;
}

}  // namespace egomem
