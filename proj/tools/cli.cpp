#include "egomem/cli.hpp"

#include <atomic>
#include <charconv>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "egomem/backend.hpp"
#include "egomem/dataset.hpp"
#include "egomem/error.hpp"
#include "egomem/pipeline.hpp"
#include "egomem/prompts.hpp"
#include "egomem/selfplay.hpp"
#include "egomem/service.hpp"
#include "egomem/trainer.hpp"

namespace egomem::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kBold = "\x1b[1m";
constexpr const char* kDim = "\x1b[2m";
constexpr const char* kRed = "\x1b[31m";
constexpr const char* kReset = "\x1b[0m";

struct BackendFlags {
    std::string spec;
    std::string model;
    std::optional<double> temperature;
    int timeout_ms = 30000;
    int retries = 3;

    void add(CLI::App& app, bool required = true) {
        auto* opt = app.add_option("--backend", spec, "scripted:FILE or http:URL (chat-completion endpoint)");
        if (required) opt->required();
        app.add_option("--model", model, "Model name sent to an http backend");
        app.add_option("--temperature", temperature, "Sampling temperature sent to an http backend");
        app.add_option("--timeout-ms", timeout_ms, "Per-request timeout for an http backend")->capture_default_str();
        app.add_option("--retries", retries, "Retries on transport errors, 429 and 5xx")->capture_default_str();
    }

    std::unique_ptr<Backend> make(std::optional<std::uint64_t> seed = std::nullopt) const {
        auto config = parse_backend_spec(spec);
        if (!model.empty()) config.http.model = model;
        config.http.temperature = temperature;
        config.http.timeout = std::chrono::milliseconds(timeout_ms);
        config.http.retries = retries;
        config.http.seed = seed;
        return make_backend(config);
    }
};

void add_format(CLI::App& app, std::string& format) {
    app.add_option("--format", format, "Output format")
        ->check(CLI::IsMember({"text", "json"}))
        ->capture_default_str();
}

json violation_json(const Violation& v) { return {{"rule", v.rule}, {"message", v.message}, {"where", v.where}}; }

std::vector<std::string> read_lines(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

std::vector<fs::path> jsonl_files(const fs::path& path) {
    if (!fs::is_directory(path)) return {path};
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
        if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

std::vector<EpisodeRecord> load_all(const std::vector<std::string>& inputs) {
    std::vector<EpisodeRecord> out;
    for (const auto& p : inputs) {
        auto part = load_records_from(p);
        out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return out;
}

std::array<double, 3> parse_ratios(const std::string& text) {
    std::array<double, 3> r{};
    std::stringstream ss(text);
    std::string item;
    std::size_t n = 0;
    while (std::getline(ss, item, ',')) {
        if (n == 3) throw Error(ErrorCode::BadRatios, "expected three comma-separated ratios");
        try {
            r[n++] = std::stod(item);
        } catch (const std::logic_error&) {
            throw Error(ErrorCode::BadRatios, "'" + item + "' is not a number");
        }
    }
    if (n != 3) throw Error(ErrorCode::BadRatios, "expected three comma-separated ratios");
    return r;
}

// ---- dataset -------------------------------------------------------------

int cmd_validate(const std::vector<std::string>& inputs, const std::string& format, std::ostream& out) {
    json report = json::array();
    std::size_t records = 0;
    std::size_t problems = 0;
    for (const auto& input : inputs) {
        for (const auto& file : jsonl_files(input)) {
            const auto lines = read_lines(file);
            for (std::size_t i = 0; i < lines.size(); ++i) {
                if (trim(lines[i]).empty()) continue;
                ++records;
                std::vector<Violation> violations;
                std::string error;
                std::string error_code;
                try {
                    violations = validate(record_from_json(json::parse(lines[i])));
                } catch (const json::parse_error& e) {
                    error_code = "ParseError";
                    error = e.what();
                } catch (const Error& e) {
                    error_code = std::string(to_string(e.code()));
                    error = e.what();
                }
                if (violations.empty() && error.empty()) continue;
                ++problems;
                const auto where = file.string() + ":" + std::to_string(i + 1);
                if (format == "json") {
                    json entry = {{"file", file.string()}, {"line", i + 1}};
                    if (!error.empty()) entry["error"] = {{"code", error_code}, {"message", error}};
                    json vs = json::array();
                    for (const auto& v : violations) vs.push_back(violation_json(v));
                    entry["violations"] = vs;
                    report.push_back(entry);
                } else {
                    if (!error.empty()) out << where << ": " << error_code << ": " << error << '\n';
                    for (const auto& v : violations) {
                        out << where << ": " << v.rule << ": " << v.message;
                        if (!v.where.empty()) out << " (" << v.where << ")";
                        out << '\n';
                    }
                }
            }
        }
    }
    if (format == "json") {
        out << json{{"records", records}, {"invalid", problems}, {"problems", report}}.dump() << '\n';
    } else {
        out << records << " records, " << problems << " invalid\n";
    }
    return problems == 0 ? 0 : 1;
}

int cmd_stats(const std::vector<std::string>& inputs, const std::string& report_path, const std::string& format,
              std::ostream& out) {
    const auto s = stats(load_all(inputs));
    if (format == "json") {
        out << to_json(s).dump() << '\n';
    } else {
        out << format_stats_table(s);
    }
    if (!report_path.empty()) {
        std::ofstream rep(report_path);
        rep << to_json(s).dump(2) << '\n';
        if (!rep) throw Error(ErrorCode::IoError, "cannot write " + report_path);
    }
    return 0;
}

int cmd_split(const std::vector<std::string>& inputs, const std::string& ratios, std::uint64_t seed,
              const std::string& out_dir, const std::string& format, std::ostream& out) {
    auto parts = split(load_all(inputs), parse_ratios(ratios), seed);
    fs::create_directories(out_dir);
    save_records(fs::path(out_dir) / "train.jsonl", parts.train);
    save_records(fs::path(out_dir) / "valid.jsonl", parts.valid);
    save_records(fs::path(out_dir) / "test.jsonl", parts.test);
    if (format == "json") {
        out << json{{"train", parts.train.size()}, {"valid", parts.valid.size()}, {"test", parts.test.size()}}.dump()
            << '\n';
    } else {
        out << "train " << parts.train.size() << ", valid " << parts.valid.size() << ", test " << parts.test.size()
            << " -> " << out_dir << '\n';
    }
    return 0;
}

// ---- pipeline ------------------------------------------------------------

int cmd_pipeline(const std::vector<std::string>& topic_args, const std::string& topics_file,
                 const BackendFlags& backend_flags, PipelineConfig config, const std::string& out_path,
                 const std::string& format, std::ostream& out) {
    std::vector<std::string> topics = topic_args;
    if (!topics_file.empty()) {
        for (const auto& line : read_lines(topics_file)) {
            if (!trim(line).empty()) topics.emplace_back(trim(line));
        }
    }
    if (topics.empty()) throw Error(ErrorCode::InvalidConfig, "no topics given");
    if (!backend_flags.model.empty()) config.model = backend_flags.model;
    config.temperature = backend_flags.temperature;
    auto backend = backend_flags.make(config.seed);
    const auto outcomes = run_pipeline(topics, *backend, config);

    std::vector<EpisodeRecord> accepted;
    json report = json::array();
    bool clean = true;
    for (const auto& o : outcomes) {
        if (o.status == EpisodeStatus::Accepted) accepted.push_back(*o.record);
        else clean = false;
        if (format == "json") {
            json entry = {{"topic", o.topic}, {"status", to_string(o.status)}, {"backend_calls", o.backend_calls}};
            if (!o.stage.empty()) entry["stage"] = o.stage;
            if (!o.diagnostic.empty()) entry["diagnostic"] = o.diagnostic;
            json vs = json::array();
            for (const auto& v : o.violations) vs.push_back(violation_json(v));
            entry["violations"] = vs;
            report.push_back(entry);
        } else {
            out << to_string(o.status) << ": " << o.topic;
            if (!o.diagnostic.empty()) out << " [" << o.stage << "] " << o.diagnostic;
            out << '\n';
            for (const auto& v : o.violations) out << "  " << v.rule << ": " << v.message << '\n';
        }
    }
    if (!out_path.empty()) save_records(out_path, accepted);
    if (format == "json") {
        out << json{{"episodes", report}, {"accepted", accepted.size()}}.dump() << '\n';
    } else {
        out << accepted.size() << " of " << outcomes.size() << " episodes accepted\n";
    }
    return clean ? 0 : 1;
}

// ---- train-retriever -----------------------------------------------------

int cmd_train(const std::vector<std::string>& inputs, const std::string& out_path, const TrainConfig& config,
              const std::string& format, std::ostream& out) {
    const auto records = load_all(inputs);
    const auto triplets = mine_triplets(records, config.seed);
    const auto result = train(triplets, config);
    save_encoder(out_path, result.pair);
    const auto& r = result.report;
    if (format == "json") {
        out << json{{"triplets", triplets.size()},
                    {"initial_loss", r.initial_loss},
                    {"final_loss", r.final_loss},
                    {"epochs_run", r.epochs_run},
                    {"best_epoch", r.best_epoch},
                    {"epoch_losses", r.epoch_losses},
                    {"encoder", out_path}}
                   .dump()
            << '\n';
    } else {
        out << triplets.size() << " triplets, " << r.epochs_run << " epochs\n"
            << "mean loss " << r.initial_loss << " -> " << r.final_loss << " (best epoch " << r.best_epoch << ")\n"
            << "encoder written to " << out_path << '\n';
    }
    return 0;
}

// ---- selfplay ------------------------------------------------------------

std::vector<EpisodeRecord> scenario_inputs(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const auto text = ss.str();
    try {
        const auto j = json::parse(text);
        EpisodeRecord r;
        r.scenario = scenario_from_json(j.contains("scenario") ? j.at("scenario") : j);
        if (j.contains("episode_id") && j["episode_id"].is_string()) r.episode_id = j["episode_id"];
        return {r};
    } catch (const json::parse_error&) {
        std::istringstream lines(text);
        return load_records(lines);
    }
}

int cmd_selfplay(const std::string& scenario_path, const BackendFlags& backend_flags, const std::string& embedder_spec,
                 SelfPlayConfig config, const std::string& out_path, const std::string& agents_out,
                 const std::string& format, std::ostream& out) {
    const auto inputs = scenario_inputs(scenario_path);
    auto backend = backend_flags.make(config.seed);
    const auto embedder = make_embedder(embedder_spec);
    std::vector<EpisodeRecord> records;
    std::vector<EpisodeRecord> agents;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto cfg = config;
        if (!cfg.opening_utterance && !inputs[i].sessions.empty() && !inputs[i].sessions.front().turns.empty()) {
            cfg.opening_utterance = inputs[i].sessions.front().turns.front().text;
        }
        auto result = run_selfplay(inputs[i].scenario, *backend, *embedder, cfg);
        const auto id = inputs[i].episode_id.empty() ? "selfplay-" + std::to_string(i + 1) : inputs[i].episode_id;
        result.record.episode_id = id;
        for (auto& [speaker, rec] : result.agents) {
            rec.episode_id = id + "/" + speaker.value;
            agents.push_back(rec);
        }
        records.push_back(std::move(result.record));
    }
    save_records(out_path, records);
    if (!agents_out.empty()) save_records(agents_out, agents);
    if (format == "json") {
        json eps = json::array();
        for (const auto& r : records) {
            eps.push_back({{"episode_id", r.episode_id}, {"memories", r.memories.size()}, {"links", r.links.size()}});
        }
        out << json{{"episodes", eps}, {"out", out_path}}.dump() << '\n';
    } else {
        for (const auto& r : records) {
            out << r.episode_id << ": " << r.sessions.size() << " sessions, " << r.memories.size() << " memories, "
                << r.links.size() << " links\n";
        }
    }
    return 0;
}

// ---- serve ---------------------------------------------------------------

std::atomic<bool> g_stop_requested{false};

extern "C" void on_stop_signal(int) { g_stop_requested = true; }

int cmd_serve(ServiceConfig config, const BackendFlags& backend_flags, const std::string& embedder_spec,
              std::ostream& out) {
    std::shared_ptr<Backend> backend = backend_flags.make();
    Service service(std::move(config), backend, make_embedder(embedder_spec));
    const auto restored = service.load_snapshot();
    const int port = service.bind();
    out << "listening on port " << port;
    if (restored > 0) out << " (" << restored << " episodes restored)";
    out << std::endl;

    g_stop_requested = false;
    std::signal(SIGINT, on_stop_signal);
    std::signal(SIGTERM, on_stop_signal);
    std::thread watcher([&service] {
        auto last_sweep = std::chrono::steady_clock::now();
        while (!g_stop_requested) {
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
            if (std::chrono::steady_clock::now() - last_sweep > std::chrono::minutes(1)) {
                service.evict_idle();
                last_sweep = std::chrono::steady_clock::now();
            }
        }
        service.stop();
    });
    service.run();
    g_stop_requested = true;
    watcher.join();
    service.save_snapshot();
    out << "stopped" << std::endl;
    return 0;
}

// ---- chat ----------------------------------------------------------------

struct Paint {
    bool on;
    std::string operator()(const char* code, const std::string& text) const {
        return on ? std::string(code) + text + kReset : text;
    }
};

void print_evidence(std::ostream& out, const MemoryEvidence& ev, const Paint& paint) {
    char score[32];
    std::snprintf(score, sizeof score, "%.3f", ev.score);
    out << paint(kDim, "  memory #" + std::to_string(ev.primary.id) + " (" + score + "): " + ev.primary.text) << '\n';
    for (const auto& l : ev.links) out << paint(kDim, "    link #" + std::to_string(l.id) + ": " + l.text) << '\n';
}

std::string subject_name(const Episode& ep, const SpeakerId& id) {
    const auto* p = ep.scenario().find(id);
    return p ? p->name : id.value;
}

json memory_json(const MemoryEntry& m) {
    return {{"id", m.id}, {"subject", m.subject.value}, {"text", m.text}, {"source_session", m.source_session}};
}

}  // namespace

std::shared_ptr<const Embedder> make_embedder(std::string_view spec) {
    if (spec == "hashed") return std::make_shared<HashedEmbedder>();
    if (spec.starts_with("hashed:")) {
        const auto digits = spec.substr(7);
        std::size_t dim = 0;
        auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), dim);
        if (ec != std::errc() || ptr != digits.data() + digits.size()) {
            throw Error(ErrorCode::InvalidConfig, "bad embedder dimension in '" + std::string(spec) + "'");
        }
        return std::make_shared<HashedEmbedder>(dim);
    }
    if (spec.starts_with("trained:")) {
        return std::make_shared<LinearEmbedder>(load_encoder(fs::path(std::string(spec.substr(8)))));
    }
    throw Error(ErrorCode::InvalidConfig, "embedder must be hashed, hashed:DIM or trained:FILE");
}

Scenario load_scenario_file(const std::string& path) {
    const auto inputs = scenario_inputs(path);
    if (inputs.empty()) throw Error(ErrorCode::EmptyDataset, path + " holds no scenario");
    return inputs.front().scenario;
}

int run_chat(Episode& episode, Backend& backend, const Embedder& embedder, const SpeakerId& first_partner,
             std::istream& in, std::ostream& out, const ChatOptions& options) {
    const Paint paint{options.color};
    const auto& main = episode.main();
    auto emit = [&](const json& j) { out << j.dump() << '\n'; };
    auto error = [&](const std::string& msg) {
        if (options.json) emit({{"event", "error"}, {"message", msg}});
        else out << paint(kRed, "error: " + msg) << '\n';
    };

    auto open = [&](const SpeakerId& partner) {
        const int index = episode.start_session(partner);
        const auto& p = *episode.scenario().find(partner);
        if (options.json) {
            emit({{"event", "session_start"}, {"session", index}, {"partner", p.name}});
            return;
        }
        out << paint(kBold, "Session " + std::to_string(index) + ": " + main.name + " (" + main.descriptor +
                                ") and " + p.name + " (" + p.descriptor + ")")
            << '\n';
        if (static_cast<std::size_t>(index) <= episode.scenario().events.size()) {
            out << paint(kDim, "Event: " + episode.scenario().events[static_cast<std::size_t>(index) - 1].description)
                << '\n';
        }
        out << paint(kDim, "You speak as " + p.name + ".") << '\n';
    };

    auto close = [&] {
        const int index = episode.current()->index;
        const auto result = episode.end_session(backend);
        if (options.json) {
            json mems = json::array();
            for (const auto id : result.new_memories) mems.push_back(memory_json(episode.store().get_memory(id)));
            json links = json::array();
            for (const auto& l : result.new_links) links.push_back({l.lo, l.hi});
            emit({{"event", "session_end"}, {"session", index}, {"new_memories", mems}, {"new_links", links}});
            return;
        }
        out << paint(kBold, "Session " + std::to_string(index) + " ended.") << '\n';
        if (result.new_memories.empty()) out << "No new memories.\n";
        for (const auto id : result.new_memories) {
            const auto& m = episode.store().get_memory(id);
            out << "  #" << m.id << " [About " << subject_name(episode, m.subject) << "] " << m.text << '\n';
        }
        if (!result.new_links.empty()) {
            out << "New links:";
            for (const auto& l : result.new_links) out << ' ' << l.lo << '-' << l.hi;
            out << '\n';
        }
    };

    auto resolve = [&](std::string_view name) -> std::optional<SpeakerId> {
        if (const auto* p = episode.scenario().find_by_name(name)) return p->id;
        if (const auto* p = episode.scenario().find(SpeakerId(std::string(name)))) return p->id;
        return std::nullopt;
    };

    try {
        open(first_partner);
    } catch (const Error& e) {
        error(e.what());
        return 1;
    }

    auto cap_hint = [&] {
        const auto& s = *episode.current();
        const auto msg = "Turn limit of " + std::to_string(s.max_turns) + " reached; use /session <name> to continue.";
        if (options.json) emit({{"event", "turn_limit"}, {"message", msg}});
        else out << paint(kDim, msg) << '\n';
    };

    std::string line;
    while (true) {
        if (options.prompt) {
            const auto* partner = episode.current() ? episode.scenario().find(episode.current()->partner) : nullptr;
            out << (partner ? partner->name : std::string("egomem")) << "> " << std::flush;
        }
        if (!std::getline(in, line)) break;
        const auto text = trim(line);
        if (text.empty()) continue;
        if (options.echo_input && !options.json) {
            const auto* partner = episode.current() ? episode.scenario().find(episode.current()->partner) : nullptr;
            if (text.front() == '/') out << "> " << text << '\n';
            else out << (partner ? partner->name : std::string("?")) << ": " << text << '\n';
        }

        if (text == "/quit" || text == "/exit") break;
        if (text == "/help") {
            out << "/session NAME  end this session and start one with NAME\n"
                   "/end           end this session\n"
                   "/memories      list memories and links\n"
                   "/quit          leave\n";
            continue;
        }
        if (text == "/memories") {
            if (options.json) {
                json mems = json::array();
                for (const auto& m : episode.store().entries()) mems.push_back(memory_json(m));
                json links = json::array();
                for (const auto& l : episode.graph().links()) links.push_back({l.lo, l.hi});
                emit({{"event", "memories"}, {"memories", mems}, {"links", links}});
                continue;
            }
            if (episode.store().entries().empty()) out << "No memories yet.\n";
            for (const auto& m : episode.store().entries()) {
                out << "  #" << m.id << " [About " << subject_name(episode, m.subject) << ", session "
                    << m.source_session << "] " << m.text << '\n';
            }
            if (!episode.graph().empty()) {
                out << "Links:";
                for (const auto& l : episode.graph().links()) out << ' ' << l.lo << '-' << l.hi;
                out << '\n';
            }
            continue;
        }
        if (text == "/end") {
            if (!episode.current()) {
                error("no session is open");
                continue;
            }
            try {
                close();
            } catch (const Error& e) {
                error(e.what());
            }
            continue;
        }
        if (text.starts_with("/session")) {
            const auto name = trim(text.substr(8));
            if (name.empty()) {
                error("usage: /session NAME");
                continue;
            }
            const auto partner = resolve(name);
            if (!partner) {
                error("unknown speaker '" + std::string(name) + "'");
                continue;
            }
            if (*partner == main.id) {
                error(main.name + " is the main speaker and cannot be the partner");
                continue;
            }
            const auto done = episode.completed_sessions() + (episode.current() ? 1 : 0);
            if (done >= static_cast<int>(episode.options().shape.sessions)) {
                error("the episode already has " + std::to_string(episode.options().shape.sessions) + " sessions");
                continue;
            }
            try {
                if (episode.current()) close();
                open(*partner);
            } catch (const Error& e) {
                error(e.what());
            }
            continue;
        }
        if (text.front() == '/') {
            error("unknown command '" + std::string(text) + "'; try /help");
            continue;
        }
        if (!episode.current()) {
            error("no session is open; use /session NAME");
            continue;
        }
        try {
            const auto result = episode.take_turn(text, backend, embedder);
            if (options.json) {
                json ev = nullptr;
                if (result.used) {
                    json links = json::array();
                    for (const auto& l : result.used->links) links.push_back({{"id", l.id}, {"text", l.text}});
                    ev = {{"primary",
                           {{"id", result.used->primary.id},
                            {"text", result.used->primary.text},
                            {"score", result.used->score}}},
                          {"links", links}};
                }
                emit({{"event", "reply"}, {"speaker", main.name}, {"text", result.reply}, {"retrieval", ev}});
            } else {
                out << paint(kBold, main.name + ":") << ' ' << result.reply << '\n';
                if (options.verbose && result.used) print_evidence(out, *result.used, paint);
            }
            const auto& s = *episode.current();
            if (static_cast<int>(s.turns.size()) + 2 > s.max_turns) cap_hint();
        } catch (const Error& e) {
            if (e.code() == ErrorCode::TurnLimitReached) cap_hint();
            else error(e.what());
        }
    }
    return 0;
}

int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err) {
    CLI::App app{"Mixed-session chat engine with egocentric memory", "egomem"};
    app.require_subcommand(1);
    app.set_version_flag("--version", "egomem 1.0.0");

    // chat
    auto* chat = app.add_subcommand("chat", "Chat in the terminal as the session partner");
    std::string chat_scenario;
    BackendFlags chat_backend;
    std::string chat_embedder = "hashed";
    std::string chat_partner;
    std::string chat_save;
    std::string chat_format = "text";
    bool chat_verbose = false;
    int chat_max_turns = 8;
    chat->add_option("--scenario", chat_scenario, "Scenario JSON or episode record file")->required();
    chat_backend.add(*chat);
    chat->add_option("--embedder", chat_embedder, "hashed, hashed:DIM or trained:FILE")->capture_default_str();
    chat->add_option("--partner", chat_partner, "Partner of the first session (default: first event's partner)");
    chat->add_option("--max-turns", chat_max_turns, "Utterances per session")->capture_default_str();
    chat->add_option("--save", chat_save, "Write the episode record here on exit");
    chat->add_flag("-v,--verbose", chat_verbose, "Show the memory behind each reply");
    add_format(*chat, chat_format);

    // serve
    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    ServiceConfig serve_config;
    BackendFlags serve_backend;
    std::string serve_embedder = "hashed";
    std::string serve_snapshot;
    std::string serve_format = "text";
    double serve_ttl_hours = 24.0;
    const char* token_env = std::getenv("EGOMEM_SERVICE_TOKEN");
    if (token_env != nullptr) serve_config.bearer_token = token_env;
    serve->add_option("--host", serve_config.host, "Listen address")->capture_default_str();
    serve->add_option("--port", serve_config.port, "Listen port (0 picks one)")->capture_default_str();
    serve_backend.add(*serve);
    serve->add_option("--embedder", serve_embedder, "hashed, hashed:DIM or trained:FILE")->capture_default_str();
    serve->add_option("--snapshot-dir", serve_snapshot, "Restore and save episodes here");
    serve->add_option("--ttl-hours", serve_ttl_hours, "Evict episodes idle this long")->capture_default_str();
    serve->add_option("--cors-origin", serve_config.cors_origin, "Allowed origin; empty disables CORS")
        ->capture_default_str();
    serve->add_option("--token", serve_config.bearer_token,
                      "Require this bearer token (default: EGOMEM_SERVICE_TOKEN)");
    serve->add_option("--max-turns", serve_config.engine.max_turns, "Utterances per session")->capture_default_str();
    add_format(*serve, serve_format);

    // dataset
    auto* dataset = app.add_subcommand("dataset", "Validate, summarize and split episode records");
    dataset->require_subcommand(1);
    std::vector<std::string> ds_inputs;
    std::string ds_format = "text";
    auto* validate_cmd = dataset->add_subcommand("validate", "Check records against R1-R7");
    validate_cmd->add_option("inputs", ds_inputs, "JSONL files or directories")->required();
    add_format(*validate_cmd, ds_format);
    auto* stats_cmd = dataset->add_subcommand("stats", "Corpus statistics");
    std::string stats_report;
    stats_cmd->add_option("inputs", ds_inputs, "JSONL files or directories")->required();
    stats_cmd->add_option("--report", stats_report, "Also write a JSON report here");
    add_format(*stats_cmd, ds_format);
    auto* split_cmd = dataset->add_subcommand("split", "Seeded train/valid/test split");
    std::string split_ratios = "0.8,0.1,0.1";
    std::uint64_t split_seed = 0;
    std::string split_out;
    split_cmd->add_option("inputs", ds_inputs, "JSONL files or directories")->required();
    split_cmd->add_option("--ratios", split_ratios, "train,valid,test")->capture_default_str();
    split_cmd->add_option("--seed", split_seed, "Shuffle seed")->capture_default_str();
    split_cmd->add_option("--out-dir", split_out, "Where train/valid/test.jsonl go")->required();
    add_format(*split_cmd, ds_format);

    // pipeline
    auto* pipeline = app.add_subcommand("pipeline", "Synthetic episode generation");
    pipeline->require_subcommand(1);
    auto* pipeline_run = pipeline->add_subcommand("run", "Generate episodes for topics");
    std::vector<std::string> pl_topics;
    std::string pl_topics_file;
    BackendFlags pl_backend;
    PipelineConfig pl_config;
    std::string pl_job_dir;
    std::string pl_out;
    std::string pl_format = "text";
    pipeline_run->add_option("--topic", pl_topics, "Topic (repeatable)");
    pipeline_run->add_option("--topics-file", pl_topics_file, "One topic per line");
    pl_backend.add(*pipeline_run);
    pipeline_run->add_option("--job-dir", pl_job_dir, "Checkpoints and call log; rerun to resume");
    pipeline_run->add_option("--concurrency", pl_config.concurrency, "Episodes in flight")->capture_default_str();
    pipeline_run->add_option("--seed", pl_config.seed, "Sampling seed sent to an http backend");
    pipeline_run->add_option("--out", pl_out, "Accepted episodes (JSONL)")->required();
    add_format(*pipeline_run, pl_format);

    // train-retriever
    auto* train_cmd = app.add_subcommand("train-retriever", "Train the dual encoder on tagged episodes");
    std::vector<std::string> tr_inputs;
    std::string tr_out;
    std::string tr_format = "text";
    TrainConfig tr_config;
    train_cmd->add_option("inputs", tr_inputs, "JSONL files or directories with tagged utterances")->required();
    train_cmd->add_option("--out", tr_out, "Encoder file")->required();
    train_cmd->add_option("--epochs", tr_config.max_epochs, "Maximum epochs")->capture_default_str();
    train_cmd->add_option("--lr", tr_config.learning_rate, "Adam learning rate")->capture_default_str();
    train_cmd->add_option("--batch", tr_config.batch_size, "Batch size")->capture_default_str();
    train_cmd->add_option("--margin", tr_config.margin, "Triplet margin")->capture_default_str();
    train_cmd->add_option("--seed", tr_config.seed, "Initialization, shuffling and negative sampling seed")
        ->capture_default_str();
    train_cmd->add_option("--dim-in", tr_config.dim_in, "Hashed feature size")->capture_default_str();
    train_cmd->add_option("--dim-out", tr_config.dim_out, "Encoder output size")->capture_default_str();
    add_format(*train_cmd, tr_format);

    // selfplay
    auto* selfplay = app.add_subcommand("selfplay", "Let four agents play out scenarios");
    std::string sp_scenario;
    BackendFlags sp_backend;
    std::string sp_embedder = "hashed";
    SelfPlayConfig sp_config;
    std::string sp_opening;
    std::string sp_out;
    std::string sp_agents;
    std::string sp_format = "text";
    selfplay->add_option("--scenario", sp_scenario, "Scenario JSON, episode record, or JSONL of records")->required();
    sp_backend.add(*selfplay);
    selfplay->add_option("--embedder", sp_embedder, "hashed, hashed:DIM or trained:FILE")->capture_default_str();
    selfplay->add_option("--seed", sp_config.seed, "Recorded in provenance and sent to an http backend")
        ->capture_default_str();
    selfplay->add_option("--max-turns", sp_config.max_turns, "Utterances per session")->capture_default_str();
    selfplay->add_option("--opening", sp_opening, "First utterance of session 1");
    selfplay->add_option("--out", sp_out, "Main-agent episodes (JSONL)")->required();
    selfplay->add_option("--agents-out", sp_agents, "Every agent's own episode (JSONL)");
    add_format(*selfplay, sp_format);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        if (chat->parsed()) {
            EngineOptions opts;
            opts.max_turns = chat_max_turns;
            auto episode = Episode::start(load_scenario_file(chat_scenario), opts);
            auto backend = chat_backend.make();
            const auto embedder = make_embedder(chat_embedder);
            SpeakerId first = episode.scenario().events.front().partner;
            if (!chat_partner.empty()) {
                const auto* p = episode.scenario().find_by_name(chat_partner);
                if (p == nullptr) throw Error(ErrorCode::UnknownSpeaker, "unknown partner '" + chat_partner + "'");
                first = p->id;
            }
            ChatOptions co;
            co.verbose = chat_verbose;
            co.json = chat_format == "json";
            const bool interactive = &in == &std::cin && isatty(0) != 0;
            co.prompt = interactive;
            co.echo_input = !interactive;
            co.color = &out == &std::cout && isatty(1) != 0 && std::getenv("NO_COLOR") == nullptr;
            const int code = run_chat(episode, *backend, *embedder, first, in, out, co);
            if (!chat_save.empty()) save_records(chat_save, {episode.to_record()});
            return code;
        }
        if (serve->parsed()) {
            serve_config.snapshot_dir = serve_snapshot;
            serve_config.idle_ttl = std::chrono::seconds(static_cast<long long>(serve_ttl_hours * 3600.0));
            return cmd_serve(serve_config, serve_backend, serve_embedder, out);
        }
        if (validate_cmd->parsed()) return cmd_validate(ds_inputs, ds_format, out);
        if (stats_cmd->parsed()) return cmd_stats(ds_inputs, stats_report, ds_format, out);
        if (split_cmd->parsed()) return cmd_split(ds_inputs, split_ratios, split_seed, split_out, ds_format, out);
        if (pipeline_run->parsed()) {
            pl_config.job_dir = pl_job_dir;
            return cmd_pipeline(pl_topics, pl_topics_file, pl_backend, pl_config, pl_out, pl_format, out);
        }
        if (train_cmd->parsed()) return cmd_train(tr_inputs, tr_out, tr_config, tr_format, out);
        if (selfplay->parsed()) {
            if (!sp_opening.empty()) sp_config.opening_utterance = sp_opening;
            return cmd_selfplay(sp_scenario, sp_backend, sp_embedder, sp_config, sp_out, sp_agents, sp_format, out);
        }
    } catch (const ScenarioError& e) {
        err << "error: InvalidScenario: " << e.what() << '\n';
        for (const auto& v : e.violations()) err << "  " << v.rule << ": " << v.message << '\n';
        return 1;
    } catch (const Error& e) {
        err << "error: " << to_string(e.code()) << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace egomem::cli
