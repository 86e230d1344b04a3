#include "egomem/service.hpp"

#include <atomic>
#include <charconv>
#include <condition_variable>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "egomem/dataset.hpp"
#include "egomem/error.hpp"

namespace egomem {

namespace {

using nlohmann::json;

struct HttpFailure {
    int status;
    json body;
};

json error_body(std::string_view code, const std::string& message, const std::string& rule = {}) {
    json body = {{"code", code}, {"message", message}, {"rule", nullptr}};
    if (!rule.empty()) body["rule"] = rule;
    return body;
}

[[noreturn]] void fail(int status, std::string_view code, const std::string& message) {
    throw HttpFailure{status, error_body(code, message)};
}

json memory_json(const MemoryEntry& m) {
    return {{"id", m.id},
            {"perspective", m.perspective.value},
            {"subject", m.subject.value},
            {"text", m.text},
            {"source_session", m.source_session}};
}

json link_json(const MemoryLink& l) { return {{"lo", l.lo}, {"hi", l.hi}}; }

json evidence_json(const std::optional<MemoryEvidence>& ev) {
    if (!ev) return nullptr;
    json links = json::array();
    for (const auto& item : ev->links) links.push_back({{"id", item.id}, {"text", item.text}});
    return {{"primary", {{"id", ev->primary.id}, {"text", ev->primary.text}, {"score", ev->score}}},
            {"links", links}};
}

json session_json(const SessionState& s) {
    json turns = json::array();
    for (const auto& u : s.turns) turns.push_back({{"speaker", u.speaker.value}, {"text", u.text}});
    return {{"index", s.index}, {"partner", s.partner.value}, {"turns", turns}, {"max_turns", s.max_turns}};
}

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
        auto j = json::parse(req.body);
        if (!j.is_object()) fail(400, "ParseError", "request body must be a JSON object");
        return j;
    } catch (const json::parse_error& e) {
        fail(400, "ParseError", std::string("request body is not valid JSON: ") + e.what());
    }
}

std::string string_member(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end() || !it->is_string()) fail(400, "SchemaError", std::string("missing string field '") + key + "'");
    return it->get<std::string>();
}

std::size_t parse_size(const std::string& text, const char* what) {
    std::size_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (text.empty() || ec != std::errc() || ptr != end) {
        fail(400, "ParseError", std::string("query parameter '") + what + "' is not a non-negative integer");
    }
    return v;
}

}  // namespace

struct Service::Impl {
    struct Entry {
        explicit Entry(Episode ep) : episode(std::move(ep)) {}
        std::mutex mu;
        Episode episode;
        std::chrono::system_clock::time_point created_at;
        std::chrono::system_clock::time_point last_activity;
    };

    ServiceConfig config;
    std::shared_ptr<Backend> backend;
    std::shared_ptr<const Embedder> embedder;
    Clock clock;
    httplib::Server server;
    int bound_port = -1;

    mutable std::mutex table_mu;
    std::map<std::string, std::shared_ptr<Entry>> episodes;
    std::mt19937_64 id_rng{std::random_device{}()};
    std::uint64_t id_counter = 0;

    std::string new_id() {
        // Caller holds table_mu.
        char buf[40];
        std::snprintf(buf, sizeof buf, "ep_%012llx%04llx", static_cast<unsigned long long>(id_rng() >> 16),
                      static_cast<unsigned long long>(++id_counter & 0xffff));
        return buf;
    }

    std::shared_ptr<Entry> find(const std::string& id) {
        std::lock_guard lock(table_mu);
        auto it = episodes.find(id);
        if (it == episodes.end()) fail(404, "NotFound", "unknown episode '" + id + "'");
        return it->second;
    }

    std::size_t evict_idle() {
        const auto now = clock();
        std::vector<std::shared_ptr<Entry>> dropped;
        std::lock_guard lock(table_mu);
        for (auto it = episodes.begin(); it != episodes.end();) {
            auto entry = it->second;
            std::unique_lock entry_lock(entry->mu, std::try_to_lock);
            if (entry_lock.owns_lock() && now - entry->last_activity > config.idle_ttl) {
                dropped.push_back(entry);
                it = episodes.erase(it);
            } else {
                ++it;
            }
        }
        return dropped.size();
    }

    void touch(Entry& entry) { entry.last_activity = clock(); }

    void authorize(const httplib::Request& req) const {
        if (config.bearer_token.empty()) return;
        if (req.get_header_value("Authorization") != "Bearer " + config.bearer_token) {
            fail(401, "Unauthorized", "missing or wrong bearer token");
        }
    }

    template <class F>
    httplib::Server::Handler wrap(F f, bool needs_auth = true) {
        return [this, f, needs_auth](const httplib::Request& req, httplib::Response& res) {
            int status = 200;
            json body;
            try {
                if (needs_auth) authorize(req);
                body = f(req, status);
            } catch (const HttpFailure& e) {
                status = e.status;
                body = e.body;
            } catch (const std::exception& e) {
                status = 500;
                body = error_body("Internal", e.what());
            }
            res.status = status;
            if (status == 204) return;
            res.set_content(body.dump(), "application/json");
        };
    }

    [[noreturn]] static void rethrow_engine(const Error& e) {
        switch (e.code()) {
            case ErrorCode::SessionOpen:
            case ErrorCode::EpisodeComplete:
            case ErrorCode::TurnLimitReached:
            case ErrorCode::WrongTurnOrder:
            case ErrorCode::NoOpenSession:
            case ErrorCode::EmptySession:
                fail(409, to_string(e.code()), e.what());
            case ErrorCode::UnknownSpeaker:
            case ErrorCode::MainAsPartner:
            case ErrorCode::EmptyText:
                fail(422, to_string(e.code()), e.what());
            default:
                fail(502, to_string(e.code()), e.what());
        }
    }

    json create_episode(const httplib::Request& req, int& status) {
        const auto body = parse_body(req);
        auto it = body.find("scenario");
        if (it == body.end() || !it->is_object()) fail(400, "SchemaError", "missing object field 'scenario'");
        Scenario scenario;
        try {
            scenario = scenario_from_json(*it);
        } catch (const Error& e) {
            fail(400, to_string(e.code()), e.what());
        }
        std::optional<Episode> ep;
        try {
            ep.emplace(Episode::start(std::move(scenario), config.engine));
        } catch (const ScenarioError& e) {
            json violations = json::array();
            for (const auto& v : e.violations()) {
                violations.push_back({{"rule", v.rule}, {"message", v.message}, {"where", v.where}});
            }
            auto err = error_body("InvalidScenario", e.what(), e.violations().empty() ? "" : e.violations().front().rule);
            err["violations"] = violations;
            throw HttpFailure{422, err};
        }
        evict_idle();
        auto entry = std::make_shared<Entry>(std::move(*ep));
        entry->created_at = entry->last_activity = clock();
        std::string id;
        {
            std::lock_guard lock(table_mu);
            id = new_id();
            episodes.emplace(id, entry);
        }
        status = 201;
        return {{"episode_id", id}};
    }

    json start_session(const httplib::Request& req, int& status) {
        auto entry = find(req.matches[1]);
        const auto body = parse_body(req);
        const auto partner = string_member(body, "partner");
        std::lock_guard lock(entry->mu);
        SpeakerId id(partner);
        if (entry->episode.scenario().find(id) == nullptr) {
            if (const auto* byname = entry->episode.scenario().find_by_name(partner)) id = byname->id;
        }
        try {
            const int index = entry->episode.start_session(id);
            touch(*entry);
            status = 201;
            return {{"session_index", index}, {"partner", id.value}};
        } catch (const Error& e) {
            rethrow_engine(e);
        }
    }

    json take_turn(const httplib::Request& req, int&) {
        auto entry = find(req.matches[1]);
        const auto body = parse_body(req);
        const auto text = string_member(body, "text");
        if (trim(text).empty()) fail(422, "EmptyText", "utterance is empty");
        std::lock_guard lock(entry->mu);
        try {
            auto result = entry->episode.take_turn(text, *backend, *embedder);
            touch(*entry);
            const auto& s = *entry->episode.current();
            return {{"reply", result.reply},
                    {"retrieval", evidence_json(result.used)},
                    {"session_index", s.index},
                    {"turns", s.turns.size()},
                    {"max_turns", s.max_turns}};
        } catch (const Error& e) {
            rethrow_engine(e);
        }
    }

    json end_session(const httplib::Request& req, int&) {
        auto entry = find(req.matches[1]);
        std::lock_guard lock(entry->mu);
        try {
            const auto result = entry->episode.end_session(*backend);
            touch(*entry);
            json memories = json::array();
            for (const auto id : result.new_memories) {
                memories.push_back(memory_json(entry->episode.store().get_memory(id)));
            }
            json links = json::array();
            for (const auto& l : result.new_links) links.push_back(link_json(l));
            return {{"new_memories", memories},
                    {"new_links", links},
                    {"completed_sessions", entry->episode.completed_sessions()}};
        } catch (const Error& e) {
            rethrow_engine(e);
        }
    }

    std::size_t page_limit(const httplib::Request& req) const {
        if (!req.has_param("limit")) return config.default_page;
        const auto limit = parse_size(req.get_param_value("limit"), "limit");
        if (limit == 0) fail(400, "ParseError", "limit must be positive");
        return std::min(limit, config.max_page);
    }

    json list_memories(const httplib::Request& req, int&) {
        auto entry = find(req.matches[1]);
        const auto limit = page_limit(req);
        const std::size_t cursor = req.has_param("cursor") ? parse_size(req.get_param_value("cursor"), "cursor") : 0;
        const std::string subject = req.has_param("subject") ? req.get_param_value("subject") : std::string();
        std::lock_guard lock(entry->mu);
        const auto& sc = entry->episode.scenario();
        std::optional<SpeakerId> filter;
        if (!subject.empty()) {
            if (sc.find(SpeakerId(subject))) filter = SpeakerId(subject);
            else if (const auto* p = sc.find_by_name(subject)) filter = p->id;
            else fail(422, "UnknownSpeaker", "unknown subject '" + subject + "'");
        }
        json items = json::array();
        json next = nullptr;
        for (const auto& m : entry->episode.store().entries()) {
            if (m.id <= cursor || (filter && m.subject != *filter)) continue;
            if (items.size() == limit) {
                next = items.back()["id"];
                break;
            }
            items.push_back(memory_json(m));
        }
        return {{"items", items}, {"next_cursor", next}};
    }

    json list_links(const httplib::Request& req, int&) {
        auto entry = find(req.matches[1]);
        const auto limit = page_limit(req);
        MemoryLink after{0, 0};
        if (req.has_param("cursor")) {
            const auto c = req.get_param_value("cursor");
            const auto dash = c.find('-');
            if (dash == std::string::npos) fail(400, "ParseError", "link cursor must be LO-HI");
            after = {static_cast<MemoryId>(parse_size(c.substr(0, dash), "cursor")),
                     static_cast<MemoryId>(parse_size(c.substr(dash + 1), "cursor"))};
        }
        std::lock_guard lock(entry->mu);
        json items = json::array();
        json next = nullptr;
        for (const auto& l : entry->episode.graph().links()) {
            if (!(after < l)) continue;
            if (items.size() == limit) {
                next = std::to_string(items.back()["lo"].get<MemoryId>()) + "-" +
                       std::to_string(items.back()["hi"].get<MemoryId>());
                break;
            }
            items.push_back(link_json(l));
        }
        return {{"items", items}, {"next_cursor", next}};
    }

    json get_episode(const httplib::Request& req, int&) {
        const std::string id = req.matches[1];
        auto entry = find(id);
        std::lock_guard lock(entry->mu);
        auto record = entry->episode.to_record();
        record.episode_id = id;
        auto out = to_json(record);
        out["completed_sessions"] = entry->episode.completed_sessions();
        out["current_session"] = entry->episode.current() ? session_json(*entry->episode.current()) : json(nullptr);
        out["max_sessions"] = entry->episode.options().shape.sessions;
        return out;
    }

    json delete_episode(const httplib::Request& req, int& status) {
        const std::string id = req.matches[1];
        std::lock_guard lock(table_mu);
        if (episodes.erase(id) == 0) fail(404, "NotFound", "unknown episode '" + id + "'");
        status = 204;
        return nullptr;
    }

    void routes() {
        const std::string ep = R"(/v1/episodes/([^/]+))";
        server.Get("/v1/health", wrap(
                                     [this](const httplib::Request&, int&) {
                                         std::lock_guard lock(table_mu);
                                         return json{{"status", "ok"}, {"episodes", episodes.size()}};
                                     },
                                     false));
        server.Post("/v1/episodes", wrap([this](const auto& r, int& s) { return create_episode(r, s); }));
        server.Post(ep + "/sessions", wrap([this](const auto& r, int& s) { return start_session(r, s); }));
        server.Post(ep + "/sessions/current:end", wrap([this](const auto& r, int& s) { return end_session(r, s); }));
        server.Post(ep + "/turns", wrap([this](const auto& r, int& s) { return take_turn(r, s); }));
        server.Get(ep + "/memories", wrap([this](const auto& r, int& s) { return list_memories(r, s); }));
        server.Get(ep + "/links", wrap([this](const auto& r, int& s) { return list_links(r, s); }));
        server.Get(ep, wrap([this](const auto& r, int& s) { return get_episode(r, s); }));
        server.Delete(ep, wrap([this](const auto& r, int& s) { return delete_episode(r, s); }));
        server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

        if (!config.cors_origin.empty()) {
            server.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
                res.set_header("Access-Control-Allow-Origin", config.cors_origin);
                res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
                res.set_header("Access-Control-Allow-Headers", "Content-Type, Authorization");
            });
        }
    }
};

Service::Service(ServiceConfig config, std::shared_ptr<Backend> backend, std::shared_ptr<const Embedder> embedder,
                 Clock clock)
    : impl_(std::make_unique<Impl>()) {
    if (!backend || !embedder) throw Error(ErrorCode::InvalidConfig, "service needs a backend and an embedder");
    impl_->config = std::move(config);
    impl_->backend = std::move(backend);
    impl_->embedder = std::move(embedder);
    impl_->clock = clock ? std::move(clock) : Clock([] { return std::chrono::system_clock::now(); });
    impl_->routes();
}

Service::~Service() { stop(); }

int Service::bind() {
    if (impl_->bound_port >= 0) return impl_->bound_port;
    const auto& c = impl_->config;
    int port = -1;
    if (c.port == 0) {
        port = impl_->server.bind_to_any_port(c.host);
    } else if (impl_->server.bind_to_port(c.host, c.port)) {
        port = c.port;
    }
    if (port < 0) throw Error(ErrorCode::IoError, "cannot bind " + c.host + ":" + std::to_string(c.port));
    impl_->bound_port = port;
    return port;
}

void Service::run() {
    bind();
    impl_->server.listen_after_bind();
}

void Service::stop() {
    if (impl_->server.is_running()) impl_->server.stop();
}

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

std::size_t Service::evict_idle() { return impl_->evict_idle(); }

std::size_t Service::episode_count() const {
    std::lock_guard lock(impl_->table_mu);
    return impl_->episodes.size();
}

void Service::save_snapshot() const {
    const auto& dir = impl_->config.snapshot_dir;
    if (dir.empty()) return;
    std::vector<EpisodeRecord> records;
    {
        std::lock_guard lock(impl_->table_mu);
        for (const auto& [id, entry] : impl_->episodes) {
            std::lock_guard entry_lock(entry->mu);
            auto r = entry->episode.to_record();
            r.episode_id = id;
            records.push_back(std::move(r));
        }
    }
    std::filesystem::create_directories(dir);
    const auto tmp = dir / "episodes.jsonl.tmp";
    save_records(tmp, records);
    std::filesystem::rename(tmp, dir / "episodes.jsonl");
}

std::size_t Service::load_snapshot() {
    const auto& dir = impl_->config.snapshot_dir;
    if (dir.empty() || !std::filesystem::exists(dir / "episodes.jsonl")) return 0;
    const auto records = load_records(dir / "episodes.jsonl");
    std::size_t restored = 0;
    std::lock_guard lock(impl_->table_mu);
    for (const auto& r : records) {
        if (r.episode_id.empty() || impl_->episodes.contains(r.episode_id)) continue;
        auto entry = std::make_shared<Impl::Entry>(Episode::from_record(r, impl_->config.engine));
        entry->created_at = entry->last_activity = impl_->clock();
        impl_->episodes.emplace(r.episode_id, std::move(entry));
        ++restored;
    }
    return restored;
}

}  // namespace egomem
