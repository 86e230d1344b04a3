#include <atomic>
#include <chrono>
#include <set>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "doctest.h"
#include "egomem/dataset.hpp"
#include "egomem/error.hpp"
#include "egomem/service.hpp"
#include "support.hpp"

using namespace egomem;
using nlohmann::json;
using namespace std::chrono_literals;

namespace {

/// Service on an ephemeral port with a controllable clock.
class Harness {
public:
    explicit Harness(ServiceConfig config = {}, std::shared_ptr<Backend> backend = nullptr) {
        config.port = 0;
        if (!backend) backend = std::make_shared<ScriptedBackend>(load_script(test::fixture("scripts/counseling.jsonl")));
        service_ = std::make_unique<Service>(std::move(config), std::move(backend), std::make_shared<HashedEmbedder>(),
                                             [this] { return now(); });
        port_ = service_->bind();
        thread_ = std::thread([this] { service_->run(); });
        service_->wait_until_ready();
    }
    ~Harness() {
        service_->stop();
        thread_.join();
    }

    std::chrono::system_clock::time_point now() const {
        return std::chrono::system_clock::time_point(std::chrono::seconds(1'700'000'000 + offset_.load()));
    }
    void advance(std::chrono::seconds s) { offset_ += s.count(); }

    httplib::Client client(const std::string& token = {}) const {
        httplib::Client c("127.0.0.1", port_);
        c.set_read_timeout(10, 0);
        if (!token.empty()) c.set_bearer_token_auth(token);
        return c;
    }
    Service& service() { return *service_; }

private:
    std::unique_ptr<Service> service_;
    int port_ = 0;
    std::thread thread_;
    std::atomic<long long> offset_{0};
};

json body_of(const httplib::Result& r) {
    REQUIRE(r);
    return r->body.empty() ? json() : json::parse(r->body);
}

std::string scenario_body(const Scenario& sc = test::school_scenario()) {
    return json{{"scenario", to_json(sc)}}.dump();
}

std::string post_json(const json& j) { return j.dump(); }

std::string create(httplib::Client& c) {
    auto r = c.Post("/v1/episodes", scenario_body(), "application/json");
    REQUIRE(r);
    REQUIRE(r->status == 201);
    return body_of(r).at("episode_id").get<std::string>();
}

std::shared_ptr<ScriptedBackend> many_memories_backend() {
    return std::make_shared<ScriptedBackend>(test::script_from_text(
        R"({"task": "summarize", "default": "Fact one. [SEP] Fact two. [SEP] Fact three. [SEP] Fact four. [SEP] Fact five."})"
        "\n"
        R"({"task": "link_classify", "default": "positive"})"
        "\n"
        R"({"task": "reply", "default": "Sure, let us talk."})"));
}

}  // namespace

TEST_CASE("health needs no token and reports the episode count") {
    ServiceConfig config;
    config.bearer_token = "sekrit";
    Harness h(config);
    auto c = h.client();
    auto r = c.Get("/v1/health");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(body_of(r) == json{{"status", "ok"}, {"episodes", 0}});
}

TEST_CASE("bearer token guards the episode routes") {
    ServiceConfig config;
    config.bearer_token = "sekrit";
    Harness h(config);
    auto anon = h.client();
    auto r = anon.Post("/v1/episodes", scenario_body(), "application/json");
    REQUIRE(r);
    CHECK(r->status == 401);
    CHECK(body_of(r).at("code") == "Unauthorized");
    auto wrong = h.client("nope");
    CHECK(wrong.Post("/v1/episodes", scenario_body(), "application/json")->status == 401);
    auto good = h.client("sekrit");
    CHECK(good.Post("/v1/episodes", scenario_body(), "application/json")->status == 201);
    CHECK(h.service().episode_count() == 1);
}

TEST_CASE("cors headers and preflight") {
    {
        Harness h;
        auto c = h.client();
        auto r = c.Get("/v1/health");
        REQUIRE(r);
        CHECK(r->get_header_value("Access-Control-Allow-Origin") == "*");
        auto pre = c.Options("/v1/episodes");
        REQUIRE(pre);
        CHECK(pre->status == 204);
        CHECK(pre->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
        CHECK(pre->get_header_value("Access-Control-Allow-Headers").find("Authorization") != std::string::npos);
    }
    {
        ServiceConfig config;
        config.cors_origin = "";
        Harness h(config);
        auto c = h.client();
        CHECK_FALSE(c.Get("/v1/health")->has_header("Access-Control-Allow-Origin"));
    }
    {
        ServiceConfig config;
        config.cors_origin = "http://localhost:5173";
        Harness h(config);
        auto c = h.client();
        CHECK(c.Get("/v1/health")->get_header_value("Access-Control-Allow-Origin") == "http://localhost:5173");
    }
}

TEST_CASE("episode creation validates its body") {
    Harness h;
    auto c = h.client();
    auto bad_json = c.Post("/v1/episodes", "{nope", "application/json");
    CHECK(bad_json->status == 400);
    CHECK(body_of(bad_json).at("code") == "ParseError");
    auto missing = c.Post("/v1/episodes", "{}", "application/json");
    CHECK(missing->status == 400);
    CHECK(body_of(missing).at("code") == "SchemaError");
    auto array = c.Post("/v1/episodes", "[1]", "application/json");
    CHECK(array->status == 400);

    auto sc = test::school_scenario();
    sc.speakers.pop_back();
    auto invalid = c.Post("/v1/episodes", scenario_body(sc), "application/json");
    CHECK(invalid->status == 422);
    const auto err = body_of(invalid);
    CHECK(err.at("code") == "InvalidScenario");
    CHECK(err.at("rule") == "R1");
    CHECK_FALSE(err.at("violations").empty());
    CHECK(h.service().episode_count() == 0);

    const auto id = create(c);
    CHECK(id.starts_with("ep_"));
    CHECK(create(c) != id);
}

TEST_CASE("counseling conversation over http") {
    Harness h;
    auto c = h.client();
    const auto id = create(c);
    const auto base = "/v1/episodes/" + id;

    auto s1 = c.Post(base + "/sessions", post_json({{"partner", "Bob"}}), "application/json");
    REQUIRE(s1->status == 201);
    CHECK(body_of(s1) == json{{"session_index", 1}, {"partner", "s2"}});
    auto t1 = c.Post(base + "/turns", post_json({{"text", "I'm worried that my grades aren't good enough for college."}}),
                     "application/json");
    REQUIRE(t1->status == 200);
    CHECK(body_of(t1).at("retrieval").is_null());
    CHECK(body_of(t1).at("turns") == 2);
    CHECK(body_of(t1).at("max_turns") == 8);
    c.Post(base + "/turns",
           post_json({{"text", "Could you possibly talk to my parents about this? They worry more than I do."}}),
           "application/json");
    auto end1 = c.Post(base + "/sessions/current:end", "", "application/json");
    REQUIRE(end1->status == 200);
    const auto e1 = body_of(end1);
    REQUIRE(e1.at("new_memories").size() == 3);
    CHECK(e1.at("new_memories")[1].at("id") == 2);
    CHECK(e1.at("new_memories")[1].at("subject") == "s1");
    CHECK(e1.at("new_memories")[2].at("subject") == "s2");
    CHECK(e1.at("new_links") == json::array({{{"lo", 2}, {"hi", 3}}}));
    CHECK(e1.at("completed_sessions") == 1);

    REQUIRE(c.Post(base + "/sessions", post_json({{"partner", "s3"}}), "application/json")->status == 201);
    auto t2 = c.Post(base + "/turns", post_json({{"text", "Could I discuss my child with you?"}}), "application/json");
    REQUIRE(t2->status == 200);
    const auto r2 = body_of(t2);
    CHECK(r2.at("reply") == "Of course. Bob asked me to talk with you about his grades.");
    CHECK(r2.at("retrieval").at("primary").at("id") == 2);
    CHECK(r2.at("retrieval").at("links") == json::array({{{"id", 3}, {"text", e1.at("new_memories")[2].at("text")}}}));
    CHECK(r2.at("session_index") == 2);

    const auto ep = body_of(c.Get(base));
    CHECK(ep.at("episode_id") == id);
    CHECK(ep.at("completed_sessions") == 1);
    CHECK(ep.at("max_sessions") == 6);
    CHECK(ep.at("current_session").at("index") == 2);
    CHECK(ep.at("current_session").at("turns").size() == 2);
    CHECK(ep.at("memories").size() == 3);
    CHECK(ep.at("links") == json::array({json::array({2, 3})}));
}

TEST_CASE("engine errors map to http statuses") {
    Harness h;
    auto c = h.client();
    const auto base = "/v1/episodes/" + create(c);
    auto turn = [&](const std::string& text) {
        return c.Post(base + "/turns", post_json({{"text", text}}), "application/json");
    };
    auto code = [](const httplib::Result& r) { return body_of(r).at("code").get<std::string>(); };

    auto r = turn("hello");
    CHECK(r->status == 409);
    CHECK(code(r) == "NoOpenSession");
    r = c.Post(base + "/sessions/current:end", "", "application/json");
    CHECK(r->status == 409);
    r = c.Post(base + "/sessions", post_json({{"partner", "Zed"}}), "application/json");
    CHECK(r->status == 422);
    CHECK(code(r) == "UnknownSpeaker");
    r = c.Post(base + "/sessions", post_json({{"partner", "Alice"}}), "application/json");
    CHECK(r->status == 422);
    CHECK(code(r) == "MainAsPartner");
    r = c.Post(base + "/sessions", "{}", "application/json");
    CHECK(r->status == 400);
    CHECK(code(r) == "SchemaError");

    REQUIRE(c.Post(base + "/sessions", post_json({{"partner", "Bob"}}), "application/json")->status == 201);
    r = c.Post(base + "/sessions", post_json({{"partner", "Henry"}}), "application/json");
    CHECK(r->status == 409);
    CHECK(code(r) == "SessionOpen");
    r = c.Post(base + "/sessions/current:end", "", "application/json");
    CHECK(r->status == 409);
    CHECK(code(r) == "EmptySession");
    r = turn("   ");
    CHECK(r->status == 422);
    CHECK(code(r) == "EmptyText");
    for (int i = 0; i < 4; ++i) CHECK(turn("Turn number " + std::to_string(i))->status == 200);
    r = turn("one too many");
    CHECK(r->status == 409);
    CHECK(code(r) == "TurnLimitReached");

    r = c.Get("/v1/episodes/ep_missing");
    CHECK(r->status == 404);
    CHECK(code(r) == "NotFound");
    CHECK(c.Post("/v1/episodes/ep_missing/turns", post_json({{"text", "x"}}), "application/json")->status == 404);
}

TEST_CASE("backend failures surface as 502 and leave the session unchanged") {
    Harness h({}, std::make_shared<ScriptedBackend>(ScriptTable{}));
    auto c = h.client();
    const auto base = "/v1/episodes/" + create(c);
    REQUIRE(c.Post(base + "/sessions", post_json({{"partner", "Bob"}}), "application/json")->status == 201);
    auto r = c.Post(base + "/turns", post_json({{"text", "hello there"}}), "application/json");
    CHECK(r->status == 502);
    CHECK(body_of(r).at("code") == "ScriptMiss");
    CHECK(body_of(c.Get(base)).at("current_session").at("turns").empty());
}

TEST_CASE("memories and links paginate with cursors") {
    ServiceConfig config;
    config.default_page = 4;
    config.max_page = 6;
    Harness h(config, many_memories_backend());
    auto c = h.client();
    const auto base = "/v1/episodes/" + create(c);
    REQUIRE(c.Post(base + "/sessions", post_json({{"partner", "Bob"}}), "application/json")->status == 201);
    c.Post(base + "/turns", post_json({{"text", "hello there"}}), "application/json");
    REQUIRE(c.Post(base + "/sessions/current:end", "", "application/json")->status == 200);
    const auto record = body_of(c.Get(base));
    REQUIRE(record.at("memories").size() == 10);

    for (const std::string limit : {"1", "3", "4", "100"}) {
        CAPTURE(limit);
        std::vector<MemoryId> seen;
        std::string cursor;
        for (int page = 0; page < 20; ++page) {
            auto r = c.Get(base + "/memories?limit=" + limit + (cursor.empty() ? "" : "&cursor=" + cursor));
            REQUIRE(r->status == 200);
            const auto b = body_of(r);
            CHECK(b.at("items").size() <= std::min<std::size_t>(std::stoul(limit), 6));
            for (const auto& m : b.at("items")) seen.push_back(m.at("id").get<MemoryId>());
            if (b.at("next_cursor").is_null()) break;
            cursor = std::to_string(b.at("next_cursor").get<MemoryId>());
        }
        CHECK(seen == std::vector<MemoryId>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
    }
    CHECK(body_of(c.Get(base + "/memories")).at("items").size() == 4);
    const auto bob = body_of(c.Get(base + "/memories?subject=Bob&limit=100")).at("items");
    REQUIRE(bob.size() == 5);
    for (const auto& m : bob) CHECK(m.at("subject") == "s2");
    CHECK(body_of(c.Get(base + "/memories?subject=s1&limit=6")).at("items").size() == 5);
    CHECK(c.Get(base + "/memories?subject=Zed")->status == 422);
    CHECK(c.Get(base + "/memories?limit=0")->status == 400);
    CHECK(c.Get(base + "/memories?limit=abc")->status == 400);
    CHECK(c.Get(base + "/memories?cursor=-1")->status == 400);

    json all_links = json::array();
    for (const auto& l : record.at("links")) all_links.push_back({{"lo", l[0]}, {"hi", l[1]}});
    REQUIRE(all_links.size() > 4);
    json paged = json::array();
    std::string cursor;
    for (int page = 0; page < 50; ++page) {
        auto b = body_of(c.Get(base + "/links?limit=2" + (cursor.empty() ? "" : "&cursor=" + cursor)));
        for (const auto& l : b.at("items")) paged.push_back(l);
        if (b.at("next_cursor").is_null()) break;
        cursor = b.at("next_cursor").get<std::string>();
    }
    CHECK(paged == all_links);
    CHECK(c.Get(base + "/links?cursor=7")->status == 400);
}

TEST_CASE("idle episodes are evicted and reads do not refresh them") {
    ServiceConfig config;
    config.idle_ttl = 60s;
    Harness h(config);
    auto c = h.client();
    const auto idle = create(c);
    const auto busy = create(c);
    h.advance(40s);
    CHECK(c.Get("/v1/episodes/" + idle)->status == 200);
    REQUIRE(c.Post("/v1/episodes/" + busy + "/sessions", post_json({{"partner", "Bob"}}), "application/json")->status ==
            201);
    h.advance(30s);
    CHECK(h.service().evict_idle() == 1);
    CHECK(c.Get("/v1/episodes/" + idle)->status == 404);
    CHECK(c.Get("/v1/episodes/" + busy)->status == 200);
    h.advance(61s);
    create(c);
    CHECK(h.service().episode_count() == 1);
    CHECK(c.Get("/v1/episodes/" + busy)->status == 404);
}

TEST_CASE("delete removes an episode") {
    Harness h;
    auto c = h.client();
    const auto id = create(c);
    auto r = c.Delete("/v1/episodes/" + id);
    REQUIRE(r);
    CHECK(r->status == 204);
    CHECK(r->body.empty());
    CHECK(c.Delete("/v1/episodes/" + id)->status == 404);
    CHECK(c.Get("/v1/episodes/" + id)->status == 404);
}

TEST_CASE("snapshots restore episodes with their ids") {
    const test::TempDir dir;
    ServiceConfig config;
    config.snapshot_dir = dir.path();
    std::string id;
    json before;
    {
        Harness h(config);
        auto c = h.client();
        id = create(c);
        const auto base = "/v1/episodes/" + id;
        c.Post(base + "/sessions", post_json({{"partner", "Bob"}}), "application/json");
        c.Post(base + "/turns", post_json({{"text", "I'm worried that my grades aren't good enough for college."}}),
               "application/json");
        c.Post(base + "/sessions/current:end", "", "application/json");
        c.Post(base + "/sessions", post_json({{"partner", "Henry"}}), "application/json");
        c.Post(base + "/turns", post_json({{"text", "Could I discuss my child with you?"}}), "application/json");
        before = body_of(c.Get(base));
        h.service().save_snapshot();
    }
    Harness h(config);
    CHECK(h.service().load_snapshot() == 1);
    CHECK(h.service().load_snapshot() == 0);
    auto c = h.client();
    const auto after = body_of(c.Get("/v1/episodes/" + id));
    CHECK(after == before);
    const auto r = c.Post("/v1/episodes/" + id + "/turns", post_json({{"text", "He says his grades worry him."}}),
                          "application/json");
    CHECK(r->status == 200);
}

TEST_CASE("concurrent clients on separate and shared episodes") {
    Harness h;
    constexpr int kThreads = 8;
    std::atomic<int> failures{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < kThreads; ++t) {
        pool.emplace_back([&] {
            auto c = h.client();
            auto r = c.Post("/v1/episodes", scenario_body(), "application/json");
            if (!r || r->status != 201) {
                ++failures;
                return;
            }
            const auto base = "/v1/episodes/" + json::parse(r->body).at("episode_id").get<std::string>();
            for (const char* partner : {"Bob", "Henry"}) {
                if (c.Post(base + "/sessions", post_json({{"partner", partner}}), "application/json")->status != 201) ++failures;
                for (int i = 0; i < 3; ++i) {
                    if (c.Post(base + "/turns", post_json({{"text", "Hello number " + std::to_string(i)}}),
                               "application/json")->status != 200) {
                        ++failures;
                    }
                }
                if (c.Post(base + "/sessions/current:end", "", "application/json")->status != 200) ++failures;
            }
            if (json::parse(c.Get(base)->body).at("completed_sessions") != 2) ++failures;
        });
    }
    for (auto& t : pool) t.join();
    CHECK(failures == 0);
    CHECK(h.service().episode_count() == kThreads);

    auto c = h.client();
    const auto base = "/v1/episodes/" + create(c);
    REQUIRE(c.Post(base + "/sessions", post_json({{"partner", "Bob"}}), "application/json")->status == 201);
    std::atomic<int> ok{0};
    std::atomic<int> full{0};
    std::vector<std::thread> shared;
    for (int t = 0; t < kThreads; ++t) {
        shared.emplace_back([&, t] {
            auto cc = h.client();
            const auto r = cc.Post(base + "/turns", post_json({{"text", "Shared turn " + std::to_string(t)}}),
                                   "application/json");
            if (r && r->status == 200) ++ok;
            else if (r && r->status == 409) ++full;
        });
    }
    for (auto& t : shared) t.join();
    CHECK(ok == 4);
    CHECK(full == kThreads - 4);
    const auto turns = body_of(c.Get(base)).at("current_session").at("turns");
    REQUIRE(turns.size() == 8);
    for (std::size_t i = 0; i < turns.size(); ++i) CHECK(turns[i].at("speaker") == (i % 2 == 0 ? "s2" : "s1"));
}
