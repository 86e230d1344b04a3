#include <charconv>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "egomem/backend.hpp"
#include "egomem/error.hpp"

namespace egomem {

std::string ParsedUrl::origin() const { return scheme + "://" + host + ":" + std::to_string(port); }

ParsedUrl parse_url(std::string_view url) {
    ParsedUrl out;
    const auto sep = url.find("://");
    if (sep == std::string_view::npos) throw Error(ErrorCode::InvalidConfig, "URL lacks a scheme: " + std::string(url));
    out.scheme = std::string(url.substr(0, sep));
    if (out.scheme != "http" && out.scheme != "https") {
        throw Error(ErrorCode::InvalidConfig, "unsupported URL scheme '" + out.scheme + "'");
    }
    auto rest = url.substr(sep + 3);
    const auto slash = rest.find('/');
    auto authority = rest.substr(0, slash);
    out.path = slash == std::string_view::npos ? "/" : std::string(rest.substr(slash));
    out.port = out.scheme == "https" ? 443 : 80;
    const auto colon = authority.rfind(':');
    if (colon != std::string_view::npos) {
        const auto port_text = authority.substr(colon + 1);
        int port = 0;
        const auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
        if (ec != std::errc{} || ptr != port_text.data() + port_text.size() || port <= 0 || port > 65535) {
            throw Error(ErrorCode::InvalidConfig, "bad port in URL: " + std::string(url));
        }
        out.port = port;
        authority = authority.substr(0, colon);
    }
    if (authority.empty()) throw Error(ErrorCode::InvalidConfig, "URL lacks a host: " + std::string(url));
    out.host = std::string(authority);
    return out;
}

HttpChatBackend::HttpChatBackend(HttpChatConfig config, Sleeper sleeper)
    : config_(std::move(config)), url_(parse_url(config_.url)), sleeper_(std::move(sleeper)) {
    if (config_.retries < 0) throw Error(ErrorCode::InvalidConfig, "retries must be >= 0");
    if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
    if (url_.scheme == "https") throw Error(ErrorCode::InvalidConfig, "built without https support");
#endif
}

std::string HttpChatBackend::request_body(const GenerationSequence& seq) const {
    nlohmann::json messages = nlohmann::json::array();
    if (!seq.system.empty()) messages.push_back({{"role", "system"}, {"content", seq.system}});
    messages.push_back({{"role", "user"}, {"content", seq.rendered}});
    nlohmann::json body = {{"model", config_.model}, {"messages", messages}};
    if (config_.temperature) body["temperature"] = *config_.temperature;
    if (config_.seed) body["seed"] = *config_.seed;
    return body.dump();
}

std::string HttpChatBackend::complete(const GenerationSequence& seq) {
    const auto body = request_body(seq);
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(config_.timeout - secs);

    std::string last_error;
    bool last_was_timeout = false;
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        if (attempt > 0) sleeper_(config_.backoff_base * (1LL << (attempt - 1)));

        httplib::Client client(url_.origin());
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        auto res = client.Post(url_.path, headers, body, "application/json");
        if (!res) {
            const auto err = res.error();
            last_was_timeout = err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read;
            last_error = httplib::to_string(err);
            continue;
        }
        last_was_timeout = false;
        if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
            continue;
        }
        if (res->status < 200 || res->status >= 300) {
            throw Error(ErrorCode::HttpError, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
        }
        try {
            const auto j = nlohmann::json::parse(res->body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::HttpError, std::string("malformed chat-completion response: ") + e.what());
        }
    }
    const auto attempts = std::to_string(config_.retries + 1);
    if (last_was_timeout) throw Error(ErrorCode::Timeout, "timed out after " + attempts + " attempts: " + last_error);
    throw Error(ErrorCode::HttpError, "request failed after " + attempts + " attempts: " + last_error);
}

}  // namespace egomem
