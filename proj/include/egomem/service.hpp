#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>

#include "egomem/backend.hpp"
#include "egomem/orchestrator.hpp"
#include "egomem/retrieval.hpp"

namespace egomem {

inline constexpr int kDefaultServicePort = 8787;

struct ServiceConfig {
    std::string host = "127.0.0.1";
    /// 0 binds an ephemeral port.
    int port = kDefaultServicePort;
    std::chrono::seconds idle_ttl = std::chrono::hours(24);
    /// Episodes are restored from and saved to <dir>/episodes.jsonl when set.
    std::filesystem::path snapshot_dir;
    /// Access-Control-Allow-Origin; empty disables CORS headers.
    std::string cors_origin = "*";
    /// When set, /v1 requests other than health need `Authorization: Bearer <token>`.
    std::string bearer_token;
    EngineOptions engine;
    std::size_t default_page = 100;
    std::size_t max_page = 1000;
};

/// HTTP facade over Episode. Requests on different episodes run
/// concurrently; mutations on one episode are serialized by its own mutex.
class Service {
public:
    using Clock = std::function<std::chrono::system_clock::time_point()>;

    Service(ServiceConfig config, std::shared_ptr<Backend> backend, std::shared_ptr<const Embedder> embedder,
            Clock clock = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds the listening socket and returns the port. Throws Error{IoError}.
    int bind();
    /// Serves until stop(). bind() is called first if needed.
    void run();
    void stop();
    /// Blocks until the server accepts connections (after bind in another thread).
    void wait_until_ready() const;

    /// Drops episodes idle for longer than idle_ttl; returns how many.
    std::size_t evict_idle();
    std::size_t episode_count() const;

    /// Writes every live episode; no-op without snapshot_dir.
    void save_snapshot() const;
    /// Returns the number of episodes restored.
    std::size_t load_snapshot();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace egomem
