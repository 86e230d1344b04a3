#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "egomem/sequence.hpp"

namespace egomem {

/// Generation boundary. Implementations must be safe to call from several
/// threads at once (distinct episodes run in parallel).
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string complete(const GenerationSequence& seq) = 0;
};

/// Lookup table for the scripted backend. Resolution order: exact match on
/// the rendered text, then the first `contains` rule whose needle occurs in
/// it, then the per-task default, then the global default.
struct ScriptTable {
    std::map<std::string, std::string> exact;
    std::vector<std::pair<std::string, std::string>> contains;
    std::map<Task, std::string> task_defaults;
    /// Keyed by pipeline stage name (GenerationSequence::stage).
    std::map<std::string, std::string> stage_defaults;
    std::optional<std::string> fallback;

    /// nullopt on a miss.
    std::optional<std::string> lookup(const GenerationSequence& seq) const;
};

/// One JSON object per line:
///   {"input": "...", "output": "..."}
///   {"contains": "...", "output": "..."}
///   {"task": "summarize", "default": "..."}
///   {"stage": "dialogue", "default": "..."}
///   {"default": "..."}
/// Throws ParseError / Error{SchemaError}.
ScriptTable load_script(const std::filesystem::path& path);
ScriptTable parse_script(std::istream& in);

/// Deterministic backend: complete() is a pure function of (table, rendered).
class ScriptedBackend final : public Backend {
public:
    explicit ScriptedBackend(ScriptTable table) : table_(std::move(table)) {}

    /// Throws Error{ScriptMiss}.
    std::string complete(const GenerationSequence& seq) override;

    /// Every sequence seen so far, in call order.
    std::vector<GenerationSequence> calls() const;
    std::size_t call_count() const;

private:
    ScriptTable table_;
    mutable std::mutex mu_;
    std::vector<GenerationSequence> calls_;
};

struct HttpChatConfig {
    /// Full endpoint URL, e.g. http://127.0.0.1:8080/v1/chat/completions.
    std::string url;
    std::string model = "gpt-3.5-turbo";
    std::chrono::milliseconds timeout{30000};
    int retries = 3;
    std::chrono::milliseconds backoff_base{500};
    /// Bearer token; empty sends no Authorization header.
    std::string api_key;
    std::optional<double> temperature;
    std::optional<std::uint64_t> seed;
};

struct ParsedUrl {
    std::string scheme;
    std::string host;
    int port = 0;
    std::string path;
    /// scheme://host:port
    std::string origin() const;
};

/// Throws Error{InvalidConfig} unless the URL is http(s)://host[:port][/path].
ParsedUrl parse_url(std::string_view url);

/// Chat-completion client: POSTs {"model", "messages": [{role, content}]}
/// and returns choices[0].message.content. Transport errors, 429 and 5xx
/// are retried with exponential backoff (base, x2) up to `retries` times.
/// Throws Error{HttpError} or Error{Timeout}.
class HttpChatBackend final : public Backend {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    explicit HttpChatBackend(HttpChatConfig config, Sleeper sleeper = {});

    std::string complete(const GenerationSequence& seq) override;

    const HttpChatConfig& config() const noexcept { return config_; }

    /// The JSON body sent for `seq`.
    std::string request_body(const GenerationSequence& seq) const;

private:
    HttpChatConfig config_;
    ParsedUrl url_;
    Sleeper sleeper_;
};

/// Environment variable holding the upstream bearer token.
inline constexpr const char* kApiKeyEnv = "EGOMEM_API_KEY";

enum class BackendKind { Scripted, HttpChat };

struct BackendConfig {
    BackendKind kind = BackendKind::Scripted;
    std::filesystem::path script_path;
    HttpChatConfig http;
};

/// "scripted:FILE" or "http:URL". The API key is read from EGOMEM_API_KEY.
BackendConfig parse_backend_spec(std::string_view spec);
std::unique_ptr<Backend> make_backend(const BackendConfig& config);

}  // namespace egomem
