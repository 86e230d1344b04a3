#include "egomem/backend.hpp"

#include <cstdlib>
#include <fstream>
#include <istream>

#include <nlohmann/json.hpp>

#include "egomem/error.hpp"

namespace egomem {

namespace {

std::optional<Task> task_from_string(std::string_view name) {
    for (const auto t : {Task::Reply, Task::Summarize, Task::LinkClassify, Task::Tag, Task::Prompt}) {
        if (to_string(t) == name) return t;
    }
    return std::nullopt;
}

}  // namespace

std::optional<std::string> ScriptTable::lookup(const GenerationSequence& seq) const {
    if (auto it = exact.find(seq.rendered); it != exact.end()) return it->second;
    for (const auto& [needle, output] : contains) {
        if (seq.rendered.find(needle) != std::string::npos) return output;
    }
    if (!seq.stage.empty()) {
        if (auto it = stage_defaults.find(seq.stage); it != stage_defaults.end()) return it->second;
    }
    if (auto it = task_defaults.find(seq.task); it != task_defaults.end()) return it->second;
    return fallback;
}

ScriptTable parse_script(std::istream& in) {
    using nlohmann::json;
    ScriptTable table;
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
        auto str = [&](const char* key) -> std::optional<std::string> {
            auto it = j.find(key);
            if (it == j.end()) return std::nullopt;
            if (!it->is_string()) {
                throw Error(ErrorCode::SchemaError,
                            "line " + std::to_string(lineno) + ": field '" + key + "' must be a string");
            }
            return it->get<std::string>();
        };
        const auto input = str("input");
        const auto needle = str("contains");
        const auto output = str("output");
        const auto task = str("task");
        const auto stage = str("stage");
        const auto fallback = str("default");
        if (input && output) {
            table.exact[*input] = *output;
        } else if (needle && output) {
            table.contains.emplace_back(*needle, *output);
        } else if (task && fallback) {
            const auto t = task_from_string(*task);
            if (!t) throw Error(ErrorCode::SchemaError, "line " + std::to_string(lineno) + ": unknown task '" + *task + "'");
            table.task_defaults[*t] = *fallback;
        } else if (stage && fallback) {
            table.stage_defaults[*stage] = *fallback;
        } else if (fallback) {
            table.fallback = *fallback;
        } else {
            throw Error(ErrorCode::SchemaError,
                        "line " + std::to_string(lineno) + ": expected input/output, contains/output or default");
        }
    }
    return table;
}

ScriptTable load_script(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open script " + path.string());
    return parse_script(in);
}

std::string ScriptedBackend::complete(const GenerationSequence& seq) {
    {
        std::lock_guard lock(mu_);
        calls_.push_back(seq);
    }
    if (auto hit = table_.lookup(seq)) return *hit;
    std::string preview = seq.rendered.substr(0, 120);
    throw Error(ErrorCode::ScriptMiss, "no scripted response for " + std::string(to_string(seq.task)) +
                                           " sequence: " + preview);
}

std::vector<GenerationSequence> ScriptedBackend::calls() const {
    std::lock_guard lock(mu_);
    return calls_;
}

std::size_t ScriptedBackend::call_count() const {
    std::lock_guard lock(mu_);
    return calls_.size();
}

BackendConfig parse_backend_spec(std::string_view spec) {
    BackendConfig config;
    if (spec.starts_with("scripted:")) {
        config.kind = BackendKind::Scripted;
        config.script_path = std::string(spec.substr(9));
        if (config.script_path.empty()) throw Error(ErrorCode::InvalidConfig, "scripted backend needs a file");
        return config;
    }
    if (spec.starts_with("http:") || spec.starts_with("https:")) {
        config.kind = BackendKind::HttpChat;
        // "http:URL" where URL itself starts with http:// or https://
        auto url = spec.starts_with("http:") && !spec.starts_with("http://") ? spec.substr(5) : spec;
        parse_url(url);
        config.http.url = std::string(url);
        if (const char* key = std::getenv(kApiKeyEnv)) config.http.api_key = key;
        return config;
    }
    throw Error(ErrorCode::InvalidConfig, "backend must be scripted:FILE or http:URL, got '" + std::string(spec) + "'");
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config) {
    switch (config.kind) {
        case BackendKind::Scripted:
            return std::make_unique<ScriptedBackend>(load_script(config.script_path));
        case BackendKind::HttpChat:
            return std::make_unique<HttpChatBackend>(config.http);
    }
    throw Error(ErrorCode::InvalidConfig, "unknown backend kind");
}

}  // namespace egomem
