#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <sstream>
#include <string>
#include <vector>

#include "egomem/backend.hpp"
#include "egomem/session.hpp"

namespace egomem::test {

inline std::filesystem::path fixture(const std::string& rel) {
    return std::filesystem::path(EGOMEM_FIXTURE_DIR) / rel;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out << text;
}

class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                ("egomem_test_" + std::to_string(stamp) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    std::filesystem::path path_;
};

/// Alice (teacher, main), Bob (student), Henry (Bob's father), Grace (counselor).
inline Scenario school_scenario() {
    Scenario sc;
    sc.topic = "school counseling";
    sc.speakers = {{SpeakerId("s1"), "Alice", "Bob's teacher", true},
                   {SpeakerId("s2"), "Bob", "Student", false},
                   {SpeakerId("s3"), "Henry", "Bob's father", false},
                   {SpeakerId("s4"), "Grace", "School counselor", false}};
    sc.events = {{"Bob tells Alice he is worried about his grades.", SpeakerId("s2")},
                 {"Henry asks Alice how Bob is doing at school.", SpeakerId("s3")},
                 {"Bob shows Alice his improved test results.", SpeakerId("s2")},
                 {"Alice asks Grace for advice about Bob's stress.", SpeakerId("s4")},
                 {"Henry thanks Alice for her support.", SpeakerId("s3")},
                 {"Grace and Alice plan a study workshop.", SpeakerId("s4")}};
    return sc;
}

/// Backend driven by a function; records every call.
class FnBackend final : public Backend {
public:
    using Fn = std::function<std::string(const GenerationSequence&)>;
    explicit FnBackend(Fn fn) : fn_(std::move(fn)) {}

    std::string complete(const GenerationSequence& seq) override {
        {
            std::lock_guard lock(mu_);
            calls_.push_back(seq);
        }
        return fn_(seq);
    }

    std::vector<GenerationSequence> calls() const {
        std::lock_guard lock(mu_);
        return calls_;
    }

private:
    Fn fn_;
    mutable std::mutex mu_;
    std::vector<GenerationSequence> calls_;
};

inline ScriptTable script_from_text(const std::string& jsonl) {
    std::istringstream in(jsonl);
    return parse_script(in);
}

}  // namespace egomem::test
