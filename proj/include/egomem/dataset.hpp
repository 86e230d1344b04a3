#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "egomem/error.hpp"
#include "egomem/link_graph.hpp"
#include "egomem/memory.hpp"
#include "egomem/session.hpp"

namespace egomem {

/// One episode on disk: scenario, sessions with (optionally tagged)
/// utterances, the memory list and its links.
struct EpisodeRecord {
    std::string episode_id;
    Scenario scenario;
    std::vector<SessionState> sessions;
    std::vector<MemoryEntry> memories;
    std::vector<MemoryLink> links;
    /// Free-form generation metadata (backend, temperature, seed, ...).
    nlohmann::json provenance = nlohmann::json::object();

    bool operator==(const EpisodeRecord&) const = default;
};

nlohmann::json to_json(const Scenario& scenario);
Scenario scenario_from_json(const nlohmann::json& j);
nlohmann::json to_json(const EpisodeRecord& record);
/// Throws Error{SchemaError} naming the first missing or mistyped field.
EpisodeRecord record_from_json(const nlohmann::json& j);

/// Compact, key-sorted serialization used on disk.
std::string canonical_line(const EpisodeRecord& record);

/// One record per non-blank line. Throws ParseError (with 1-based line
/// number) on malformed JSON and Error{SchemaError} on missing fields.
std::vector<EpisodeRecord> load_records(std::istream& in);
std::vector<EpisodeRecord> load_records(const std::filesystem::path& path);
/// All `*.jsonl` files under a directory in path order, or a single file.
std::vector<EpisodeRecord> load_records_from(const std::filesystem::path& file_or_dir);

void save_records(std::ostream& out, const std::vector<EpisodeRecord>& records);
void save_records(const std::filesystem::path& path, const std::vector<EpisodeRecord>& records);

/// Minimum utterance length in Unicode scalar values.
inline constexpr std::size_t kMinUtteranceChars = 10;

/// Applies R1..R7. An empty result means the record passes.
std::vector<Violation> validate(const EpisodeRecord& record);

/// Counts Unicode scalar values in UTF-8 text (invalid bytes count as one each).
std::size_t utf8_length(std::string_view text) noexcept;

struct DatasetStats {
    std::size_t episodes = 0;
    std::size_t sessions = 0;
    std::size_t unique_names = 0;
    std::size_t unique_descriptors = 0;
    std::size_t total_turns = 0;
    std::size_t total_memories = 0;
    std::size_t total_links = 0;
    double avg_turns_per_episode = 0.0;
    double avg_memories_per_episode = 0.0;
    double avg_links_per_episode = 0.0;
};

DatasetStats stats(const std::vector<EpisodeRecord>& records);
/// Two-decimal rendering used by reports.
std::string format_2dp(double value);
nlohmann::json to_json(const DatasetStats& s);
std::string format_stats_table(const DatasetStats& s);

struct DatasetSplit {
    std::vector<EpisodeRecord> train;
    std::vector<EpisodeRecord> valid;
    std::vector<EpisodeRecord> test;
};

/// Partition sizes for n items; floors plus largest-remainder rounding, so
/// each size is within one item of n * ratio. Throws Error{BadRatios}.
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);

/// Seeded shuffle followed by a contiguous train/valid/test partition.
DatasetSplit split(std::vector<EpisodeRecord> records, const std::array<double, 3>& ratios,
                   std::uint64_t seed);

}  // namespace egomem
