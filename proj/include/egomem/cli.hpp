#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <string_view>

#include "egomem/orchestrator.hpp"

namespace egomem::cli {

/// Entry point of the `egomem` tool. Returns the process exit code:
/// 0 when the command found no errors or violations.
int run(int argc, const char* const* argv, std::istream& in, std::ostream& out, std::ostream& err);

/// "hashed", "hashed:DIM" or "trained:FILE". Throws Error{InvalidConfig}.
std::shared_ptr<const Embedder> make_embedder(std::string_view spec);

/// A JSON scenario object, an episode record (its scenario is used), or the
/// first record of a JSONL file. Throws Error.
Scenario load_scenario_file(const std::string& path);

struct ChatOptions {
    bool verbose = false;
    bool color = false;
    /// Repeat each input line in the transcript (set when stdin is not a terminal).
    bool echo_input = false;
    /// Print a prompt before reading each line.
    bool prompt = false;
    bool json = false;
};

/// Terminal chat. The human speaks as the session partner. Commands:
/// /session NAME, /end, /memories, /help, /quit. Returns the exit code.
int run_chat(Episode& episode, Backend& backend, const Embedder& embedder, const SpeakerId& first_partner,
             std::istream& in, std::ostream& out, const ChatOptions& options);

}  // namespace egomem::cli
