#include "egomem/prompts.hpp"

#include <set>

#include "egomem/error.hpp"

namespace egomem {

namespace prompt_assets {
extern const std::string_view kScenario;
extern const std::string_view kDialogue;
extern const std::string_view kDialogueSystem;
extern const std::string_view kMemoryGen;
extern const std::string_view kMemoryLink;
extern const std::string_view kSessionSummary;
extern const std::string_view kTagging;
}  // namespace prompt_assets

PromptTemplate::PromptTemplate(std::string name, std::string body, std::vector<std::string> slots)
    : name_(std::move(name)), body_(std::move(body)), slots_(std::move(slots)) {
    while (!body_.empty() && (body_.back() == '\n' || body_.back() == '\r')) body_.pop_back();
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& bindings) const {
    for (const auto& slot : slots_) {
        if (!bindings.contains(slot)) {
            throw Error(ErrorCode::PromptRenderError, "prompt '" + name_ + "': placeholder {" + slot + "} is unbound");
        }
    }
    for (const auto& [key, value] : bindings) {
        if (std::find(slots_.begin(), slots_.end(), key) == slots_.end()) {
            throw Error(ErrorCode::PromptRenderError, "prompt '" + name_ + "' has no placeholder {" + key + "}");
        }
    }

    std::string out;
    out.reserve(body_.size() * 2);
    std::size_t pos = 0;
    while (pos < body_.size()) {
        const auto open = body_.find('{', pos);
        if (open == std::string::npos) {
            out.append(body_, pos, std::string::npos);
            break;
        }
        out.append(body_, pos, open - pos);
        const auto close = body_.find('}', open);
        if (close == std::string::npos) {
            out.append(body_, open, std::string::npos);
            break;
        }
        const auto key = body_.substr(open + 1, close - open - 1);
        const bool quoted = open > 0 && body_[open - 1] == '"' && close + 1 < body_.size() && body_[close + 1] == '"';
        auto it = bindings.find(key);
        if (it != bindings.end() && !quoted) {
            out += it->second;
        } else {
            out.append(body_, open, close - open + 1);
        }
        pos = close + 1;
    }
    return out;
}

namespace prompts {

const PromptTemplate& scenario() {
    static const PromptTemplate t("scenario", std::string(prompt_assets::kScenario), {"SUB TOPIC"});
    return t;
}

const PromptTemplate& dialogue() {
    static const PromptTemplate t("dialogue", std::string(prompt_assets::kDialogue),
                                  {"SESSION NUMBER", "MAIN SPEAKER NAME", "MAIN SPEAKER JOB", "SUB SPEAKER NAME",
                                   "SUB SPEAKER JOB", "SESSION EVENT", "MEMORY LIST"});
    return t;
}

const PromptTemplate& dialogue_system_line() {
    static const PromptTemplate t("dialogue_system", std::string(prompt_assets::kDialogueSystem),
                                  {"SESSION ORDINAL", "SESSION SUMMARY"});
    return t;
}

const PromptTemplate& memory_gen() {
    static const PromptTemplate t("memory_gen", std::string(prompt_assets::kMemoryGen),
                                  {"MAIN SPEAKER NAME", "SUB SPEAKER NAME", "SESSION CONVERSATION"});
    return t;
}

const PromptTemplate& memory_link() {
    static const PromptTemplate t("memory_link", std::string(prompt_assets::kMemoryLink),
                                  {"MEMORY LIST", "PAIR LIST"});
    return t;
}

const PromptTemplate& session_summary() {
    static const PromptTemplate t("session_summary", std::string(prompt_assets::kSessionSummary),
                                  {"MAIN SPEAKER NAME", "SUB SPEAKER NAME", "SESSION CONVERSATION"});
    return t;
}

const PromptTemplate& tagging() {
    static const PromptTemplate t("tagging", std::string(prompt_assets::kTagging),
                                  {"MAIN SPEAKER NAME", "MEMORY LIST", "UTTERANCE LIST"});
    return t;
}

const std::vector<const PromptTemplate*>& all() {
    static const std::vector<const PromptTemplate*> v{&scenario(),   &dialogue(),        &dialogue_system_line(),
                                                      &memory_gen(), &memory_link(),     &session_summary(),
                                                      &tagging()};
    return v;
}

}  // namespace prompts

std::string ordinal_word(int n) {
    static const char* const words[] = {"first", "second", "third", "fourth", "fifth", "sixth"};
    if (n >= 1 && n <= 6) return words[n - 1];
    const int mod100 = n % 100;
    const char* suffix = "th";
    if (mod100 < 11 || mod100 > 13) {
        if (n % 10 == 1) suffix = "st";
        else if (n % 10 == 2) suffix = "nd";
        else if (n % 10 == 3) suffix = "rd";
    }
    return std::to_string(n) + suffix;
}

}  // namespace egomem
