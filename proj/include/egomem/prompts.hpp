#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace egomem {

/// A prompt body with `{NAME}` placeholders. Only the declared slots are
/// substituted. An occurrence written as `"{NAME}"` (quotes hugging the
/// braces) describes an output format and is left as is.
class PromptTemplate {
public:
    PromptTemplate(std::string name, std::string body, std::vector<std::string> slots);

    const std::string& name() const noexcept { return name_; }
    const std::string& body() const noexcept { return body_; }
    const std::vector<std::string>& slots() const noexcept { return slots_; }

    /// Throws Error{PromptRenderError} if a slot is unbound or a binding
    /// names no slot.
    std::string render(const std::map<std::string, std::string>& bindings) const;

private:
    std::string name_;
    std::string body_;
    std::vector<std::string> slots_;
};

/// Templates shipped in assets/prompts, compiled in at build time.
namespace prompts {

const PromptTemplate& scenario();
const PromptTemplate& dialogue();
/// One line of the dialogue prompt's system input, repeated per prior session.
const PromptTemplate& dialogue_system_line();
const PromptTemplate& memory_gen();
const PromptTemplate& memory_link();
const PromptTemplate& session_summary();
const PromptTemplate& tagging();

const std::vector<const PromptTemplate*>& all();

}  // namespace prompts

/// "first" .. "sixth", then "7th", "8th", ...
std::string ordinal_word(int n);

}  // namespace egomem
