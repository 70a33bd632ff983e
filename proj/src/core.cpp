#include "promptforge/core.hpp"

#include "promptforge/errors.hpp"
#include "promptforge/rng.hpp"

namespace promptforge {

std::string trim(std::string_view text) {
    const char* ws = " \t\r\n\f\v";
    auto begin = text.find_first_not_of(ws);
    if (begin == std::string_view::npos) return {};
    auto end = text.find_last_not_of(ws);
    return std::string(text.substr(begin, end - begin + 1));
}

FewShotExemplar make_exemplar(std::string input_text, std::string target_text,
                              std::string_view begin_marker, std::string_view end_marker) {
    FewShotExemplar e;
    e.rendered = "Input: " + input_text + "\nOutput: ";
    e.rendered += begin_marker;
    e.rendered += target_text;
    e.rendered += end_marker;
    e.input_text = std::move(input_text);
    e.target_text = std::move(target_text);
    return e;
}

PromptCandidate CandidateFactory::create(std::string instruction, std::vector<FewShotExemplar> exemplars,
                                         std::vector<std::uint64_t> parent_ids, int created_at_step) {
    std::string trimmed = trim(instruction);
    if (trimmed.empty()) {
        throw Error("candidate instruction is empty after trimming");
    }
    PromptCandidate c;
    c.id = next_id_.fetch_add(1);
    c.instruction = std::move(trimmed);
    c.exemplars = std::move(exemplars);
    c.parent_ids = std::move(parent_ids);
    c.created_at_step = created_at_step;
    return c;
}

std::string render_prompt(const PromptCandidate& candidate) {
    std::string out = candidate.instruction;
    for (const auto& exemplar : candidate.exemplars) {
        out += kPromptSeparator;
        out += exemplar.rendered;
    }
    return out;
}

std::string candidate_digest(const PromptCandidate& candidate) {
    return hex_digest(render_prompt(candidate));
}

} // namespace promptforge
