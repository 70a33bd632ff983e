#pragma once

#include <atomic>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace promptforge {

/// Separator between the instruction and each few-shot block in a rendered
/// prompt. Exactly two line feeds, bit-exact; every optimizer and the
/// evaluator assemble prompts through this one constant.
inline constexpr std::string_view kPromptSeparator = "\n\n";

/// Cumulative or per-call token counts. Additive; never decremented.
struct TokenUsage {
    std::int64_t input_tokens = 0;
    std::int64_t output_tokens = 0;

    std::int64_t total() const noexcept { return input_tokens + output_tokens; }

    TokenUsage& operator+=(const TokenUsage& other) noexcept {
        input_tokens += other.input_tokens;
        output_tokens += other.output_tokens;
        return *this;
    }
    friend TokenUsage operator+(TokenUsage a, const TokenUsage& b) noexcept { return a += b; }
    friend bool operator==(const TokenUsage& a, const TokenUsage& b) noexcept {
        return a.input_tokens == b.input_tokens && a.output_tokens == b.output_tokens;
    }
};

/// A worked (input, target) example embedded into a prompt. `rendered` is the
/// exact block inserted; it contains both fields verbatim, with the target
/// wrapped in the task's answer markers.
struct FewShotExemplar {
    std::string input_text;
    std::string target_text;
    std::string rendered;
};

FewShotExemplar make_exemplar(std::string input_text, std::string target_text,
                              std::string_view begin_marker = "<final_answer>",
                              std::string_view end_marker = "</final_answer>");

/// The unit being optimized: an instruction plus an ordered exemplar list.
/// Immutable after creation; ids are unique and strictly increasing per run.
struct PromptCandidate {
    std::uint64_t id = 0;
    std::string instruction;
    std::vector<FewShotExemplar> exemplars;
    std::vector<std::uint64_t> parent_ids;
    int created_at_step = 0;
};

/// Allocates candidates with run-unique, monotonically increasing ids and
/// enforces the non-empty-instruction invariant.
class CandidateFactory {
public:
    PromptCandidate create(std::string instruction,
                           std::vector<FewShotExemplar> exemplars = {},
                           std::vector<std::uint64_t> parent_ids = {},
                           int created_at_step = 0);

    std::uint64_t created_count() const noexcept { return next_id_.load(); }

private:
    std::atomic<std::uint64_t> next_id_{0};
};

/// Canonical prompt text: instruction, then each exemplar block joined by
/// kPromptSeparator, in order. Deterministic.
std::string render_prompt(const PromptCandidate& candidate);

/// Content digest of render_prompt(candidate); the cache key half that makes
/// caching content-based: identical rendered text gives an identical digest
/// regardless of candidate id.
std::string candidate_digest(const PromptCandidate& candidate);

std::string trim(std::string_view text);

/// Aggregate score over n_samples data points. Classification and judge
/// values live in [0,1]; reward values are task-defined.
struct Score {
    double value = 0.0;
    int n_samples = 0;
};

/// One evaluated datum inside an EvaluationRecord.
struct DatumOutcome {
    std::size_t index = 0;
    std::string raw_response;
    std::optional<std::string> extracted;
    double score = 0.0;
};

/// Cache value and trace row: what one (candidate, subsample) evaluation cost
/// and produced.
struct EvaluationRecord {
    std::uint64_t candidate_id = 0;
    std::string subsample_key;
    Score score;
    std::vector<DatumOutcome> per_datum;
    TokenUsage usage_delta;
};

} // namespace promptforge
