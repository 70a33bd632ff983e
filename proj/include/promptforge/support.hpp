#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "promptforge/core.hpp"
#include "promptforge/optimizers.hpp"
#include "promptforge/task.hpp"

namespace promptforge {

/// Terminates once the state's spent total reaches limit (>= rule, so the
/// boundary itself already stops the run).
Callback make_token_count_callback(std::int64_t limit);

enum class TraceFormat { jsonl, csv };

/// Appends one row per population member on every on_step_end and flushes.
/// Row fields, bit-exact: run_id, step, candidate_id, rendered_digest,
/// instruction, n_exemplars, score, subsample_key, tokens_total.
/// Rows are monotonic in (step, candidate_id). IO failures abort the run.
Callback make_file_output_callback(const std::string& path, TraceFormat format);

/// k distinct seeded-random rows attached as exemplars to a fixed
/// instruction, in draw order. Throws KTooLarge when k exceeds the dataset.
PromptCandidate select_exemplars_random(CandidateFactory& factory, const std::string& instruction,
                                        const Dataset& dataset, std::size_t k, std::uint64_t seed,
                                        const ExtractionSpec& extraction = {});

/// Draws n_trials random exemplar sets, scores each on one shared subsample,
/// and returns the best (ties by lower trial index).
PromptCandidate select_exemplars_random_search(CandidateFactory& factory, const std::string& instruction,
                                               const Dataset& dataset, std::size_t k, std::size_t n_trials,
                                               const TaskSpec& task, LlmBackend& backend, std::uint64_t seed);

enum class PromptSource { task_description, base_prompt, samples };

struct PromptSeedPayload {
    std::string text;                                       // description or base prompt
    std::vector<std::pair<std::string, std::string>> samples; // (x, y) pairs
};

/// Issues n meta calls with the seeding template for `source` and parses each
/// generation through the <prompt> markers. Returns the parsed candidates
/// (possibly fewer than n); throws AllGenerationsFailed when none parse.
std::vector<PromptCandidate> create_initial_prompts(CandidateFactory& factory, PromptSource source,
                                                    const PromptSeedPayload& payload, std::size_t n,
                                                    LlmBackend& meta_backend, const TemplateSet& templates,
                                                    double temperature = 0.8);

} // namespace promptforge
