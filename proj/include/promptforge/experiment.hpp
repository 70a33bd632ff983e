#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "promptforge/llm.hpp"
#include "promptforge/optimizers.hpp"
#include "promptforge/support.hpp"
#include "promptforge/task.hpp"

namespace promptforge {

struct SplitSpec {
    std::size_t n_dev = 500;
    std::size_t n_test = 300;
    std::uint64_t seed = 42;
};

/// Reads a header-row UTF-8 CSV, shuffles rows with the split seed, and
/// splits by counts (truncating with a warning on stderr when the file is
/// smaller). Empty y_column means no labels are loaded.
std::pair<Dataset, Dataset> load_dataset_csv(const std::string& path, const std::string& x_column,
                                             const std::string& y_column, const SplitSpec& split);

/// Single-object experiment configuration. Every field except optimizer,
/// task_description, api_url and model_id has a default; a config file
/// round-trips losslessly through its TOML form.
struct ExperimentConfig {
    // required
    std::string optimizer;
    std::string task_description;
    std::string api_url;
    std::string model_id;

    // defaults
    std::string meta_model_id;          // empty -> model_id
    std::string task_kind = "classification"; // classification | judge
    int n_steps = 12;
    std::int64_t token_limit = 1'000'000;
    std::size_t population_size = 10;
    std::string subsample_mode = "block"; // random | block | full
    std::size_t subsample_size = 30;
    std::string extraction_kind = "marker_based"; // first_occurrence | marker_based
    std::string begin_marker = "<final_answer>";
    std::string end_marker = "</final_answer>";
    std::vector<std::string> labels; // alphabet for first_occurrence
    std::string x_column = "text";
    std::string y_column = "label_text";
    std::uint64_t seed = 42;
    std::vector<std::string> initial_prompts;
    std::string output_dir = "promptforge_out";
    std::string trace_format = "jsonl"; // jsonl | csv
    std::string api_key_env = "PROMPTFORGE_API_KEY";
    std::string template_dir; // empty -> built-in templates
    std::size_t n_dev = 500;
    std::size_t n_test = 300;
    std::size_t max_eval_candidates = 5;

    // optimizer knobs (config-exposed per module defaults)
    std::size_t opro_top_k = 20;
    std::size_t opro_num_new = 4;
    double meta_temperature = 0.8;
    std::size_t capo_max_exemplars = 5;
    bool capo_check_fs_accuracy = true;
    double capo_elimination_margin = 0.05;
    double capo_length_penalty_gamma = 0.05;
    double capo_max_tokens_norm = 400.0;
    std::size_t capo_racing_blocks = 4;

    static ExperimentConfig from_toml_file(const std::string& path);
    static ExperimentConfig from_toml_string(const std::string& text, const std::string& origin = "<string>");
    std::string to_toml_string() const;

    /// Aggregates every problem into one ConfigError with field-level
    /// messages. require_endpoint skips api_url/model_id checks (used when a
    /// backend factory is injected).
    void validate(bool require_endpoint = true) const;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Injection points for tests; default-constructed hooks build HttpBackends
/// from the config.
struct RuntimeHooks {
    std::function<std::shared_ptr<LlmBackend>(const BackendConfig&)> make_backend;
};

struct OptimizationResult {
    std::vector<ScoredMember> ranked; // dev ranking, best first
    std::string trace_path;
    std::string run_id;
    TokenUsage tokens_spent;
    int steps_completed = 0;
    bool budget_exhausted = false;
};

/// Builds backends, task, optimizer and callbacks from the config, seeds the
/// initial population (from config.initial_prompts or the task description)
/// and runs the optimization on the dev split.
OptimizationResult run_optimization(const ExperimentConfig& config, const Dataset& dev,
                                    const RuntimeHooks& hooks = {});

struct EvaluationRow {
    PromptCandidate candidate;
    double test_score = 0.0;
};

/// Scores each candidate on the full test split (fresh cache, no dev
/// records); rows sorted by test score descending.
std::vector<EvaluationRow> run_evaluation(const std::vector<PromptCandidate>& candidates,
                                          const Dataset& test, const ExperimentConfig& config,
                                          const RuntimeHooks& hooks = {});

struct ExperimentReport {
    std::string run_id;
    ExperimentConfig config;
    std::optional<ScoredMember> best_dev; // selection is by dev score only
    std::vector<ScoredMember> dev_ranking;
    std::vector<EvaluationRow> test_rows;
    TokenUsage tokens_spent;
    int steps_completed = 0;
    bool budget_exhausted = false;
    std::string trace_path;
    std::string report_json_path;
    std::string report_text_path;
    std::string started_at;  // timestamps live in dedicated fields so
    std::string finished_at; // determinism diffs can exclude them

    std::string to_json_string() const;
    std::string to_text() const;
};

/// load/split -> run_optimization on dev -> run_evaluation of the top
/// max_eval_candidates on test -> report files under output_dir.
ExperimentReport run_experiment(const std::string& csv_path, const ExperimentConfig& config,
                                const RuntimeHooks& hooks = {});
ExperimentReport run_experiment(const Dataset& dev, const Dataset& test, const ExperimentConfig& config,
                                const RuntimeHooks& hooks = {});

} // namespace promptforge
