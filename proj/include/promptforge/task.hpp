#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "promptforge/core.hpp"
#include "promptforge/llm.hpp"
#include "promptforge/predictor.hpp"

namespace promptforge {

enum class Split { dev, test };

struct DatasetRow {
    std::string x;
    std::optional<std::string> y; // optional for judge tasks
};

struct Dataset {
    std::vector<DatasetRow> rows;
    std::string x_column;
    std::string y_column; // empty when labels were never loaded
    Split split = Split::dev;
};

enum class SubsampleMode { random, block, full };

struct SubsampleStrategy {
    SubsampleMode mode = SubsampleMode::block;
    std::size_t size = 30;
    std::uint64_t seed = 0;
};

struct SubsamplePlan {
    std::vector<std::size_t> indices;
    std::string key; // canonical id of the evaluated subset
};

/// full -> [0..n); block -> the (step mod ceil(n/size))-th contiguous slice;
/// random -> `size` distinct indices from an RNG seeded by (seed, step).
/// Throws InvalidStrategy when size > n.
SubsamplePlan subsample(const SubsampleStrategy& strategy, std::size_t n, std::uint64_t step);

enum class TaskKind { classification, judge, reward };

using RewardFn = std::function<double(const std::string& extracted)>;
using MetricFn = std::function<double(const std::vector<double>& per_datum_scores)>;

/// Dataset + description + scoring rules: everything needed to turn a
/// candidate into a score.
struct TaskSpec {
    TaskKind kind = TaskKind::classification;
    std::string description;
    Dataset dataset;
    ExtractionSpec extraction;
    std::string metric_name = "accuracy";
    MetricFn metric; // aggregate override; arithmetic mean when empty
    SubsampleStrategy subsampling;
    std::shared_ptr<LlmBackend> judge_backend; // judge only
    RewardFn reward_fn;                        // reward only
    double eval_temperature = 0.0;
    int max_output_tokens = 512;
};

/// (candidate digest, subsample key) -> EvaluationRecord. Concurrent reads,
/// exclusive insert; stored records are never mutated.
class EvalCache {
public:
    std::optional<EvaluationRecord> find(const std::string& digest, const std::string& subsample_key) const;
    void insert(const std::string& digest, const EvaluationRecord& record);
    std::size_t size() const;

private:
    static std::string key_of(const std::string& digest, const std::string& subsample_key);
    mutable std::mutex mutex_;
    std::map<std::string, EvaluationRecord> records_;
};

/// The per-datum user prompt: rendered candidate + blank line + the datum
/// block. Exposed so tests can pin the exact template.
std::string datum_prompt(const PromptCandidate& candidate, const TaskSpec& task, const std::string& x);

/// Scores one candidate on the step's subsample. Cache hits return the stored
/// record (usage_delta zeroed, candidate_id rewritten) with zero LLM calls.
EvaluationRecord evaluate(const PromptCandidate& candidate, const TaskSpec& task,
                          LlmBackend& backend, std::uint64_t step, EvalCache& cache);

/// Same contract, scoring on an explicit plan instead of the step's plan;
/// what racing and full-split evaluation go through.
EvaluationRecord evaluate_on(const PromptCandidate& candidate, const TaskSpec& task,
                             LlmBackend& backend, const SubsamplePlan& plan, EvalCache& cache);

/// One judge call for one output; returns k/10 for the integer k in the
/// judge's "<score>k</score>" answer. Throws JudgeParseFailure otherwise.
double judge_score(const std::string& output, const std::string& x, const std::string& description,
                   LlmBackend& judge_backend, const std::optional<std::string>& reference = std::nullopt);

/// The judge request for one datum; shared by judge_score and the batched
/// path inside evaluate so both parse identically.
ChatRequest build_judge_request(const std::string& output, const std::string& x,
                                const std::string& description,
                                const std::optional<std::string>& reference);

/// Parses the judge's reply into [0,1]. Throws JudgeParseFailure.
double parse_judge_reply(const std::string& reply);

} // namespace promptforge
