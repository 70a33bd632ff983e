#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "promptforge/core.hpp"
#include "promptforge/llm.hpp"
#include "promptforge/rng.hpp"
#include "promptforge/task.hpp"
#include "promptforge/templates.hpp"

namespace promptforge {

/// Combined spend cap across every backend involved in a run (meta and
/// downstream share one ledger). limit 0 means exhausted at entry.
struct TokenBudget {
    std::int64_t limit_total_tokens = 1'000'000;
    std::vector<std::shared_ptr<const LlmBackend>> ledgers;

    TokenUsage spent() const;
    bool exhausted() const { return spent().total() >= limit_total_tokens; }
};

/// A population member together with the score it was last evaluated at and
/// the subsample key that score is comparable on. rank_value, when set,
/// overrides score for ordering (CAPO's length-penalized mean); score itself
/// stays the raw performance estimate.
struct ScoredMember {
    PromptCandidate candidate;
    std::optional<Score> score;
    std::string basis_key;
    std::optional<double> rank_value;

    double ordering_value() const { return rank_value ? *rank_value : (score ? score->value : 0.0); }
};

/// Per-step bookkeeping filled by the step procedures; what the monotonicity
/// assertions read.
struct StepStats {
    std::uint64_t step = 0;
    std::string subsample_key;
    double population_mean_before = 0.0;
    double population_mean_after = 0.0;
    std::size_t meta_calls = 0;
};

struct OptimizerState {
    std::string run_id;
    std::uint64_t step = 0; // next step index; increases across optimize() calls
    std::vector<ScoredMember> population;
    std::vector<EvaluationRecord> history;
    TokenBudget budget;
    std::uint64_t rng_seed = 0;
    std::optional<ScoredMember> best_so_far;
    std::vector<StepStats> step_stats;
    int steps_completed = 0; // completed within the current optimize() call
};

enum class CallbackKind { on_start, on_step_end, on_end };
enum class CallbackVerdict { continue_run, terminate };

struct CallbackEvent {
    CallbackKind kind;
    const OptimizerState& state;
};

using Callback = std::function<CallbackVerdict(const CallbackEvent&)>;

struct OptimizerSettings {
    std::size_t population_size = 10;
    double meta_temperature = 0.8;
    int meta_max_output_tokens = 512;

    // opro
    std::size_t opro_top_k = 20;
    std::size_t opro_num_new = 4;
    std::size_t opro_num_examples = 3;

    // capo
    std::size_t capo_max_exemplars = 5;
    bool capo_check_fs_accuracy = true;
    double capo_elimination_margin = 0.05;
    double capo_length_penalty_gamma = 0.05;
    double capo_max_tokens_norm = 400.0;
    std::size_t capo_racing_blocks = 4;
};

struct OptimizerContext {
    TaskSpec task;
    std::shared_ptr<LlmBackend> downstream;
    std::shared_ptr<LlmBackend> meta; // may be the same object as downstream
    OptimizerSettings settings;
    TemplateSet templates;
    std::shared_ptr<CandidateFactory> factory;
    std::shared_ptr<EvalCache> cache;
    std::int64_t token_limit = 1'000'000;
    std::uint64_t seed = 0;
    std::string run_id = "run";
};

/// Base optimization loop: budget checks, caching, callbacks, ranking.
/// Subclasses implement run_step(); registered custom steps get the same
/// loop through LambdaOptimizer.
class Optimizer {
public:
    explicit Optimizer(OptimizerContext ctx);
    virtual ~Optimizer() = default;

    /// Replaces the population. Instructions become step-0 candidates.
    void set_initial_population(const std::vector<PromptCandidate>& candidates);

    /// Runs at most n_steps steps; stops early on budget exhaustion or a
    /// terminate verdict. Returns the population ranked by best available
    /// score (descending, ties by lower id).
    std::vector<PromptCandidate> optimize(int n_steps, const std::vector<Callback>& callbacks = {});

    const OptimizerState& state() const noexcept { return state_; }
    OptimizerContext& context() noexcept { return ctx_; }

    /// Population in ranking order (best available score first, ties by id).
    std::vector<ScoredMember> ranked_population() const;

    // --- services available to step procedures ---

    bool budget_exhausted() const { return state_.budget.exhausted(); }

    /// Subsample plan for the current step per the task's strategy.
    SubsamplePlan current_plan() const;

    /// Scores every member on `plan`, cache-aware and budget-checked.
    /// Returns false when the budget ran out before completion.
    bool ensure_population_scored(const SubsamplePlan& plan);

    /// Cache-aware evaluation; dispatches only when the budget allows.
    /// nullopt means the budget was exhausted before dispatch.
    std::optional<EvaluationRecord> evaluate_candidate(const PromptCandidate& candidate,
                                                       const SubsamplePlan& plan);

    /// One meta batch; each response parsed through the <prompt> markers.
    /// nullopt entries are unparseable generations (dropped by callers).
    /// Empty result when the budget was exhausted before dispatch.
    std::vector<std::optional<std::string>> meta_generate(const std::vector<std::string>& user_texts);

    Rng& rng() noexcept { return rng_; }

protected:
    virtual void run_step() = 0;

    /// Sorts members by score descending (unscored last), ties by lower id.
    /// Asserts shared basis keys when `assert_comparable` is set.
    static void rank_members(std::vector<ScoredMember>& members, bool assert_comparable);

    /// Roulette-wheel index proportional to score; uniform when all equal or any <= 0.
    std::size_t roulette_pick(const std::vector<ScoredMember>& members);

    /// Recomputes best_so_far from members scored on `basis_key`.
    void update_best(const std::string& basis_key);

    void record_step_stats(const SubsamplePlan& plan, double mean_before, double mean_after,
                           std::size_t meta_calls);

    static double mean_score(const std::vector<ScoredMember>& members, const std::string& basis_key);

    ChatRequest make_meta_request(std::string user_text) const;

    OptimizerContext ctx_;
    OptimizerState state_;
    Rng rng_;

    /// Instruction text by candidate id for every candidate this run has
    /// touched; what OPRO's scored-history listing reads.
    std::map<std::uint64_t, std::string> known_instructions_;

private:
    void pad_population();
    std::vector<PromptCandidate> final_ranking() const;
    CallbackVerdict emit(CallbackKind kind, const std::vector<Callback>& callbacks);
    std::set<std::string> seen_records_; // (digest|key) already in history
};

class OproOptimizer : public Optimizer {
public:
    using Optimizer::Optimizer;

protected:
    void run_step() override;
};

class EvoPromptGaOptimizer : public Optimizer {
public:
    using Optimizer::Optimizer;

protected:
    void run_step() override;
};

class EvoPromptDeOptimizer : public Optimizer {
public:
    using Optimizer::Optimizer;

protected:
    void run_step() override;
};

class CapoOptimizer : public Optimizer {
public:
    using Optimizer::Optimizer;

protected:
    void run_step() override;

private:
    struct Rival;
    PromptCandidate mutate_exemplars(const PromptCandidate& child);
    std::vector<SubsamplePlan> racing_blocks();
    std::uint64_t block_counter_ = 0;
};

/// Wraps a plain step procedure in the base loop; what register_optimizer
/// produces.
class LambdaOptimizer : public Optimizer {
public:
    using StepFn = std::function<void(Optimizer&)>;
    LambdaOptimizer(OptimizerContext ctx, StepFn step) : Optimizer(std::move(ctx)), step_(std::move(step)) {}

protected:
    void run_step() override { step_(*this); }

private:
    StepFn step_;
};

struct OptimizerHandle {
    std::string name;
};

using OptimizerFactory = std::function<std::unique_ptr<Optimizer>(OptimizerContext)>;

/// Name -> optimizer factory. Built-ins (opro, evoprompt-ga, evoprompt-de,
/// capo) are pre-registered; custom optimizers inherit the base loop.
class OptimizerRegistry {
public:
    static OptimizerRegistry& instance();

    OptimizerHandle register_factory(const std::string& name, OptimizerFactory factory);
    OptimizerHandle register_step(const std::string& name, LambdaOptimizer::StepFn step);
    void unregister(const std::string& name);

    std::unique_ptr<Optimizer> make(const std::string& name, OptimizerContext ctx) const;
    bool contains(const std::string& name) const;
    std::vector<std::string> names() const;

private:
    OptimizerRegistry();
    mutable std::mutex mutex_;
    std::map<std::string, OptimizerFactory> factories_;
};

/// Registers a custom per-step procedure under `name`. Throws DuplicateName.
OptimizerHandle register_optimizer(const std::string& name, LambdaOptimizer::StepFn step);

} // namespace promptforge
