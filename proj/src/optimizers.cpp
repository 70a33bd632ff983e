#include "promptforge/optimizers.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <numeric>

#include "promptforge/errors.hpp"

namespace promptforge {

namespace {

bool better_member(const ScoredMember& a, const ScoredMember& b) {
    bool a_scored = a.score.has_value();
    bool b_scored = b.score.has_value();
    if (a_scored != b_scored) return a_scored; // unscored last
    if (a_scored && a.ordering_value() != b.ordering_value()) return a.ordering_value() > b.ordering_value();
    return a.candidate.id < b.candidate.id;
}

std::string format_score(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", value);
    return buf;
}

} // namespace

// ---------------------------------------------------------------------------
// TokenBudget
// ---------------------------------------------------------------------------

TokenUsage TokenBudget::spent() const {
    TokenUsage total;
    std::vector<const LlmBackend*> seen;
    for (const auto& ledger : ledgers) {
        if (!ledger) continue;
        if (std::find(seen.begin(), seen.end(), ledger.get()) != seen.end()) continue;
        seen.push_back(ledger.get());
        total += ledger->cumulative_usage();
    }
    return total;
}

// ---------------------------------------------------------------------------
// Optimizer base
// ---------------------------------------------------------------------------

Optimizer::Optimizer(OptimizerContext ctx) : ctx_(std::move(ctx)), rng_(derive_seed(ctx_.seed, "optimizer")) {
    if (!ctx_.factory) ctx_.factory = std::make_shared<CandidateFactory>();
    if (!ctx_.cache) ctx_.cache = std::make_shared<EvalCache>();
    state_.run_id = ctx_.run_id;
    state_.rng_seed = ctx_.seed;
    state_.budget.limit_total_tokens = ctx_.token_limit;
    state_.budget.ledgers = {ctx_.downstream, ctx_.meta};
}

void Optimizer::set_initial_population(const std::vector<PromptCandidate>& candidates) {
    state_.population.clear();
    for (const auto& candidate : candidates) {
        known_instructions_[candidate.id] = candidate.instruction;
        state_.population.push_back(ScoredMember{candidate, std::nullopt, "", std::nullopt});
    }
}

SubsamplePlan Optimizer::current_plan() const {
    return subsample(ctx_.task.subsampling, ctx_.task.dataset.rows.size(), state_.step);
}

std::optional<EvaluationRecord> Optimizer::evaluate_candidate(const PromptCandidate& candidate,
                                                              const SubsamplePlan& plan) {
    const std::string digest = candidate_digest(candidate);
    EvaluationRecord record;
    if (auto hit = ctx_.cache->find(digest, plan.key)) {
        record = *hit;
        record.usage_delta = TokenUsage{};
        record.candidate_id = candidate.id;
    } else {
        if (budget_exhausted()) return std::nullopt;
        record = evaluate_on(candidate, ctx_.task, *ctx_.downstream, plan, *ctx_.cache);
    }
    known_instructions_[candidate.id] = candidate.instruction;
    if (seen_records_.insert(digest + "|" + plan.key).second) {
        state_.history.push_back(record);
    }
    return record;
}

bool Optimizer::ensure_population_scored(const SubsamplePlan& plan) {
    for (auto& member : state_.population) {
        if (member.score && member.basis_key == plan.key) continue;
        auto record = evaluate_candidate(member.candidate, plan);
        if (!record) return false;
        member.score = record->score;
        member.basis_key = plan.key;
        member.rank_value.reset();
    }
    return true;
}

std::vector<std::optional<std::string>> Optimizer::meta_generate(const std::vector<std::string>& user_texts) {
    if (user_texts.empty() || budget_exhausted()) return {};
    std::vector<ChatRequest> requests;
    requests.reserve(user_texts.size());
    for (const auto& text : user_texts) requests.push_back(make_meta_request(text));
    std::vector<ChatResponse> responses = ctx_.meta->complete_batch(requests);
    std::vector<std::optional<std::string>> parsed;
    parsed.reserve(responses.size());
    for (const auto& response : responses) {
        parsed.push_back(extract_marker(response.text, kGeneratedPromptBegin, kGeneratedPromptEnd));
    }
    return parsed;
}

ChatRequest Optimizer::make_meta_request(std::string user_text) const {
    ChatRequest request;
    request.user_text = std::move(user_text);
    request.temperature = ctx_.settings.meta_temperature;
    request.max_output_tokens = ctx_.settings.meta_max_output_tokens;
    return request;
}

void Optimizer::rank_members(std::vector<ScoredMember>& members, bool assert_comparable) {
    if (assert_comparable) {
        const std::string* basis = nullptr;
        for (const auto& member : members) {
            if (!member.score) continue;
            if (!basis) {
                basis = &member.basis_key;
            } else if (*basis != member.basis_key) {
                throw Error("cross-subsample comparison: '" + *basis + "' vs '" + member.basis_key + "'");
            }
        }
    }
    std::stable_sort(members.begin(), members.end(), better_member);
}

std::size_t Optimizer::roulette_pick(const std::vector<ScoredMember>& members) {
    if (members.empty()) throw Error("roulette selection over an empty population");
    double min_score = 0.0;
    double max_score = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < members.size(); ++i) {
        double v = members[i].score ? members[i].score->value : 0.0;
        if (i == 0) min_score = max_score = v;
        min_score = std::min(min_score, v);
        max_score = std::max(max_score, v);
        total += v;
    }
    // uniform when proportional selection is undefined
    if (members.size() < 2 || min_score <= 0.0 || min_score == max_score) {
        return static_cast<std::size_t>(rng_.next_below(members.size()));
    }
    double r = rng_.next_double() * total;
    double acc = 0.0;
    for (std::size_t i = 0; i < members.size(); ++i) {
        acc += members[i].score->value;
        if (r < acc) return i;
    }
    return members.size() - 1;
}

void Optimizer::update_best(const std::string& basis_key) {
    const ScoredMember* top = nullptr;
    for (const auto& member : state_.population) {
        if (!member.score || member.basis_key != basis_key) continue;
        if (!top || better_member(member, *top)) top = &member;
    }
    if (!top) return;
    if (state_.best_so_far && state_.best_so_far->basis_key == basis_key) {
        if (better_member(*top, *state_.best_so_far)) state_.best_so_far = *top;
    } else {
        state_.best_so_far = *top; // rebased to the current comparison basis
    }
}

double Optimizer::mean_score(const std::vector<ScoredMember>& members, const std::string& basis_key) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& member : members) {
        if (!member.score || member.basis_key != basis_key) continue;
        sum += member.score->value;
        count++;
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

void Optimizer::record_step_stats(const SubsamplePlan& plan, double mean_before, double mean_after,
                                  std::size_t meta_calls) {
    StepStats stats;
    stats.step = state_.step;
    stats.subsample_key = plan.key;
    stats.population_mean_before = mean_before;
    stats.population_mean_after = mean_after;
    stats.meta_calls = meta_calls;
    state_.step_stats.push_back(std::move(stats));
}

void Optimizer::pad_population() {
    const std::size_t target = ctx_.settings.population_size;
    if (state_.population.size() > target) {
        state_.population.resize(target);
        return;
    }
    if (state_.population.size() == target) return;

    const std::size_t n_sources = state_.population.size();
    // duplicate provided prompts through paraphrase calls until full
    while (state_.population.size() < target) {
        if (budget_exhausted()) return;
        std::size_t missing = target - state_.population.size();
        std::vector<std::size_t> sources;
        std::vector<std::string> texts;
        for (std::size_t i = 0; i < missing; ++i) {
            std::size_t src = static_cast<std::size_t>(rng_.next_below(n_sources));
            sources.push_back(src);
            texts.push_back(render_template(ctx_.templates.init_from_base_prompt.text,
                                            {{"base_prompt", state_.population[src].candidate.instruction}}));
        }
        auto generations = meta_generate(texts);
        for (std::size_t i = 0; i < missing && state_.population.size() < target; ++i) {
            const auto& source = state_.population[sources[i]].candidate;
            std::string text = source.instruction; // verbatim fallback when the paraphrase fails to parse
            if (i < generations.size() && generations[i] && !trim(*generations[i]).empty()) {
                text = *generations[i];
            }
            PromptCandidate padded =
                ctx_.factory->create(text, source.exemplars, {source.id}, static_cast<int>(state_.step));
            known_instructions_[padded.id] = padded.instruction;
            state_.population.push_back(ScoredMember{std::move(padded), std::nullopt, "", std::nullopt});
        }
    }
}

CallbackVerdict Optimizer::emit(CallbackKind kind, const std::vector<Callback>& callbacks) {
    CallbackVerdict verdict = CallbackVerdict::continue_run;
    CallbackEvent event{kind, state_};
    for (const auto& callback : callbacks) {
        if (!callback) continue;
        if (callback(event) == CallbackVerdict::terminate) verdict = CallbackVerdict::terminate;
    }
    return verdict;
}

std::vector<ScoredMember> Optimizer::ranked_population() const {
    std::vector<ScoredMember> members = state_.population;
    rank_members(members, /*assert_comparable=*/false);
    return members;
}

std::vector<PromptCandidate> Optimizer::final_ranking() const {
    std::vector<ScoredMember> members = ranked_population();
    std::vector<PromptCandidate> ranked;
    ranked.reserve(members.size());
    for (auto& member : members) ranked.push_back(std::move(member.candidate));
    return ranked;
}

std::vector<PromptCandidate> Optimizer::optimize(int n_steps, const std::vector<Callback>& callbacks) {
    if (state_.population.empty()) {
        throw NoCandidates("optimize() requires a non-empty initial population");
    }
    state_.steps_completed = 0;
    pad_population();

    bool terminated = emit(CallbackKind::on_start, callbacks) == CallbackVerdict::terminate;
    for (int s = 0; s < n_steps && !terminated; ++s) {
        if (budget_exhausted()) break;
        try {
            run_step();
        } catch (...) {
            emit(CallbackKind::on_end, callbacks);
            throw;
        }
        state_.steps_completed++;
        terminated = emit(CallbackKind::on_step_end, callbacks) == CallbackVerdict::terminate;
        state_.step++;
    }
    emit(CallbackKind::on_end, callbacks);
    return final_ranking();
}

// ---------------------------------------------------------------------------
// OPRO
// ---------------------------------------------------------------------------

void OproOptimizer::run_step() {
    SubsamplePlan plan = current_plan();
    if (!ensure_population_scored(plan)) return;
    double mean_before = mean_score(state_.population, plan.key);

    // latest score per candidate, from the run history
    std::map<std::uint64_t, double> latest;
    for (const auto& record : state_.history) latest[record.candidate_id] = record.score.value;

    struct HistoryEntry {
        double score;
        std::uint64_t id;
    };
    std::vector<HistoryEntry> entries;
    entries.reserve(latest.size());
    for (const auto& [id, score] : latest) entries.push_back({score, id});
    std::sort(entries.begin(), entries.end(), [](const HistoryEntry& a, const HistoryEntry& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    });
    if (entries.size() > ctx_.settings.opro_top_k) entries.resize(ctx_.settings.opro_top_k);
    // ascending for the meta prompt: worst first, best last
    std::reverse(entries.begin(), entries.end());

    std::string scored_prompts;
    for (const auto& entry : entries) {
        scored_prompts += "Instruction: " + known_instructions_[entry.id] + "\n";
        scored_prompts += "Score: " + format_score(entry.score) + "\n\n";
    }

    std::string examples;
    std::size_t shown = 0;
    for (const auto& row : ctx_.task.dataset.rows) {
        if (shown >= ctx_.settings.opro_num_examples) break;
        if (!row.y) continue;
        examples += "Input: " + row.x + "\nOutput: " + *row.y + "\n";
        shown++;
    }

    std::string meta_text = render_template(ctx_.templates.opro_propose.text,
                                            {{"task_description", ctx_.task.description},
                                             {"scored_prompts", scored_prompts},
                                             {"examples", examples}});
    std::vector<std::string> texts(ctx_.settings.opro_num_new, meta_text);
    auto generations = meta_generate(texts);
    if (budget_exhausted()) {
        record_step_stats(plan, mean_before, mean_score(state_.population, plan.key), generations.size());
        return;
    }

    std::vector<ScoredMember> pool = state_.population;
    for (const auto& generation : generations) {
        if (!generation || trim(*generation).empty()) continue; // unparseable generation dropped
        PromptCandidate candidate = ctx_.factory->create(*generation, {}, {}, static_cast<int>(state_.step));
        auto record = evaluate_candidate(candidate, plan);
        if (!record) break;
        pool.push_back(ScoredMember{std::move(candidate), record->score, plan.key, std::nullopt});
    }

    rank_members(pool, /*assert_comparable=*/true);
    if (pool.size() > ctx_.settings.population_size) pool.resize(ctx_.settings.population_size);
    state_.population = std::move(pool);

    update_best(plan.key);
    record_step_stats(plan, mean_before, mean_score(state_.population, plan.key), generations.size());
}

// ---------------------------------------------------------------------------
// EvoPrompt GA
// ---------------------------------------------------------------------------

void EvoPromptGaOptimizer::run_step() {
    SubsamplePlan plan = current_plan();
    if (!ensure_population_scored(plan)) return;
    double mean_before = mean_score(state_.population, plan.key);

    const std::size_t n_children = ctx_.settings.population_size;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    pairs.reserve(n_children);
    for (std::size_t j = 0; j < n_children; ++j) {
        std::size_t a = roulette_pick(state_.population);
        std::size_t b = roulette_pick(state_.population);
        for (int tries = 0; b == a && state_.population.size() > 1 && tries < 16; ++tries) {
            b = roulette_pick(state_.population);
        }
        pairs.emplace_back(a, b);
    }

    std::vector<std::string> texts;
    texts.reserve(pairs.size());
    for (const auto& [a, b] : pairs) {
        texts.push_back(render_template(ctx_.templates.ga_crossover.text,
                                        {{"task_description", ctx_.task.description},
                                         {"parent_a", state_.population[a].candidate.instruction},
                                         {"parent_b", state_.population[b].candidate.instruction}}));
    }
    auto generations = meta_generate(texts);
    if (budget_exhausted()) {
        record_step_stats(plan, mean_before, mean_score(state_.population, plan.key), generations.size());
        return;
    }

    std::vector<ScoredMember> pool = state_.population;
    for (std::size_t j = 0; j < generations.size(); ++j) {
        if (!generations[j] || trim(*generations[j]).empty()) continue; // child dropped
        const auto& [a, b] = pairs[j];
        PromptCandidate child =
            ctx_.factory->create(*generations[j], {},
                                 {state_.population[a].candidate.id, state_.population[b].candidate.id},
                                 static_cast<int>(state_.step));
        auto record = evaluate_candidate(child, plan);
        if (!record) break;
        pool.push_back(ScoredMember{std::move(child), record->score, plan.key, std::nullopt});
    }

    // elitist survivor selection over parents and children
    rank_members(pool, /*assert_comparable=*/true);
    if (pool.size() > ctx_.settings.population_size) pool.resize(ctx_.settings.population_size);
    state_.population = std::move(pool);

    update_best(plan.key);
    record_step_stats(plan, mean_before, mean_score(state_.population, plan.key), generations.size());
}

// ---------------------------------------------------------------------------
// EvoPrompt DE
// ---------------------------------------------------------------------------

void EvoPromptDeOptimizer::run_step() {
    if (state_.population.size() < 4) {
        throw PopulationTooSmall("differential evolution needs a population of at least 4, got " +
                                 std::to_string(state_.population.size()));
    }
    SubsamplePlan plan = current_plan();
    if (!ensure_population_scored(plan)) return;
    double mean_before = mean_score(state_.population, plan.key);
    update_best(plan.key); // the trial template shows the current best

    const std::size_t size = state_.population.size();
    struct TrialDonors {
        std::size_t a, b, c;
    };
    std::vector<TrialDonors> donors;
    donors.reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
        std::vector<std::size_t> others;
        others.reserve(size - 1);
        for (std::size_t j = 0; j < size; ++j) {
            if (j != i) others.push_back(j);
        }
        auto picks = rng_.sample_distinct(others.size(), 3);
        donors.push_back({others[picks[0]], others[picks[1]], others[picks[2]]});
    }

    std::vector<std::string> texts;
    texts.reserve(size);
    for (std::size_t i = 0; i < size; ++i) {
        texts.push_back(render_template(
            ctx_.templates.de_trial.text,
            {{"task_description", ctx_.task.description},
             {"target", state_.population[i].candidate.instruction},
             {"parent_a", state_.population[donors[i].a].candidate.instruction},
             {"parent_b", state_.population[donors[i].b].candidate.instruction},
             {"parent_c", state_.population[donors[i].c].candidate.instruction},
             {"best", state_.best_so_far ? state_.best_so_far->candidate.instruction : ""}}));
    }
    auto generations = meta_generate(texts);
    if (budget_exhausted()) {
        record_step_stats(plan, mean_before, mean_score(state_.population, plan.key), generations.size());
        return;
    }

    for (std::size_t i = 0; i < generations.size(); ++i) {
        if (!generations[i] || trim(*generations[i]).empty()) continue; // target kept
        auto& target = state_.population[i];
        PromptCandidate trial = ctx_.factory->create(
            *generations[i], {},
            {target.candidate.id, state_.population[donors[i].a].candidate.id,
             state_.population[donors[i].b].candidate.id, state_.population[donors[i].c].candidate.id},
            static_cast<int>(state_.step));
        auto record = evaluate_candidate(trial, plan);
        if (!record) break;
        if (target.basis_key != plan.key) {
            throw Error("cross-subsample comparison in DE replacement");
        }
        // strict improvement only; ties keep the target
        if (record->score.value > target.score->value) {
            target = ScoredMember{std::move(trial), record->score, plan.key, std::nullopt};
        }
    }

    update_best(plan.key);
    record_step_stats(plan, mean_before, mean_score(state_.population, plan.key), generations.size());
}

// ---------------------------------------------------------------------------
// CAPO
// ---------------------------------------------------------------------------

struct CapoOptimizer::Rival {
    ScoredMember member;
    std::vector<double> block_values;
    bool alive = true;

    double mean_over(std::size_t n_blocks) const {
        if (n_blocks == 0 || block_values.empty()) return 0.0;
        n_blocks = std::min(n_blocks, block_values.size());
        return std::accumulate(block_values.begin(), block_values.begin() + static_cast<std::ptrdiff_t>(n_blocks),
                               0.0) /
               static_cast<double>(n_blocks);
    }
};

std::vector<SubsamplePlan> CapoOptimizer::racing_blocks() {
    const std::size_t n = ctx_.task.dataset.rows.size();
    std::size_t count = ctx_.settings.capo_racing_blocks;
    if (ctx_.task.subsampling.mode == SubsampleMode::full) {
        count = 1; // one block covers everything
    } else if (ctx_.task.subsampling.mode == SubsampleMode::block) {
        // never race the same block twice within a step
        std::size_t n_blocks = (n + ctx_.task.subsampling.size - 1) / ctx_.task.subsampling.size;
        count = std::min(count, n_blocks);
    }
    std::vector<SubsamplePlan> blocks;
    blocks.reserve(count);
    for (std::size_t b = 0; b < count; ++b) {
        blocks.push_back(subsample(ctx_.task.subsampling, n, block_counter_ + b));
    }
    return blocks;
}

PromptCandidate CapoOptimizer::mutate_exemplars(const PromptCandidate& child) {
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < ctx_.task.dataset.rows.size(); ++i) {
        if (ctx_.task.dataset.rows[i].y) eligible.push_back(i);
    }
    if (eligible.empty()) {
        if (ctx_.task.kind == TaskKind::classification && ctx_.settings.capo_max_exemplars > 0) {
            throw InsufficientExemplars("no labeled rows available as few-shot exemplars");
        }
        return child; // unlabeled judge/reward data: exemplar operators are no-ops
    }

    PromptCandidate mutated = child;
    switch (rng_.next_below(3)) {
    case 0: { // add
        if (mutated.exemplars.size() >= ctx_.settings.capo_max_exemplars) break;
        const auto& row = ctx_.task.dataset.rows[eligible[rng_.next_below(eligible.size())]];
        FewShotExemplar exemplar =
            make_exemplar(row.x, *row.y, ctx_.task.extraction.begin_marker, ctx_.task.extraction.end_marker);
        if (ctx_.settings.capo_check_fs_accuracy) {
            // admit only if the instruction alone already solves this input
            if (budget_exhausted()) break;
            PromptCandidate probe;
            probe.id = mutated.id;
            probe.instruction = mutated.instruction;
            ChatRequest request;
            request.user_text = datum_prompt(probe, ctx_.task, row.x);
            request.temperature = ctx_.task.eval_temperature;
            request.max_output_tokens = ctx_.task.max_output_tokens;
            ChatResponse response = ctx_.downstream->complete(request);
            auto predicted = extract(ctx_.task.extraction, response.text);
            bool correct = predicted && trim(*predicted) == trim(*row.y);
            if (!correct && predicted) {
                // case-insensitive comparison, same rule the task scorer uses
                std::string a = trim(*predicted), b = trim(*row.y);
                std::transform(a.begin(), a.end(), a.begin(), [](unsigned char c) { return std::tolower(c); });
                std::transform(b.begin(), b.end(), b.begin(), [](unsigned char c) { return std::tolower(c); });
                correct = a == b;
            }
            if (!correct) break;
        }
        mutated.exemplars.push_back(std::move(exemplar));
        break;
    }
    case 1: { // remove
        if (mutated.exemplars.empty()) break;
        std::size_t victim = static_cast<std::size_t>(rng_.next_below(mutated.exemplars.size()));
        mutated.exemplars.erase(mutated.exemplars.begin() + static_cast<std::ptrdiff_t>(victim));
        break;
    }
    default: { // shuffle
        rng_.shuffle(mutated.exemplars);
        break;
    }
    }
    return mutated;
}

void CapoOptimizer::run_step() {
    std::vector<SubsamplePlan> blocks = racing_blocks();
    const SubsamplePlan& first_block = blocks.front();

    if (!ensure_population_scored(first_block)) {
        block_counter_ += blocks.size();
        return;
    }
    double mean_before = mean_score(state_.population, first_block.key);

    // instruction crossover+mutation, as in GA
    const std::size_t n_children = ctx_.settings.population_size;
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t j = 0; j < n_children; ++j) {
        std::size_t a = roulette_pick(state_.population);
        std::size_t b = roulette_pick(state_.population);
        for (int tries = 0; b == a && state_.population.size() > 1 && tries < 16; ++tries) {
            b = roulette_pick(state_.population);
        }
        pairs.emplace_back(a, b);
    }
    std::vector<std::string> texts;
    texts.reserve(pairs.size());
    for (const auto& [a, b] : pairs) {
        texts.push_back(render_template(ctx_.templates.capo_crossover.text,
                                        {{"task_description", ctx_.task.description},
                                         {"parent_a", state_.population[a].candidate.instruction},
                                         {"parent_b", state_.population[b].candidate.instruction}}));
    }
    auto generations = meta_generate(texts);
    if (budget_exhausted()) {
        record_step_stats(first_block, mean_before, mean_score(state_.population, first_block.key), generations.size());
        block_counter_ += blocks.size();
        return;
    }

    std::vector<Rival> rivals;
    for (const auto& member : state_.population) {
        Rival rival;
        rival.member = member;
        rival.member.rank_value.reset();
        rivals.push_back(std::move(rival));
    }
    for (std::size_t j = 0; j < generations.size(); ++j) {
        if (!generations[j] || trim(*generations[j]).empty()) continue;
        const auto& [a, b] = pairs[j];
        const PromptCandidate& parent_a = state_.population[a].candidate;
        PromptCandidate child =
            ctx_.factory->create(*generations[j], parent_a.exemplars,
                                 {parent_a.id, state_.population[b].candidate.id}, static_cast<int>(state_.step));
        child = mutate_exemplars(child);
        Rival rival;
        rival.member = ScoredMember{std::move(child), std::nullopt, "", std::nullopt};
        rivals.push_back(std::move(rival));
    }

    // racing: shared blocks, early elimination of clear losers
    std::size_t blocks_done = 0;
    bool budget_stopped = false;
    for (std::size_t b = 0; b < blocks.size() && !budget_stopped; ++b) {
        for (auto& rival : rivals) {
            if (!rival.alive) continue;
            auto record = evaluate_candidate(rival.member.candidate, blocks[b]);
            if (!record) {
                budget_stopped = true;
                break;
            }
            rival.block_values.push_back(record->score.value);
        }
        if (budget_stopped) break;
        blocks_done++;

        if (blocks_done >= 2) {
            double incumbent = 0.0;
            bool any = false;
            for (const auto& rival : rivals) {
                if (!rival.alive) continue;
                incumbent = any ? std::max(incumbent, rival.mean_over(blocks_done)) : rival.mean_over(blocks_done);
                any = true;
            }
            // worst first; elimination stops at population_size survivors
            std::vector<Rival*> order;
            for (auto& rival : rivals) {
                if (rival.alive) order.push_back(&rival);
            }
            std::sort(order.begin(), order.end(), [&](const Rival* x, const Rival* y) {
                if (x->mean_over(blocks_done) != y->mean_over(blocks_done)) {
                    return x->mean_over(blocks_done) < y->mean_over(blocks_done);
                }
                return x->member.candidate.id > y->member.candidate.id;
            });
            std::size_t alive = order.size();
            for (Rival* rival : order) {
                if (alive <= ctx_.settings.population_size) break;
                if (rival->mean_over(blocks_done) < incumbent - ctx_.settings.capo_elimination_margin) {
                    rival->alive = false;
                    alive--;
                }
            }
        }
    }

    if (blocks_done == 0) {
        record_step_stats(first_block, mean_before, mean_score(state_.population, first_block.key), generations.size());
        block_counter_ += blocks.size();
        return;
    }

    std::string combined_key = "capo";
    for (std::size_t b = 0; b < blocks_done; ++b) combined_key += "+" + blocks[b].key;

    // survivors ranked by mean minus the length penalty
    std::vector<ScoredMember> survivors;
    for (auto& rival : rivals) {
        if (!rival.alive || rival.block_values.size() < blocks_done) continue;
        double mean = rival.mean_over(blocks_done);
        double rendered_tokens = static_cast<double>(count_tokens(render_prompt(rival.member.candidate)));
        double penalized = mean - ctx_.settings.capo_length_penalty_gamma * rendered_tokens /
                                      ctx_.settings.capo_max_tokens_norm;
        ScoredMember member = rival.member;
        int n_samples = 0;
        for (std::size_t b = 0; b < blocks_done; ++b) n_samples += static_cast<int>(blocks[b].indices.size());
        member.score = Score{mean, n_samples};
        member.basis_key = combined_key;
        member.rank_value = penalized;
        survivors.push_back(std::move(member));
    }
    std::stable_sort(survivors.begin(), survivors.end(), better_member);
    if (survivors.size() > ctx_.settings.population_size) survivors.resize(ctx_.settings.population_size);
    if (!survivors.empty()) state_.population = std::move(survivors);

    update_best(combined_key);
    double mean_after = mean_score(state_.population, combined_key);
    record_step_stats(first_block, mean_before, mean_after, generations.size());
    block_counter_ += blocks.size();
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

OptimizerRegistry::OptimizerRegistry() {
    factories_["opro"] = [](OptimizerContext ctx) { return std::make_unique<OproOptimizer>(std::move(ctx)); };
    factories_["evoprompt-ga"] = [](OptimizerContext ctx) {
        return std::make_unique<EvoPromptGaOptimizer>(std::move(ctx));
    };
    factories_["evoprompt-de"] = [](OptimizerContext ctx) {
        return std::make_unique<EvoPromptDeOptimizer>(std::move(ctx));
    };
    factories_["capo"] = [](OptimizerContext ctx) { return std::make_unique<CapoOptimizer>(std::move(ctx)); };
}

OptimizerRegistry& OptimizerRegistry::instance() {
    static OptimizerRegistry registry;
    return registry;
}

OptimizerHandle OptimizerRegistry::register_factory(const std::string& name, OptimizerFactory factory) {
    std::lock_guard lock(mutex_);
    if (factories_.count(name) != 0) {
        throw DuplicateName("optimizer name already registered: " + name);
    }
    factories_[name] = std::move(factory);
    return OptimizerHandle{name};
}

OptimizerHandle OptimizerRegistry::register_step(const std::string& name, LambdaOptimizer::StepFn step) {
    return register_factory(name, [step = std::move(step)](OptimizerContext ctx) {
        return std::make_unique<LambdaOptimizer>(std::move(ctx), step);
    });
}

void OptimizerRegistry::unregister(const std::string& name) {
    std::lock_guard lock(mutex_);
    factories_.erase(name);
}

std::unique_ptr<Optimizer> OptimizerRegistry::make(const std::string& name, OptimizerContext ctx) const {
    OptimizerFactory factory;
    {
        std::lock_guard lock(mutex_);
        auto it = factories_.find(name);
        if (it == factories_.end()) {
            std::string known;
            for (const auto& [key, value] : factories_) {
                if (!known.empty()) known += ", ";
                known += key;
            }
            throw ConfigError("unknown optimizer '" + name + "' (registered: " + known + ")");
        }
        factory = it->second;
    }
    return factory(std::move(ctx));
}

bool OptimizerRegistry::contains(const std::string& name) const {
    std::lock_guard lock(mutex_);
    return factories_.count(name) != 0;
}

std::vector<std::string> OptimizerRegistry::names() const {
    std::lock_guard lock(mutex_);
    std::vector<std::string> out;
    out.reserve(factories_.size());
    for (const auto& [key, value] : factories_) out.push_back(key);
    return out;
}

OptimizerHandle register_optimizer(const std::string& name, LambdaOptimizer::StepFn step) {
    return OptimizerRegistry::instance().register_step(name, std::move(step));
}

} // namespace promptforge
