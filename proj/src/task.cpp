#include "promptforge/task.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <numeric>

#include "promptforge/errors.hpp"
#include "promptforge/rng.hpp"

namespace promptforge {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool labels_equal(const std::string& a, const std::string& b) {
    return lower(trim(a)) == lower(trim(b));
}

} // namespace

SubsamplePlan subsample(const SubsampleStrategy& strategy, std::size_t n, std::uint64_t step) {
    if (strategy.mode != SubsampleMode::full && strategy.size == 0) {
        throw InvalidStrategy("subsample size must be at least 1");
    }
    SubsamplePlan plan;
    switch (strategy.mode) {
    case SubsampleMode::full: {
        plan.indices.resize(n);
        std::iota(plan.indices.begin(), plan.indices.end(), std::size_t{0});
        plan.key = "full:n=" + std::to_string(n);
        return plan;
    }
    case SubsampleMode::block: {
        if (strategy.size > n) {
            throw InvalidStrategy("block size " + std::to_string(strategy.size) + " exceeds dataset length " +
                                  std::to_string(n));
        }
        std::size_t n_blocks = (n + strategy.size - 1) / strategy.size;
        std::size_t b = static_cast<std::size_t>(step % n_blocks);
        std::size_t begin = strategy.size * b;
        std::size_t end = std::min(strategy.size * (b + 1), n);
        for (std::size_t i = begin; i < end; ++i) plan.indices.push_back(i);
        plan.key = "block:size=" + std::to_string(strategy.size) + ":b=" + std::to_string(b) +
                   ":n=" + std::to_string(n);
        return plan;
    }
    case SubsampleMode::random: {
        if (strategy.size > n) {
            throw InvalidStrategy("random sample size " + std::to_string(strategy.size) +
                                  " exceeds dataset length " + std::to_string(n));
        }
        Rng rng(derive_seed(strategy.seed, "subsample-step-" + std::to_string(step)));
        plan.indices = rng.sample_distinct(n, strategy.size);
        std::sort(plan.indices.begin(), plan.indices.end());
        std::string joined;
        for (auto i : plan.indices) {
            joined += std::to_string(i);
            joined += ',';
        }
        plan.key = "random:size=" + std::to_string(strategy.size) + ":seed=" + std::to_string(strategy.seed) +
                   ":step=" + std::to_string(step) + ":idx=" + hex_digest(joined);
        return plan;
    }
    }
    throw InvalidStrategy("unknown subsample mode");
}

// ---------------------------------------------------------------------------
// EvalCache
// ---------------------------------------------------------------------------

std::string EvalCache::key_of(const std::string& digest, const std::string& subsample_key) {
    return digest + "|" + subsample_key;
}

std::optional<EvaluationRecord> EvalCache::find(const std::string& digest, const std::string& subsample_key) const {
    std::lock_guard lock(mutex_);
    auto it = records_.find(key_of(digest, subsample_key));
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

void EvalCache::insert(const std::string& digest, const EvaluationRecord& record) {
    std::lock_guard lock(mutex_);
    records_.emplace(key_of(digest, record.subsample_key), record);
}

std::size_t EvalCache::size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

std::string datum_prompt(const PromptCandidate& candidate, const TaskSpec& task, const std::string& x) {
    // rendered prompt + blank line + datum block; the answer cue matches the
    // extraction kind and stays minimal (marker instructions belong to the
    // instruction text itself).
    std::string cue = task.extraction.kind == ExtractionKind::marker_based ? "Output:" : "Label:";
    std::string out = render_prompt(candidate);
    out += "\n\nInput: ";
    out += x;
    out += "\n";
    out += cue;
    return out;
}

ChatRequest build_judge_request(const std::string& output, const std::string& x, const std::string& description,
                                const std::optional<std::string>& reference) {
    std::string text = "You are grading the output of another model.\n\nTask description:\n" + description +
                       "\n\nInput:\n" + x + "\n\n";
    if (reference) {
        text += "Reference output:\n" + *reference + "\n\n";
    }
    text += "Model output:\n" + output +
            "\n\nRate the quality of the model output for this input on an integer scale from 0 to 10, "
            "where 0 is unusable and 10 is perfect. Answer with only the integer wrapped as <score>k</score>.";
    ChatRequest request;
    request.user_text = std::move(text);
    request.temperature = 0.0;
    request.max_output_tokens = 64;
    return request;
}

double parse_judge_reply(const std::string& reply) {
    auto content = extract_marker(reply, "<score>", "</score>");
    if (!content) {
        throw JudgeParseFailure("judge reply has no <score> markers: " + reply.substr(0, 120));
    }
    const std::string& digits = *content;
    if (digits.empty() || digits.size() > 2 ||
        !std::all_of(digits.begin(), digits.end(), [](unsigned char c) { return std::isdigit(c) != 0; })) {
        throw JudgeParseFailure("judge score is not an integer in 0..10: '" + digits + "'");
    }
    int k = std::stoi(digits);
    if (k < 0 || k > 10) {
        throw JudgeParseFailure("judge score out of range: " + digits);
    }
    return static_cast<double>(k) / 10.0;
}

double judge_score(const std::string& output, const std::string& x, const std::string& description,
                   LlmBackend& judge_backend, const std::optional<std::string>& reference) {
    ChatResponse reply = judge_backend.complete(build_judge_request(output, x, description, reference));
    return parse_judge_reply(reply.text);
}

EvaluationRecord evaluate(const PromptCandidate& candidate, const TaskSpec& task, LlmBackend& backend,
                          std::uint64_t step, EvalCache& cache) {
    SubsamplePlan plan = subsample(task.subsampling, task.dataset.rows.size(), step);
    return evaluate_on(candidate, task, backend, plan, cache);
}

EvaluationRecord evaluate_on(const PromptCandidate& candidate, const TaskSpec& task, LlmBackend& backend,
                             const SubsamplePlan& plan, EvalCache& cache) {
    const std::string digest = candidate_digest(candidate);

    if (auto hit = cache.find(digest, plan.key)) {
        EvaluationRecord record = *hit;
        record.usage_delta = TokenUsage{}; // a hit performs zero LLM calls
        record.candidate_id = candidate.id;
        return record;
    }

    std::vector<ChatRequest> requests;
    requests.reserve(plan.indices.size());
    for (std::size_t idx : plan.indices) {
        ChatRequest request;
        request.user_text = datum_prompt(candidate, task, task.dataset.rows[idx].x);
        request.temperature = task.eval_temperature;
        request.max_output_tokens = task.max_output_tokens;
        requests.push_back(std::move(request));
    }
    std::vector<ChatResponse> responses = backend.complete_batch(requests);

    TokenUsage usage_delta;
    for (const auto& response : responses) usage_delta += response.usage;

    EvaluationRecord record;
    record.candidate_id = candidate.id;
    record.subsample_key = plan.key;
    record.per_datum.reserve(plan.indices.size());

    for (std::size_t i = 0; i < plan.indices.size(); ++i) {
        DatumOutcome outcome;
        outcome.index = plan.indices[i];
        outcome.raw_response = responses[i].text;
        outcome.extracted = extract(task.extraction, outcome.raw_response);
        record.per_datum.push_back(std::move(outcome));
    }

    switch (task.kind) {
    case TaskKind::classification: {
        for (auto& outcome : record.per_datum) {
            const auto& y = task.dataset.rows[outcome.index].y;
            outcome.score = (outcome.extracted && y && labels_equal(*outcome.extracted, *y)) ? 1.0 : 0.0;
        }
        break;
    }
    case TaskKind::judge: {
        if (!task.judge_backend) throw Error("judge task has no judge backend");
        std::vector<ChatRequest> judge_requests;
        std::vector<std::size_t> judged; // positions in per_datum
        for (std::size_t i = 0; i < record.per_datum.size(); ++i) {
            auto& outcome = record.per_datum[i];
            if (!outcome.extracted) {
                outcome.score = 0.0;
                continue;
            }
            const auto& row = task.dataset.rows[outcome.index];
            judge_requests.push_back(build_judge_request(*outcome.extracted, row.x, task.description, row.y));
            judged.push_back(i);
        }
        std::vector<ChatResponse> judge_replies = task.judge_backend->complete_batch(judge_requests);
        for (std::size_t j = 0; j < judged.size(); ++j) {
            usage_delta += judge_replies[j].usage;
            try {
                record.per_datum[judged[j]].score = parse_judge_reply(judge_replies[j].text);
            } catch (const JudgeParseFailure& e) {
                std::fprintf(stderr, "[promptforge] judge parse failure, datum scored 0: %s\n", e.what());
                record.per_datum[judged[j]].score = 0.0;
            }
        }
        break;
    }
    case TaskKind::reward: {
        if (!task.reward_fn) throw Error("reward task has no reward function");
        for (auto& outcome : record.per_datum) {
            outcome.score = outcome.extracted ? task.reward_fn(*outcome.extracted) : 0.0;
        }
        break;
    }
    }

    std::vector<double> per_scores;
    per_scores.reserve(record.per_datum.size());
    for (const auto& outcome : record.per_datum) per_scores.push_back(outcome.score);

    double aggregate = 0.0;
    if (task.metric) {
        aggregate = task.metric(per_scores);
    } else if (!per_scores.empty()) {
        aggregate = std::accumulate(per_scores.begin(), per_scores.end(), 0.0) /
                    static_cast<double>(per_scores.size());
    }
    record.score = Score{aggregate, static_cast<int>(record.per_datum.size())};
    record.usage_delta = usage_delta;

    cache.insert(digest, record);
    return record;
}

} // namespace promptforge
