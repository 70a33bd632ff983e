#include "promptforge/support.hpp"

#include <algorithm>
#include <fstream>
#include <memory>

#include <nlohmann/json.hpp>

#include "promptforge/csv.hpp"
#include "promptforge/errors.hpp"
#include "promptforge/rng.hpp"

namespace promptforge {

using json = nlohmann::json;

Callback make_token_count_callback(std::int64_t limit) {
    return [limit](const CallbackEvent& event) {
        return event.state.budget.spent().total() >= limit ? CallbackVerdict::terminate
                                                           : CallbackVerdict::continue_run;
    };
}

namespace {

struct TraceWriter {
    std::ofstream out;
    TraceFormat format;
};

constexpr const char* kCsvHeader =
    "run_id,step,candidate_id,rendered_digest,instruction,n_exemplars,score,subsample_key,tokens_total";

} // namespace

Callback make_file_output_callback(const std::string& path, TraceFormat format) {
    auto writer = std::make_shared<TraceWriter>();
    writer->format = format;
    writer->out.open(path, std::ios::binary | std::ios::trunc);
    if (!writer->out) throw IoError("cannot open trace file for writing: " + path);
    if (format == TraceFormat::csv) {
        writer->out << kCsvHeader << "\n";
        writer->out.flush();
    }

    return [writer, path](const CallbackEvent& event) {
        if (event.kind != CallbackKind::on_step_end) return CallbackVerdict::continue_run;

        std::vector<const ScoredMember*> members;
        members.reserve(event.state.population.size());
        for (const auto& member : event.state.population) members.push_back(&member);
        std::sort(members.begin(), members.end(), [](const ScoredMember* a, const ScoredMember* b) {
            return a->candidate.id < b->candidate.id;
        });

        const std::int64_t tokens_total = event.state.budget.spent().total();
        for (const ScoredMember* member : members) {
            if (writer->format == TraceFormat::jsonl) {
                json row;
                row["run_id"] = event.state.run_id;
                row["step"] = event.state.step;
                row["candidate_id"] = member->candidate.id;
                row["rendered_digest"] = candidate_digest(member->candidate);
                row["instruction"] = member->candidate.instruction;
                row["n_exemplars"] = member->candidate.exemplars.size();
                if (member->score) {
                    row["score"] = member->score->value;
                } else {
                    row["score"] = nullptr;
                }
                row["subsample_key"] = member->basis_key;
                row["tokens_total"] = tokens_total;
                writer->out << row.dump() << "\n";
            } else {
                std::string score = member->score ? json(member->score->value).dump() : "";
                writer->out << csv::quote_field(event.state.run_id) << ',' << event.state.step << ','
                            << member->candidate.id << ',' << candidate_digest(member->candidate) << ','
                            << csv::quote_field(member->candidate.instruction) << ','
                            << member->candidate.exemplars.size() << ',' << score << ','
                            << csv::quote_field(member->basis_key) << ',' << tokens_total << "\n";
            }
        }
        writer->out.flush();
        if (!writer->out) throw IoError("trace write failed: " + path);
        return CallbackVerdict::continue_run;
    };
}

PromptCandidate select_exemplars_random(CandidateFactory& factory, const std::string& instruction,
                                        const Dataset& dataset, std::size_t k, std::uint64_t seed,
                                        const ExtractionSpec& extraction) {
    if (k > dataset.rows.size()) {
        throw KTooLarge("requested " + std::to_string(k) + " exemplars from " +
                        std::to_string(dataset.rows.size()) + " rows");
    }
    Rng rng(derive_seed(seed, "exemplars"));
    auto picks = rng.sample_distinct(dataset.rows.size(), k);
    std::vector<FewShotExemplar> exemplars;
    exemplars.reserve(k);
    for (std::size_t idx : picks) {
        const auto& row = dataset.rows[idx];
        exemplars.push_back(
            make_exemplar(row.x, row.y.value_or(""), extraction.begin_marker, extraction.end_marker));
    }
    return factory.create(instruction, std::move(exemplars));
}

PromptCandidate select_exemplars_random_search(CandidateFactory& factory, const std::string& instruction,
                                               const Dataset& dataset, std::size_t k, std::size_t n_trials,
                                               const TaskSpec& task, LlmBackend& backend, std::uint64_t seed) {
    if (n_trials < 1) throw Error("random search needs at least one trial");

    SubsamplePlan shared = subsample(task.subsampling, task.dataset.rows.size(), 0);
    EvalCache cache;

    std::optional<PromptCandidate> best;
    double best_score = 0.0;
    for (std::size_t trial = 0; trial < n_trials; ++trial) {
        // trial 0 replays select_exemplars_random(seed) exactly
        std::uint64_t trial_seed = trial == 0 ? seed : derive_seed(seed, "trial-" + std::to_string(trial));
        PromptCandidate candidate =
            select_exemplars_random(factory, instruction, dataset, k, trial_seed, task.extraction);
        EvaluationRecord record = evaluate_on(candidate, task, backend, shared, cache);
        if (!best || record.score.value > best_score) { // ties keep the earlier trial
            best = std::move(candidate);
            best_score = record.score.value;
        }
    }
    return *best;
}

std::vector<PromptCandidate> create_initial_prompts(CandidateFactory& factory, PromptSource source,
                                                    const PromptSeedPayload& payload, std::size_t n,
                                                    LlmBackend& meta_backend, const TemplateSet& templates,
                                                    double temperature) {
    std::string text;
    switch (source) {
    case PromptSource::task_description:
        text = render_template(templates.init_from_task_description.text, {{"task_description", payload.text}});
        break;
    case PromptSource::base_prompt:
        text = render_template(templates.init_from_base_prompt.text, {{"base_prompt", payload.text}});
        break;
    case PromptSource::samples: {
        std::string examples;
        for (const auto& [x, y] : payload.samples) {
            examples += "Input: " + x + "\nOutput: " + y + "\n";
        }
        text = render_template(templates.init_from_samples.text, {{"examples", examples}});
        break;
    }
    }

    std::vector<ChatRequest> requests;
    requests.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        ChatRequest request;
        request.user_text = text;
        request.temperature = temperature;
        request.max_output_tokens = 512;
        requests.push_back(std::move(request));
    }
    std::vector<ChatResponse> responses = meta_backend.complete_batch(requests);

    std::vector<PromptCandidate> candidates;
    for (const auto& response : responses) {
        auto parsed = extract_marker(response.text, kGeneratedPromptBegin, kGeneratedPromptEnd);
        if (!parsed || trim(*parsed).empty()) continue;
        candidates.push_back(factory.create(*parsed, {}, {}, 0));
    }
    if (candidates.empty()) {
        throw AllGenerationsFailed("no seeding generation contained a parseable <prompt> block");
    }
    return candidates;
}

} // namespace promptforge
