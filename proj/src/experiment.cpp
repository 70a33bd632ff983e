#include "promptforge/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "promptforge/csv.hpp"
#include "promptforge/errors.hpp"
#include "promptforge/rng.hpp"
#include "promptforge/toml.hpp"

namespace promptforge {

namespace fs = std::filesystem;
using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

std::pair<Dataset, Dataset> load_dataset_csv(const std::string& path, const std::string& x_column,
                                             const std::string& y_column, const SplitSpec& split) {
    csv::File file = csv::read_file(path);
    if (file.header.empty()) throw EmptyFile("CSV file has no header row: " + path);

    auto column_index = [&](const std::string& name) -> std::size_t {
        auto it = std::find(file.header.begin(), file.header.end(), name);
        if (it == file.header.end()) {
            throw MissingColumn("column '" + name + "' not found in " + path);
        }
        return static_cast<std::size_t>(it - file.header.begin());
    };

    std::size_t xi = column_index(x_column);
    bool has_y = !y_column.empty();
    std::size_t yi = has_y ? column_index(y_column) : 0;

    std::vector<DatasetRow> rows;
    rows.reserve(file.rows.size());
    for (const auto& raw : file.rows) {
        if (raw.size() == 1 && raw[0].empty()) continue; // blank line
        DatasetRow row;
        row.x = xi < raw.size() ? raw[xi] : "";
        if (has_y) row.y = yi < raw.size() ? raw[yi] : "";
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw EmptyFile("CSV file has no data rows: " + path);

    Rng rng(derive_seed(split.seed, "split"));
    rng.shuffle(rows);

    std::size_t dev_size = std::min(split.n_dev, rows.size());
    std::size_t test_size = std::min(split.n_test, rows.size() - dev_size);
    if (dev_size < split.n_dev || test_size < split.n_test) {
        std::fprintf(stderr, "[promptforge] %s has %zu rows; truncating split to dev=%zu test=%zu\n",
                     path.c_str(), rows.size(), dev_size, test_size);
    }

    Dataset dev;
    dev.x_column = x_column;
    dev.y_column = y_column;
    dev.split = Split::dev;
    dev.rows.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(dev_size));

    Dataset test;
    test.x_column = x_column;
    test.y_column = y_column;
    test.split = Split::test;
    test.rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(dev_size),
                     rows.begin() + static_cast<std::ptrdiff_t>(dev_size + test_size));
    return {std::move(dev), std::move(test)};
}

// ---------------------------------------------------------------------------
// ExperimentConfig
// ---------------------------------------------------------------------------

namespace {

std::string get_string(const toml::Table& t, const std::string& key, std::string fallback) {
    auto it = t.find(key);
    if (it == t.end()) return fallback;
    if (it->second.kind != toml::Value::Kind::string) throw ConfigError(key + ": expected a string");
    return it->second.str;
}

std::int64_t get_int(const toml::Table& t, const std::string& key, std::int64_t fallback) {
    auto it = t.find(key);
    if (it == t.end()) return fallback;
    if (it->second.kind != toml::Value::Kind::integer) throw ConfigError(key + ": expected an integer");
    return it->second.integer;
}

double get_float(const toml::Table& t, const std::string& key, double fallback) {
    auto it = t.find(key);
    if (it == t.end()) return fallback;
    if (it->second.kind == toml::Value::Kind::integer) return static_cast<double>(it->second.integer);
    if (it->second.kind != toml::Value::Kind::floating) throw ConfigError(key + ": expected a number");
    return it->second.floating;
}

bool get_bool(const toml::Table& t, const std::string& key, bool fallback) {
    auto it = t.find(key);
    if (it == t.end()) return fallback;
    if (it->second.kind != toml::Value::Kind::boolean) throw ConfigError(key + ": expected a boolean");
    return it->second.boolean;
}

std::vector<std::string> get_array(const toml::Table& t, const std::string& key,
                                   std::vector<std::string> fallback) {
    auto it = t.find(key);
    if (it == t.end()) return fallback;
    if (it->second.kind != toml::Value::Kind::string_array) throw ConfigError(key + ": expected a string array");
    return it->second.array;
}

const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys = {
        "optimizer", "task_description", "api_url", "model_id", "meta_model_id", "task_kind", "n_steps",
        "token_limit", "population_size", "subsample_mode", "subsample_size", "extraction_kind",
        "begin_marker", "end_marker", "labels", "x_column", "y_column", "seed", "initial_prompts",
        "output_dir", "trace_format", "api_key_env", "template_dir", "n_dev", "n_test",
        "max_eval_candidates", "opro_top_k", "opro_num_new", "meta_temperature", "capo_max_exemplars",
        "capo_check_fs_accuracy", "capo_elimination_margin", "capo_length_penalty_gamma",
        "capo_max_tokens_norm", "capo_racing_blocks"};
    return keys;
}

} // namespace

ExperimentConfig ExperimentConfig::from_toml_string(const std::string& text, const std::string& origin) {
    toml::Table t = toml::parse(text, origin);
    for (const auto& [key, value] : t) {
        const auto& known = known_config_keys();
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ConfigError(origin + ": unknown config key '" + key + "'");
        }
    }

    ExperimentConfig c;
    c.optimizer = get_string(t, "optimizer", c.optimizer);
    c.task_description = get_string(t, "task_description", c.task_description);
    c.api_url = get_string(t, "api_url", c.api_url);
    c.model_id = get_string(t, "model_id", c.model_id);
    c.meta_model_id = get_string(t, "meta_model_id", c.meta_model_id);
    c.task_kind = get_string(t, "task_kind", c.task_kind);
    c.n_steps = static_cast<int>(get_int(t, "n_steps", c.n_steps));
    c.token_limit = get_int(t, "token_limit", c.token_limit);
    c.population_size = static_cast<std::size_t>(get_int(t, "population_size", static_cast<std::int64_t>(c.population_size)));
    c.subsample_mode = get_string(t, "subsample_mode", c.subsample_mode);
    c.subsample_size = static_cast<std::size_t>(get_int(t, "subsample_size", static_cast<std::int64_t>(c.subsample_size)));
    c.extraction_kind = get_string(t, "extraction_kind", c.extraction_kind);
    c.begin_marker = get_string(t, "begin_marker", c.begin_marker);
    c.end_marker = get_string(t, "end_marker", c.end_marker);
    c.labels = get_array(t, "labels", c.labels);
    c.x_column = get_string(t, "x_column", c.x_column);
    c.y_column = get_string(t, "y_column", c.y_column);
    c.seed = static_cast<std::uint64_t>(get_int(t, "seed", static_cast<std::int64_t>(c.seed)));
    c.initial_prompts = get_array(t, "initial_prompts", c.initial_prompts);
    c.output_dir = get_string(t, "output_dir", c.output_dir);
    c.trace_format = get_string(t, "trace_format", c.trace_format);
    c.api_key_env = get_string(t, "api_key_env", c.api_key_env);
    c.template_dir = get_string(t, "template_dir", c.template_dir);
    c.n_dev = static_cast<std::size_t>(get_int(t, "n_dev", static_cast<std::int64_t>(c.n_dev)));
    c.n_test = static_cast<std::size_t>(get_int(t, "n_test", static_cast<std::int64_t>(c.n_test)));
    c.max_eval_candidates =
        static_cast<std::size_t>(get_int(t, "max_eval_candidates", static_cast<std::int64_t>(c.max_eval_candidates)));
    c.opro_top_k = static_cast<std::size_t>(get_int(t, "opro_top_k", static_cast<std::int64_t>(c.opro_top_k)));
    c.opro_num_new = static_cast<std::size_t>(get_int(t, "opro_num_new", static_cast<std::int64_t>(c.opro_num_new)));
    c.meta_temperature = get_float(t, "meta_temperature", c.meta_temperature);
    c.capo_max_exemplars =
        static_cast<std::size_t>(get_int(t, "capo_max_exemplars", static_cast<std::int64_t>(c.capo_max_exemplars)));
    c.capo_check_fs_accuracy = get_bool(t, "capo_check_fs_accuracy", c.capo_check_fs_accuracy);
    c.capo_elimination_margin = get_float(t, "capo_elimination_margin", c.capo_elimination_margin);
    c.capo_length_penalty_gamma = get_float(t, "capo_length_penalty_gamma", c.capo_length_penalty_gamma);
    c.capo_max_tokens_norm = get_float(t, "capo_max_tokens_norm", c.capo_max_tokens_norm);
    c.capo_racing_blocks =
        static_cast<std::size_t>(get_int(t, "capo_racing_blocks", static_cast<std::int64_t>(c.capo_racing_blocks)));
    return c;
}

ExperimentConfig ExperimentConfig::from_toml_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config file: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return from_toml_string(text, path);
}

std::string ExperimentConfig::to_toml_string() const {
    toml::Table t;
    auto put_str = [&](const char* key, const std::string& value) {
        toml::Value v;
        v.kind = toml::Value::Kind::string;
        v.str = value;
        t[key] = std::move(v);
    };
    auto put_int = [&](const char* key, std::int64_t value) {
        toml::Value v;
        v.kind = toml::Value::Kind::integer;
        v.integer = value;
        t[key] = std::move(v);
    };
    auto put_float = [&](const char* key, double value) {
        toml::Value v;
        v.kind = toml::Value::Kind::floating;
        v.floating = value;
        t[key] = std::move(v);
    };
    auto put_bool = [&](const char* key, bool value) {
        toml::Value v;
        v.kind = toml::Value::Kind::boolean;
        v.boolean = value;
        t[key] = std::move(v);
    };
    auto put_array = [&](const char* key, const std::vector<std::string>& value) {
        toml::Value v;
        v.kind = toml::Value::Kind::string_array;
        v.array = value;
        t[key] = std::move(v);
    };

    put_str("optimizer", optimizer);
    put_str("task_description", task_description);
    put_str("api_url", api_url);
    put_str("model_id", model_id);
    if (!meta_model_id.empty()) put_str("meta_model_id", meta_model_id);
    put_str("task_kind", task_kind);
    put_int("n_steps", n_steps);
    put_int("token_limit", token_limit);
    put_int("population_size", static_cast<std::int64_t>(population_size));
    put_str("subsample_mode", subsample_mode);
    put_int("subsample_size", static_cast<std::int64_t>(subsample_size));
    put_str("extraction_kind", extraction_kind);
    put_str("begin_marker", begin_marker);
    put_str("end_marker", end_marker);
    if (!labels.empty()) put_array("labels", labels);
    put_str("x_column", x_column);
    put_str("y_column", y_column);
    put_int("seed", static_cast<std::int64_t>(seed));
    if (!initial_prompts.empty()) put_array("initial_prompts", initial_prompts);
    put_str("output_dir", output_dir);
    put_str("trace_format", trace_format);
    put_str("api_key_env", api_key_env);
    if (!template_dir.empty()) put_str("template_dir", template_dir);
    put_int("n_dev", static_cast<std::int64_t>(n_dev));
    put_int("n_test", static_cast<std::int64_t>(n_test));
    put_int("max_eval_candidates", static_cast<std::int64_t>(max_eval_candidates));
    put_int("opro_top_k", static_cast<std::int64_t>(opro_top_k));
    put_int("opro_num_new", static_cast<std::int64_t>(opro_num_new));
    put_float("meta_temperature", meta_temperature);
    put_int("capo_max_exemplars", static_cast<std::int64_t>(capo_max_exemplars));
    put_bool("capo_check_fs_accuracy", capo_check_fs_accuracy);
    put_float("capo_elimination_margin", capo_elimination_margin);
    put_float("capo_length_penalty_gamma", capo_length_penalty_gamma);
    put_float("capo_max_tokens_norm", capo_max_tokens_norm);
    put_int("capo_racing_blocks", static_cast<std::int64_t>(capo_racing_blocks));
    return toml::dump(t);
}

void ExperimentConfig::validate(bool require_endpoint) const {
    std::vector<std::string> problems;
    auto need = [&](bool ok, const std::string& message) {
        if (!ok) problems.push_back(message);
    };

    need(!optimizer.empty(), "optimizer: required");
    if (!optimizer.empty() && !OptimizerRegistry::instance().contains(optimizer)) {
        std::string known;
        for (const auto& name : OptimizerRegistry::instance().names()) {
            if (!known.empty()) known += ", ";
            known += name;
        }
        problems.push_back("optimizer: unknown '" + optimizer + "' (registered: " + known + ")");
    }
    need(!task_description.empty(), "task_description: required");
    if (require_endpoint) {
        need(!api_url.empty(), "api_url: required");
        need(!model_id.empty(), "model_id: required");
    }
    need(n_steps >= 1, "n_steps: must be >= 1");
    need(token_limit >= 0, "token_limit: must be >= 0");
    need(population_size >= 1, "population_size: must be >= 1");
    need(subsample_mode == "random" || subsample_mode == "block" || subsample_mode == "full",
         "subsample_mode: must be random, block or full");
    need(subsample_size >= 1, "subsample_size: must be >= 1");
    need(extraction_kind == "first_occurrence" || extraction_kind == "marker_based",
         "extraction_kind: must be first_occurrence or marker_based");
    if (extraction_kind == "first_occurrence") {
        need(!labels.empty(), "labels: required for first_occurrence extraction");
        std::vector<std::string> unique = labels;
        std::sort(unique.begin(), unique.end());
        need(std::adjacent_find(unique.begin(), unique.end()) == unique.end(), "labels: must be distinct");
    }
    need(begin_marker != end_marker, "begin_marker/end_marker: must differ");
    need(task_kind == "classification" || task_kind == "judge",
         "task_kind: must be classification or judge");
    need(trace_format == "jsonl" || trace_format == "csv", "trace_format: must be jsonl or csv");
    need(!x_column.empty(), "x_column: required");
    need(max_eval_candidates >= 1, "max_eval_candidates: must be >= 1");
    for (std::size_t i = 0; i < initial_prompts.size(); ++i) {
        if (trim(initial_prompts[i]).empty()) {
            problems.push_back("initial_prompts[" + std::to_string(i) + "]: empty after trimming");
        }
    }

    if (!problems.empty()) {
        std::string joined;
        for (const auto& problem : problems) {
            if (!joined.empty()) joined += "; ";
            joined += problem;
        }
        throw ConfigError(joined);
    }
}

// ---------------------------------------------------------------------------
// Runners
// ---------------------------------------------------------------------------

namespace {

std::shared_ptr<LlmBackend> build_backend(const ExperimentConfig& config, const std::string& model,
                                          const RuntimeHooks& hooks) {
    BackendConfig bc;
    bc.api_url = config.api_url;
    bc.model_id = model;
    if (const char* key = std::getenv(config.api_key_env.c_str())) bc.api_key = key;
    if (hooks.make_backend) return hooks.make_backend(bc);
    return std::make_shared<HttpBackend>(bc);
}

TaskSpec build_task(const ExperimentConfig& config, Dataset dataset,
                    const std::shared_ptr<LlmBackend>& judge_backend) {
    TaskSpec task;
    task.kind = config.task_kind == "judge" ? TaskKind::judge : TaskKind::classification;
    task.description = config.task_description;
    task.extraction.kind = config.extraction_kind == "first_occurrence" ? ExtractionKind::first_occurrence
                                                                        : ExtractionKind::marker_based;
    task.extraction.label_alphabet = config.labels;
    task.extraction.begin_marker = config.begin_marker;
    task.extraction.end_marker = config.end_marker;
    task.subsampling.mode = config.subsample_mode == "random"
                                ? SubsampleMode::random
                                : (config.subsample_mode == "full" ? SubsampleMode::full : SubsampleMode::block);
    task.subsampling.size = config.subsample_size;
    task.subsampling.seed = derive_seed(config.seed, "subsample");
    if (task.subsampling.mode != SubsampleMode::full && task.subsampling.size > dataset.rows.size()) {
        std::fprintf(stderr, "[promptforge] subsample size %zu exceeds dataset size %zu; clamping\n",
                     task.subsampling.size, dataset.rows.size());
        task.subsampling.size = dataset.rows.size();
    }
    if (task.kind == TaskKind::judge) task.judge_backend = judge_backend;
    task.dataset = std::move(dataset);
    return task;
}

OptimizerSettings build_settings(const ExperimentConfig& config) {
    OptimizerSettings settings;
    settings.population_size = config.population_size;
    settings.meta_temperature = config.meta_temperature;
    settings.opro_top_k = config.opro_top_k;
    settings.opro_num_new = config.opro_num_new;
    settings.capo_max_exemplars = config.capo_max_exemplars;
    settings.capo_check_fs_accuracy = config.capo_check_fs_accuracy;
    settings.capo_elimination_margin = config.capo_elimination_margin;
    settings.capo_length_penalty_gamma = config.capo_length_penalty_gamma;
    settings.capo_max_tokens_norm = config.capo_max_tokens_norm;
    settings.capo_racing_blocks = config.capo_racing_blocks;
    return settings;
}

std::string compute_run_id(const ExperimentConfig& config) {
    std::string material = std::to_string(config.seed) + "|" + config.optimizer + "|" + config.model_id + "|" +
                           config.meta_model_id + "|" + config.task_description + "|" +
                           std::to_string(config.n_steps);
    return "run-" + hex_digest(material);
}

std::string now_rfc3339() {
    std::time_t now = std::time(nullptr);
    std::tm utc{};
    gmtime_r(&now, &utc);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
    return buf;
}

json config_to_json(const ExperimentConfig& config) {
    toml::Table t = toml::parse(config.to_toml_string(), "<config>");
    json out = json::object();
    for (const auto& [key, value] : t) {
        switch (value.kind) {
        case toml::Value::Kind::string: out[key] = value.str; break;
        case toml::Value::Kind::integer: out[key] = value.integer; break;
        case toml::Value::Kind::floating: out[key] = value.floating; break;
        case toml::Value::Kind::boolean: out[key] = value.boolean; break;
        case toml::Value::Kind::string_array: out[key] = value.array; break;
        }
    }
    return out;
}

} // namespace

OptimizationResult run_optimization(const ExperimentConfig& config, const Dataset& dev,
                                    const RuntimeHooks& hooks) {
    config.validate(/*require_endpoint=*/!hooks.make_backend);

    std::error_code ec;
    fs::create_directories(config.output_dir, ec);
    if (ec) throw IoError("cannot create output directory " + config.output_dir + ": " + ec.message());

    auto downstream = build_backend(config, config.model_id, hooks);
    auto meta = (config.meta_model_id.empty() || config.meta_model_id == config.model_id)
                    ? downstream
                    : build_backend(config, config.meta_model_id, hooks);

    TemplateSet templates =
        config.template_dir.empty() ? TemplateSet::defaults() : TemplateSet::load_dir(config.template_dir);

    OptimizerContext ctx;
    ctx.task = build_task(config, dev, downstream);
    ctx.downstream = downstream;
    ctx.meta = meta;
    ctx.settings = build_settings(config);
    ctx.templates = templates;
    ctx.factory = std::make_shared<CandidateFactory>();
    ctx.cache = std::make_shared<EvalCache>();
    ctx.token_limit = config.token_limit;
    ctx.seed = config.seed;
    ctx.run_id = compute_run_id(config);

    // seed the initial population
    std::vector<PromptCandidate> initial;
    if (!config.initial_prompts.empty()) {
        for (const auto& prompt : config.initial_prompts) {
            initial.push_back(ctx.factory->create(prompt, {}, {}, 0));
        }
    } else {
        TokenBudget pre_budget{config.token_limit, {downstream, meta}};
        if (pre_budget.exhausted()) {
            throw BudgetExhausted("token budget exhausted before initial prompt creation");
        }
        PromptSeedPayload payload;
        payload.text = config.task_description;
        initial = create_initial_prompts(*ctx.factory, PromptSource::task_description, payload,
                                         config.population_size, *meta, templates, config.meta_temperature);
    }

    const std::string trace_path =
        (fs::path(config.output_dir) / (config.trace_format == "csv" ? "trace.csv" : "trace.jsonl")).string();
    std::vector<Callback> callbacks;
    callbacks.push_back(make_token_count_callback(config.token_limit));
    callbacks.push_back(make_file_output_callback(
        trace_path, config.trace_format == "csv" ? TraceFormat::csv : TraceFormat::jsonl));

    auto optimizer = OptimizerRegistry::instance().make(config.optimizer, std::move(ctx));
    optimizer->set_initial_population(initial);
    optimizer->optimize(config.n_steps, callbacks);

    OptimizationResult result;
    result.ranked = optimizer->ranked_population();
    result.trace_path = trace_path;
    result.run_id = optimizer->state().run_id;
    result.tokens_spent = optimizer->state().budget.spent();
    result.steps_completed = optimizer->state().steps_completed;
    result.budget_exhausted = optimizer->state().budget.exhausted();
    return result;
}

std::vector<EvaluationRow> run_evaluation(const std::vector<PromptCandidate>& candidates, const Dataset& test,
                                          const ExperimentConfig& config, const RuntimeHooks& hooks) {
    config.validate(/*require_endpoint=*/!hooks.make_backend);

    auto downstream = build_backend(config, config.model_id, hooks);
    TaskSpec task = build_task(config, test, downstream);
    task.subsampling.mode = SubsampleMode::full; // always the full held-out split

    EvalCache cache; // fresh: test records never mix with dev records
    SubsamplePlan plan = subsample(task.subsampling, task.dataset.rows.size(), 0);

    std::vector<EvaluationRow> rows;
    rows.reserve(candidates.size());
    for (const auto& candidate : candidates) {
        EvaluationRecord record = evaluate_on(candidate, task, *downstream, plan, cache);
        rows.push_back(EvaluationRow{candidate, record.score.value});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const EvaluationRow& a, const EvaluationRow& b) {
        if (a.test_score != b.test_score) return a.test_score > b.test_score;
        return a.candidate.id < b.candidate.id;
    });
    return rows;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::string ExperimentReport::to_json_string() const {
    json doc;
    doc["run_id"] = run_id;
    doc["config"] = config_to_json(config);
    if (best_dev) {
        json best;
        best["candidate_id"] = best_dev->candidate.id;
        best["instruction"] = best_dev->candidate.instruction;
        best["rendered"] = render_prompt(best_dev->candidate);
        best["n_exemplars"] = best_dev->candidate.exemplars.size();
        if (best_dev->score) {
            best["dev_score"] = best_dev->score->value;
        } else {
            best["dev_score"] = nullptr;
        }
        doc["best"] = std::move(best);
    } else {
        doc["best"] = nullptr;
    }
    json ranking = json::array();
    for (const auto& member : dev_ranking) {
        json row;
        row["candidate_id"] = member.candidate.id;
        row["instruction"] = member.candidate.instruction;
        if (member.score) {
            row["dev_score"] = member.score->value;
        } else {
            row["dev_score"] = nullptr;
        }
        row["subsample_key"] = member.basis_key;
        ranking.push_back(std::move(row));
    }
    doc["dev_ranking"] = std::move(ranking);
    json tests = json::array();
    for (const auto& row : test_rows) {
        json r;
        r["candidate_id"] = row.candidate.id;
        r["instruction"] = row.candidate.instruction;
        r["test_score"] = row.test_score;
        tests.push_back(std::move(r));
    }
    doc["test_scores"] = std::move(tests);
    doc["tokens_spent"] = {{"input_tokens", tokens_spent.input_tokens},
                           {"output_tokens", tokens_spent.output_tokens},
                           {"total", tokens_spent.total()}};
    doc["steps_completed"] = steps_completed;
    doc["budget_exhausted"] = budget_exhausted;
    doc["trace_path"] = trace_path;
    doc["timestamps"] = {{"started_at", started_at}, {"finished_at", finished_at}};
    return doc.dump(2) + "\n";
}

std::string ExperimentReport::to_text() const {
    std::string out;
    out += "run:             " + run_id + "\n";
    out += "optimizer:       " + config.optimizer + "\n";
    out += "steps completed: " + std::to_string(steps_completed) + "\n";
    out += "tokens spent:    " + std::to_string(tokens_spent.total()) + " (in " +
           std::to_string(tokens_spent.input_tokens) + ", out " + std::to_string(tokens_spent.output_tokens) +
           ")\n";
    if (budget_exhausted) out += "budget:          exhausted\n";
    if (best_dev) {
        out += "\nbest prompt (dev";
        if (best_dev->score) {
            char buf[32];
            std::snprintf(buf, sizeof buf, " %.4f", best_dev->score->value);
            out += buf;
        }
        out += "):\n" + render_prompt(best_dev->candidate) + "\n";
    }
    if (!test_rows.empty()) {
        out += "\ntest scores:\n";
        for (const auto& row : test_rows) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "  %.4f", row.test_score);
            out += std::string(buf) + "  #" + std::to_string(row.candidate.id) + "  " +
                   row.candidate.instruction.substr(0, 80) + "\n";
        }
    }
    out += "\ntrace: " + trace_path + "\n";
    return out;
}

ExperimentReport run_experiment(const Dataset& dev, const Dataset& test, const ExperimentConfig& config,
                                const RuntimeHooks& hooks) {
    ExperimentReport report;
    report.config = config;
    report.started_at = now_rfc3339();

    // one backend instance per model id across both phases, so the report's
    // token count is the cumulative usage of a single ledger
    std::function<std::shared_ptr<LlmBackend>(const BackendConfig&)> base_factory = hooks.make_backend;
    if (!base_factory) {
        base_factory = [](const BackendConfig& bc) {
            return std::static_pointer_cast<LlmBackend>(std::make_shared<HttpBackend>(bc));
        };
    }
    auto built = std::make_shared<std::map<std::string, std::shared_ptr<LlmBackend>>>();
    RuntimeHooks shared_hooks;
    shared_hooks.make_backend = [built, base_factory](const BackendConfig& bc) {
        auto it = built->find(bc.model_id);
        if (it != built->end()) return it->second;
        auto backend = base_factory(bc);
        built->emplace(bc.model_id, backend);
        return backend;
    };

    OptimizationResult optimization = run_optimization(config, dev, shared_hooks);
    report.run_id = optimization.run_id;
    report.dev_ranking = optimization.ranked;
    report.trace_path = optimization.trace_path;
    report.steps_completed = optimization.steps_completed;
    report.budget_exhausted = optimization.budget_exhausted;
    if (!optimization.ranked.empty()) report.best_dev = optimization.ranked.front();

    // the prompts sent to the held-out split are picked by dev score alone
    std::vector<PromptCandidate> selected;
    for (const auto& member : optimization.ranked) {
        if (selected.size() >= config.max_eval_candidates) break;
        selected.push_back(member.candidate);
    }
    report.test_rows = run_evaluation(selected, test, config, shared_hooks);

    TokenBudget ledger;
    ledger.limit_total_tokens = config.token_limit;
    for (const auto& [model, backend] : *built) ledger.ledgers.push_back(backend);
    report.tokens_spent = ledger.spent();
    report.finished_at = now_rfc3339();

    fs::path dir(config.output_dir);
    report.report_json_path = (dir / "report.json").string();
    report.report_text_path = (dir / "report.txt").string();
    {
        std::ofstream out(report.report_json_path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + report.report_json_path);
        out << report.to_json_string();
    }
    {
        std::ofstream out(report.report_text_path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + report.report_text_path);
        out << report.to_text();
    }
    return report;
}

ExperimentReport run_experiment(const std::string& csv_path, const ExperimentConfig& config,
                                const RuntimeHooks& hooks) {
    SplitSpec split;
    split.n_dev = config.n_dev;
    split.n_test = config.n_test;
    split.seed = config.seed;
    auto [dev, test] = load_dataset_csv(csv_path, config.x_column, config.y_column, split);
    return run_experiment(dev, test, config, hooks);
}

} // namespace promptforge
