// Acceptance suite: one self-contained criterion per function, one PASS/FAIL
// line each, exit status = number of failed criteria.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "promptforge/experiment.hpp"
#include "promptforge/support.hpp"
#include "test_util.hpp"

using namespace promptforge;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CheckFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

#define EXPECT(cond)                                                                                         \
    do {                                                                                                     \
        if (!(cond)) throw CheckFailure("expectation failed: " #cond);                                       \
    } while (0)

double elapsed_seconds(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    EXPECT(static_cast<bool>(in));
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path fresh_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("promptforge_acceptance_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// 1. marker extraction against its independent oracle (the identity on
//    marker-free payloads) and the worked example
void criterion_extraction_oracle() {
    auto start = std::chrono::steady_clock::now();
    const std::string begin = "<final_answer>";
    const std::string end = "</final_answer>";
    Rng rng(20250808);
    int checked = 0;
    while (checked < 10'000) {
        std::string x;
        std::size_t len = rng.next_below(80);
        for (std::size_t j = 0; j < len; ++j) x += static_cast<char>(' ' + rng.next_below(94));
        if (x.find(begin) != std::string::npos || x.find(end) != std::string::npos) continue;
        auto got = extract_marker(begin + x + end, begin, end);
        EXPECT(got.has_value());
        EXPECT(*got == trim(x));
        checked++;
    }
    std::string worked = "To solve this problem, we need to calculate the total number of fish in the "
                         "fishbowls at all the tables. First, [...] Then, we add the 3 fish from the table "
                         "that has 3 fish: 62 fish + 3 fish = 65 fish. <final_answer> 65 </final_answer>";
    EXPECT(extract_marker(worked, begin, end) == "65");
    EXPECT(elapsed_seconds(start) < 5.0);
}

// 2. the evaluation cache collapses repeated work to exactly one batch per
//    distinct (candidate digest, subsample key) pair
void criterion_cache_economy() {
    const std::string name = "acceptance-cache-step";
    register_optimizer(name, [](Optimizer& o) { o.ensure_population_scored(o.current_plan()); });

    auto dataset = pftest::make_yes_no_dataset(12);
    ScriptedBackend::Options options;
    options.default_response = "<final_answer>yes</final_answer>";
    auto downstream = std::make_shared<ScriptedBackend>(options);
    auto task = pftest::make_classification_task(dataset, SubsampleMode::block, 4); // 3 blocks of 4
    auto ctx = pftest::make_context(task, downstream, downstream, 2);
    auto factory = ctx.factory;
    auto optimizer = OptimizerRegistry::instance().make(name, ctx);
    optimizer->set_initial_population(pftest::seed_candidates(*factory, {"alpha", "bravo"}));

    std::map<std::uint64_t, std::string> digest_by_id;
    for (const auto& member : optimizer->state().population) {
        digest_by_id[member.candidate.id] = candidate_digest(member.candidate);
    }

    optimizer->optimize(5); // blocks 0,1,2,0,1
    std::set<std::string> distinct;
    for (const auto& record : optimizer->state().history) {
        distinct.insert(digest_by_id.at(record.candidate_id) + "|" + record.subsample_key);
    }
    EXPECT(distinct.size() == 6); // 2 candidates x 3 blocks
    EXPECT(downstream->total_calls() == static_cast<std::int64_t>(distinct.size() * 4));

    // a second pass re-visits only cached keys: zero additional calls
    std::int64_t before = downstream->total_calls();
    optimizer->optimize(5);
    EXPECT(downstream->total_calls() == before);

    OptimizerRegistry::instance().unregister(name);
}

// 3. budget guarantee: overshoot bounded by one batch; the token callback
//    terminates at the first step boundary with spent >= limit
void criterion_budget_guarantee() {
    auto dataset = pftest::make_yes_no_dataset(4);
    ScriptedBackend::Options options;
    options.fixed_usage = TokenUsage{1000, 0}; // 1,000 tokens per call
    options.default_response = "<final_answer>yes</final_answer>";
    auto downstream = std::make_shared<ScriptedBackend>(options);
    ScriptedBackend::Options meta_options;
    meta_options.fixed_usage = TokenUsage{1000, 0};
    meta_options.default_response = "<prompt>next attempt</prompt>";
    auto meta = std::make_shared<ScriptedBackend>(meta_options);

    const std::int64_t limit = 10'000;
    auto ctx = pftest::make_context(pftest::make_classification_task(dataset), downstream, meta, 2, limit);
    auto factory = ctx.factory;
    auto optimizer = OptimizerRegistry::instance().make("evoprompt-ga", ctx);
    optimizer->set_initial_population(pftest::seed_candidates(*factory, {"one", "two"}));

    int steps_at_terminate = -1;
    auto token_callback = make_token_count_callback(limit);
    auto watcher = [&](const CallbackEvent& event) {
        auto verdict = token_callback(event);
        if (event.kind == CallbackKind::on_step_end && verdict == CallbackVerdict::terminate &&
            steps_at_terminate < 0) {
            steps_at_terminate = event.state.steps_completed;
            EXPECT(event.state.budget.spent().total() >= limit);
        }
        return verdict;
    };
    optimizer->optimize(50, {watcher});

    const std::int64_t eval_batch = 4 * 1000; // full split of 4, one call each
    const std::int64_t meta_batch = 2 * 1000; // population_size meta calls
    std::int64_t spent = optimizer->state().budget.spent().total();
    EXPECT(spent >= limit);
    EXPECT(spent <= limit + eval_batch + meta_batch);
    // step 0 spends exactly 10,000 (8 eval + 2 meta calls), so the callback
    // fires at the very first step boundary
    EXPECT(steps_at_terminate == 1);
    EXPECT(optimizer->state().steps_completed == 1);
    EXPECT(spent == limit);
}

// 4. all four optimizers find the planted keyword prompt and rank it first
void criterion_synthetic_optimization() {
    auto dataset = pftest::make_yes_no_dataset(8);

    for (const std::string name : {"opro", "evoprompt-ga", "evoprompt-de", "capo"}) {
        auto start = std::chrono::steady_clock::now();

        auto downstream =
            std::make_shared<pftest::OracleBackend>(pftest::keyword_answer_fn(dataset, "KEYWORD"));
        ScriptedBackend::Options meta_options;
        meta_options.rules.push_back({std::nullopt, std::string("[\\s\\S]*"),
                                      {"<prompt>first rewording attempt</prompt>",
                                       "<prompt>second rewording attempt</prompt>",
                                       "<prompt>always mention KEYWORD when answering</prompt>",
                                       "<prompt>one more plain rewording</prompt>"}});
        auto meta = std::make_shared<ScriptedBackend>(meta_options);

        auto task = pftest::make_classification_task(dataset, SubsampleMode::full);
        auto ctx = pftest::make_context(task, downstream, meta, 4);
        ctx.settings.capo_check_fs_accuracy = false;
        auto factory = ctx.factory;
        auto optimizer = OptimizerRegistry::instance().make(name, ctx);
        optimizer->set_initial_population(pftest::seed_candidates(
            *factory, {"guess the label", "answer the question", "respond briefly", "choose yes or no"}));

        auto ranked = optimizer->optimize(6);
        EXPECT(!ranked.empty());
        EXPECT(ranked[0].instruction.find("KEYWORD") != std::string::npos);

        // dev accuracy of the winner, recomputed independently on the full split
        EvalCache fresh;
        SubsamplePlan full = subsample(task.subsampling, task.dataset.rows.size(), 0);
        auto record = evaluate_on(ranked[0], ctx.task, *downstream, full, fresh);
        EXPECT(record.score.value == 1.0);
        EXPECT(elapsed_seconds(start) < 10.0);
    }
}

// 5. fixed seed + scripted backends: byte-identical traces across runs
void criterion_determinism() {
    auto dir = fresh_dir("determinism");

    ExperimentConfig config;
    config.optimizer = "evoprompt-ga";
    config.task_description = "Answer yes or no.";
    config.api_url = "http://127.0.0.1:9/v1"; // unused through hooks
    config.model_id = "scripted";
    config.output_dir = (dir / "out").string();
    config.population_size = 3;
    config.n_steps = 3;
    config.subsample_mode = "block";
    config.subsample_size = 3;
    config.seed = 4242;

    RuntimeHooks hooks;
    hooks.make_backend = [](const BackendConfig& bc) {
        ScriptedBackend::Options options;
        options.id = bc.model_id;
        options.rules.push_back({std::nullopt, std::string("<prompt> and </prompt> tags"),
                                 {"<prompt>alpha try</prompt>", "<prompt>beta try</prompt>",
                                  "<prompt>gamma try</prompt>"}});
        options.default_response = "<final_answer>yes</final_answer>";
        return std::static_pointer_cast<LlmBackend>(std::make_shared<ScriptedBackend>(options));
    };

    auto dev = pftest::make_yes_no_dataset(9);
    auto first = run_optimization(config, dev, hooks);
    std::string trace1 = slurp(first.trace_path);
    auto second = run_optimization(config, dev, hooks);
    std::string trace2 = slurp(second.trace_path);

    EXPECT(!trace1.empty());
    EXPECT(trace1 == trace2);
}

// 6. elitism (GA, CAPO with gamma=0) and DE within-step mean improvement
//    over 20-step scripted runs
void criterion_monotonicity() {
    auto dataset = pftest::make_yes_no_dataset(20);
    std::map<std::string, std::string> truth;
    for (const auto& row : dataset.rows) truth[row.x] = *row.y;
    auto answer = [truth](const std::string& user_text) {
        std::string instruction = user_text.substr(0, user_text.find('\n'));
        double q = static_cast<double>(fnv1a64(instruction) % 101) / 100.0;
        std::string x = pftest::last_input_of(user_text);
        std::size_t i = std::stoul(x.substr(5));
        std::string label = truth.at(x);
        if (!(static_cast<double>(i) < q * 20.0 - 1e-9)) label = label == "yes" ? "no" : "yes";
        return "<final_answer>" + label + "</final_answer>";
    };

    for (const std::string name : {"evoprompt-ga", "capo"}) {
        auto downstream = std::make_shared<pftest::OracleBackend>(answer);
        auto counter = std::make_shared<std::atomic<int>>(0);
        auto meta = std::make_shared<pftest::OracleBackend>([counter](const std::string&) {
            return "<prompt>variant number " + std::to_string(counter->fetch_add(1)) + " text</prompt>";
        });
        auto ctx = pftest::make_context(pftest::make_classification_task(dataset), downstream, meta, 4);
        ctx.settings.capo_check_fs_accuracy = false;
        ctx.settings.capo_length_penalty_gamma = 0.0;
        auto factory = ctx.factory;
        auto optimizer = OptimizerRegistry::instance().make(name, ctx);
        optimizer->set_initial_population(
            pftest::seed_candidates(*factory, {"seed one", "seed two", "seed three", "seed four"}));

        std::vector<double> best;
        optimizer->optimize(20, {[&](const CallbackEvent& event) {
            if (event.kind == CallbackKind::on_step_end && event.state.best_so_far) {
                best.push_back(event.state.best_so_far->score->value);
            }
            return CallbackVerdict::continue_run;
        }});
        EXPECT(best.size() == 20);
        for (std::size_t i = 1; i < best.size(); ++i) EXPECT(best[i] >= best[i - 1]);
    }

    {
        auto downstream = std::make_shared<pftest::OracleBackend>(answer);
        auto counter = std::make_shared<std::atomic<int>>(0);
        auto meta = std::make_shared<pftest::OracleBackend>([counter](const std::string&) {
            return "<prompt>trial wording " + std::to_string(counter->fetch_add(1)) + " text</prompt>";
        });
        auto task = pftest::make_classification_task(dataset, SubsampleMode::block, 5);
        auto ctx = pftest::make_context(task, downstream, meta, 4);
        auto factory = ctx.factory;
        auto optimizer = OptimizerRegistry::instance().make("evoprompt-de", ctx);
        optimizer->set_initial_population(pftest::seed_candidates(*factory, {"a1", "a2", "a3", "a4"}));
        optimizer->optimize(20);
        EXPECT(optimizer->state().step_stats.size() == 20);
        for (const auto& stats : optimizer->state().step_stats) {
            EXPECT(stats.population_mean_after >= stats.population_mean_before);
        }
    }
}

// 7. block subsampling covers every index exactly once per cycle for 100
//    random (n, size) pairs
void criterion_block_coverage() {
    Rng rng(777);
    for (int round = 0; round < 100; ++round) {
        std::size_t n = 1 + rng.next_below(500);
        std::size_t size = 1 + rng.next_below(n);
        SubsampleStrategy strategy{SubsampleMode::block, size, 0};
        std::size_t n_blocks = (n + size - 1) / size;
        std::vector<int> seen(n, 0);
        for (std::uint64_t step = 0; step < n_blocks; ++step) {
            for (auto idx : subsample(strategy, n, step).indices) seen[idx]++;
        }
        for (int count : seen) EXPECT(count == 1);
    }
}

// 8. dev/test splits are disjoint, sized as requested or per the truncation rule
//    for 100 random split specs
void criterion_split_integrity() {
    auto dir = fresh_dir("splits");
    Rng rng(888);
    for (int round = 0; round < 100; ++round) {
        std::size_t rows = 1 + rng.next_below(120);
        fs::path path = dir / ("d" + std::to_string(round) + ".csv");
        {
            std::ofstream out(path, std::ios::trunc);
            out << "text,label_text\n";
            for (std::size_t i = 0; i < rows; ++i) out << "row " << i << ",yes\n";
        }
        SplitSpec split;
        split.n_dev = 1 + rng.next_below(90);
        split.n_test = rng.next_below(90);
        split.seed = rng.next();
        auto [dev, test] = load_dataset_csv(path.string(), "text", "label_text", split);

        std::size_t expect_dev = std::min(split.n_dev, rows);
        std::size_t expect_test = std::min(split.n_test, rows - expect_dev);
        EXPECT(dev.rows.size() == expect_dev);
        EXPECT(test.rows.size() == expect_test);

        std::set<std::string> dev_x;
        for (const auto& row : dev.rows) dev_x.insert(row.x);
        EXPECT(dev_x.size() == dev.rows.size());
        for (const auto& row : test.rows) EXPECT(dev_x.count(row.x) == 0);
    }
}

// 9. the HTTP client speaks the declared chat-completions schema against a
//    local stub and meters exactly what the stub reports
void criterion_wire_format() {
    httplib::Server server;
    std::atomic<int> hits{0};
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        hits++;
        json body = json::parse(req.body);
        std::string user = body["messages"].back()["content"];
        json reply = {
            {"choices", {{{"message", {{"role", "assistant"}, {"content", "echo " + user}}}}}},
            {"usage", {{"prompt_tokens", 13}, {"completion_tokens", 5}}},
        };
        res.set_content(reply.dump(), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread listener([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    try {
        BackendConfig config;
        config.api_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
        config.model_id = "stub";
        HttpBackend backend(config);

        std::vector<ChatRequest> requests(5);
        for (std::size_t i = 0; i < requests.size(); ++i) {
            requests[i].user_text = "message " + std::to_string(i);
        }
        auto responses = backend.complete_batch(requests);
        EXPECT(responses.size() == 5);
        for (std::size_t i = 0; i < responses.size(); ++i) {
            EXPECT(responses[i].text == "echo message " + std::to_string(i));
            EXPECT((responses[i].usage == TokenUsage{13, 5}));
        }
        EXPECT(hits.load() == 5);
        EXPECT((backend.cumulative_usage() == TokenUsage{65, 25}));
        EXPECT(backend.usage_source() == UsageSource::endpoint_reported);
    } catch (...) {
        server.stop();
        listener.join();
        throw;
    }
    server.stop();
    listener.join();
}

struct Criterion {
    const char* label;
    std::function<void()> run;
};

} // namespace

int main() {
    const std::vector<Criterion> criteria = {
        {"1. extraction oracle: 10k marker round-trips + worked example", criterion_extraction_oracle},
        {"2. cache economy: calls = distinct keys x subsample size; rerun adds none", criterion_cache_economy},
        {"3. budget guarantee: bounded overshoot, callback stops at the boundary", criterion_budget_guarantee},
        {"4. synthetic end-to-end: opro/ga/de/capo all reach accuracy 1.0", criterion_synthetic_optimization},
        {"5. determinism: byte-identical traces for a fixed seed", criterion_determinism},
        {"6. monotonicity: GA/CAPO best-so-far and DE step means", criterion_monotonicity},
        {"7. block coverage: each index once per cycle, 100 random pairs", criterion_block_coverage},
        {"8. split integrity: disjoint dev/test at requested sizes, 100 random cases", criterion_split_integrity},
        {"9. wire format: chat-completions round-trip with exact usage", criterion_wire_format},
    };

    int failures = 0;
    for (const auto& criterion : criteria) {
        try {
            criterion.run();
            std::printf("[PASS] %s\n", criterion.label);
        } catch (const std::exception& e) {
            failures++;
            std::printf("[FAIL] %s: %s\n", criterion.label, e.what());
        }
    }
    if (failures == 0) {
        std::printf("all %zu acceptance criteria passed\n", criteria.size());
    } else {
        std::printf("%d acceptance criteria FAILED\n", failures);
    }
    return failures;
}
