#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "promptforge/errors.hpp"
#include "promptforge/optimizers.hpp"
#include "promptforge/support.hpp"
#include "test_util.hpp"

using namespace promptforge;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct ScopedOptimizer {
    std::string name;
    ScopedOptimizer(const std::string& n, LambdaOptimizer::StepFn step) : name(n) {
        register_optimizer(name, std::move(step));
    }
    ~ScopedOptimizer() { OptimizerRegistry::instance().unregister(name); }
};

fs::path temp_dir(const std::string& tag) {
    fs::path dir = fs::temp_directory_path() / ("promptforge_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

OptimizerState state_with_spent(std::shared_ptr<LlmBackend> ledger, std::int64_t limit) {
    OptimizerState state;
    state.budget.limit_total_tokens = limit;
    state.budget.ledgers = {std::move(ledger)};
    return state;
}

} // namespace

TEST_CASE("token count callback terminates exactly at the limit") {
    auto spend = [](std::int64_t amount) {
        ScriptedBackend::Options options;
        options.fixed_usage = TokenUsage{amount, 0};
        auto backend = std::make_shared<ScriptedBackend>(options);
        if (amount > 0) {
            ChatRequest request;
            request.user_text = "x";
            backend->complete(request);
        }
        return backend;
    };

    auto callback = make_token_count_callback(1'000'000);

    auto below = state_with_spent(spend(999'999), 1'000'000);
    CHECK(callback({CallbackKind::on_step_end, below}) == CallbackVerdict::continue_run);

    auto exact = state_with_spent(spend(1'000'000), 1'000'000);
    CHECK(callback({CallbackKind::on_step_end, exact}) == CallbackVerdict::terminate);

    auto above = state_with_spent(spend(1'000'001), 1'000'000);
    CHECK(callback({CallbackKind::on_step_end, above}) == CallbackVerdict::terminate);
}

TEST_CASE("file output callback writes one row per member per step and flushes") {
    ScopedOptimizer reg("trace-rows-test", [](Optimizer& o) { o.ensure_population_scored(o.current_plan()); });

    auto dataset = pftest::make_yes_no_dataset(6);
    auto downstream = std::make_shared<pftest::OracleBackend>(
        [](const std::string&) { return std::string("<final_answer>yes</final_answer>"); });
    auto task = pftest::make_classification_task(dataset, SubsampleMode::block, 2);
    auto ctx = pftest::make_context(task, downstream, downstream, 10);
    auto factory = ctx.factory;
    auto optimizer = OptimizerRegistry::instance().make("trace-rows-test", ctx);
    std::vector<std::string> instructions;
    for (int i = 0; i < 10; ++i) instructions.push_back("prompt " + std::to_string(i));
    optimizer->set_initial_population(pftest::seed_candidates(*factory, instructions));

    auto dir = temp_dir("trace_rows");
    auto trace_path = (dir / "trace.jsonl").string();
    optimizer->optimize(3, {make_file_output_callback(trace_path, TraceFormat::jsonl)});

    std::istringstream lines(slurp(trace_path));
    std::string line;
    std::vector<json> rows;
    while (std::getline(lines, line)) {
        if (!line.empty()) rows.push_back(json::parse(line));
    }
    REQUIRE(rows.size() == 30); // 3 steps x population 10

    // rows are monotonic in (step, candidate_id) and reflect state snapshots
    for (std::size_t i = 1; i < rows.size(); ++i) {
        auto step_prev = rows[i - 1]["step"].get<std::uint64_t>();
        auto step_now = rows[i]["step"].get<std::uint64_t>();
        CHECK(step_now >= step_prev);
        if (step_now == step_prev) {
            CHECK(rows[i]["candidate_id"].get<std::uint64_t>() >
                  rows[i - 1]["candidate_id"].get<std::uint64_t>());
        }
    }
    const auto& row = rows.front();
    CHECK(row.contains("run_id"));
    CHECK(row.contains("rendered_digest"));
    CHECK(row.contains("instruction"));
    CHECK(row.contains("n_exemplars"));
    CHECK(row.contains("score"));
    CHECK(row.contains("subsample_key"));
    CHECK(row.contains("tokens_total"));
    CHECK(row["score"].is_number()); // ensure-scored population
    CHECK(row["subsample_key"].get<std::string>().rfind("block:", 0) == 0);
}

TEST_CASE("file output with zero completed steps leaves a header-only csv and an empty jsonl") {
    auto dataset = pftest::make_yes_no_dataset(4);
    auto downstream = std::make_shared<pftest::OracleBackend>(
        [](const std::string&) { return std::string("x"); });

    ScopedOptimizer reg("zero-steps-test", [](Optimizer&) {});
    auto dir = temp_dir("trace_zero");

    for (auto format : {TraceFormat::csv, TraceFormat::jsonl}) {
        auto ctx = pftest::make_context(pftest::make_classification_task(dataset), downstream, downstream, 1,
                                        /*token_limit=*/0);
        auto factory = ctx.factory;
        auto optimizer = OptimizerRegistry::instance().make("zero-steps-test", ctx);
        optimizer->set_initial_population(pftest::seed_candidates(*factory, {"alpha"}));
        auto path = dir / (format == TraceFormat::csv ? "t.csv" : "t.jsonl");
        optimizer->optimize(5, {make_file_output_callback(path.string(), format)});
        std::string content = slurp(path);
        if (format == TraceFormat::csv) {
            CHECK(content ==
                  "run_id,step,candidate_id,rendered_digest,instruction,n_exemplars,score,subsample_key,"
                  "tokens_total\n");
        } else {
            CHECK(content.empty());
        }
    }
}

TEST_CASE("callback ordering: on_start first, on_end last, exactly once each") {
    ScopedOptimizer reg("ordering-test", [](Optimizer&) {});
    auto dataset = pftest::make_yes_no_dataset(4);
    auto downstream = std::make_shared<pftest::OracleBackend>([](const std::string&) { return std::string("x"); });
    auto ctx = pftest::make_context(pftest::make_classification_task(dataset), downstream, downstream, 1);
    auto factory = ctx.factory;
    auto optimizer = OptimizerRegistry::instance().make("ordering-test", ctx);
    optimizer->set_initial_population(pftest::seed_candidates(*factory, {"alpha"}));

    std::vector<CallbackKind> kinds;
    optimizer->optimize(4, {[&](const CallbackEvent& event) {
        kinds.push_back(event.kind);
        return CallbackVerdict::continue_run;
    }});
    REQUIRE(kinds.size() == 6);
    CHECK(kinds.front() == CallbackKind::on_start);
    CHECK(kinds.back() == CallbackKind::on_end);
    for (std::size_t i = 1; i + 1 < kinds.size(); ++i) CHECK(kinds[i] == CallbackKind::on_step_end);
}

TEST_CASE("select_exemplars_random draws distinct seeded rows") {
    auto dataset = pftest::make_yes_no_dataset(6);
    CandidateFactory factory;

    auto none = select_exemplars_random(factory, "instruct", dataset, 0, 9);
    CHECK(none.exemplars.empty());
    CHECK(render_prompt(none) == "instruct");

    auto a = select_exemplars_random(factory, "instruct", dataset, 3, 9);
    auto b = select_exemplars_random(factory, "instruct", dataset, 3, 9);
    REQUIRE(a.exemplars.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.exemplars[i].rendered == b.exemplars[i].rendered); // same seed, same set and order
    }
    std::set<std::string> distinct;
    for (const auto& e : a.exemplars) distinct.insert(e.input_text);
    CHECK(distinct.size() == 3);

    auto all = select_exemplars_random(factory, "instruct", dataset, 6, 9);
    CHECK(all.exemplars.size() == 6);

    CHECK_THROWS_AS(select_exemplars_random(factory, "instruct", dataset, 7, 9), KTooLarge);
}

TEST_CASE("random search equals random selection for a single trial and picks the argmax otherwise") {
    auto dataset = pftest::make_yes_no_dataset(8);
    auto task = pftest::make_classification_task(dataset);
    CandidateFactory factory;

    SUBCASE("single trial degenerates to random selection") {
        auto backend = std::make_shared<pftest::OracleBackend>(
            [](const std::string&) { return std::string("<final_answer>yes</final_answer>"); });
        auto searched = select_exemplars_random_search(factory, "instruct", dataset, 2, 1, task, *backend, 5);
        auto plain = select_exemplars_random(factory, "instruct", dataset, 2, 5);
        CHECK(render_prompt(searched) == render_prompt(plain));
    }

    SUBCASE("the best-scoring trial wins; ties keep the earliest") {
        // a prompt embedding "item 2" as an exemplar answers everything right
        auto backend = std::make_shared<pftest::OracleBackend>([](const std::string& user_text) {
            bool good = user_text.find("Input: item 2\nOutput:") != std::string::npos;
            std::string x = pftest::last_input_of(user_text);
            std::size_t i = std::stoul(x.substr(5));
            std::string label = i % 2 == 0 ? "yes" : "no";
            if (!good) label = label == "yes" ? "no" : "yes";
            return "<final_answer>" + label + "</final_answer>";
        });
        auto best = select_exemplars_random_search(factory, "instruct", dataset, 1, 6, task, *backend, 5);
        REQUIRE(best.exemplars.size() == 1);
        CHECK(best.exemplars[0].input_text == "item 2");

        auto flat = std::make_shared<pftest::OracleBackend>(
            [](const std::string&) { return std::string("<final_answer>yes</final_answer>"); });
        auto tie = select_exemplars_random_search(factory, "instruct", dataset, 1, 4, task, *flat, 5);
        auto trial0 = select_exemplars_random(factory, "instruct", dataset, 1, 5);
        CHECK(render_prompt(tie) == render_prompt(trial0)); // all equal: first trial returned
    }
}

TEST_CASE("create_initial_prompts parses seeded generations") {
    CandidateFactory factory;
    auto templates = TemplateSet::defaults();

    SUBCASE("n distinct scripted generations give n candidates") {
        ScriptedBackend::Options options;
        options.rules.push_back({std::nullopt, std::string(".*"),
                                 {"<prompt>one</prompt>", "<prompt>two</prompt>", "<prompt>three</prompt>"}});
        ScriptedBackend meta(options);
        PromptSeedPayload payload;
        payload.text = "classify the text";
        auto candidates = create_initial_prompts(factory, PromptSource::task_description, payload, 3, meta, templates);
        REQUIRE(candidates.size() == 3);
        CHECK(candidates[0].instruction == "one");
        CHECK(candidates[1].instruction == "two");
        CHECK(candidates[2].instruction == "three");
    }

    SUBCASE("every generation unparseable raises") {
        ScriptedBackend::Options options;
        options.default_response = "no tags";
        ScriptedBackend meta(options);
        PromptSeedPayload payload;
        payload.text = "classify";
        CHECK_THROWS_AS(
            create_initial_prompts(factory, PromptSource::task_description, payload, 3, meta, templates),
            AllGenerationsFailed);
    }

    SUBCASE("sample seeding embeds every pair verbatim") {
        std::string captured;
        pftest::OracleBackend meta([&](const std::string& text) {
            captured = text;
            return std::string("<prompt>induced</prompt>");
        });
        PromptSeedPayload payload;
        payload.samples = {{"x one", "y one"}, {"x two", "y two"}, {"x three", "y three"}};
        auto candidates = create_initial_prompts(factory, PromptSource::samples, payload, 1, meta, templates);
        REQUIRE(candidates.size() == 1);
        for (const auto& [x, y] : payload.samples) {
            CHECK(captured.find("Input: " + x) != std::string::npos);
            CHECK(captured.find("Output: " + y) != std::string::npos);
        }
    }

    SUBCASE("base prompt seeding includes the base prompt") {
        std::string captured;
        pftest::OracleBackend meta([&](const std::string& text) {
            captured = text;
            return std::string("<prompt>rephrased</prompt>");
        });
        PromptSeedPayload payload;
        payload.text = "the original instruction";
        auto candidates = create_initial_prompts(factory, PromptSource::base_prompt, payload, 1, meta, templates);
        CHECK(candidates[0].instruction == "rephrased");
        CHECK(captured.find("the original instruction") != std::string::npos);
    }
}

TEST_CASE("template assets validate their required placeholders") {
    auto set = TemplateSet::defaults();
    for (const auto* tmpl : set.all()) CHECK_NOTHROW(validate_template(*tmpl));

    MetaPromptTemplate broken{"evoprompt_de_trial", "no placeholders at all"};
    CHECK_THROWS_AS(validate_template(broken), ConfigError);
}

TEST_CASE("template set round-trips through a directory") {
    auto dir = temp_dir("templates_roundtrip");
    auto set = TemplateSet::defaults();
    auto written = set.write_dir(dir.string(), false);
    CHECK(written.size() == 7);

    // refuses to clobber without force
    CHECK_THROWS_AS(set.write_dir(dir.string(), false), ConfigError);
    CHECK_NOTHROW(set.write_dir(dir.string(), true));

    // an edited file overrides the built-in on load
    std::ofstream out(dir / "evoprompt_ga_crossover.txt", std::ios::trunc);
    out << "Mix {parent_a} and {parent_b} for {task_description}. Use <prompt> tags.";
    out.close();
    auto loaded = TemplateSet::load_dir(dir.string());
    CHECK(loaded.ga_crossover.text.rfind("Mix ", 0) == 0);
    CHECK(loaded.opro_propose.text == set.opro_propose.text);
}
