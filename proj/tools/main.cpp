#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "promptforge/errors.hpp"
#include "promptforge/experiment.hpp"
#include "promptforge/templates.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;
constexpr int kExitBudget = 4;

struct CommonArgs {
    std::string config_path;
    std::string data_path;
    std::string optimizer;
    int steps = -1;
    long long budget = -1;
    long long seed = -1;
    std::string out_dir;
    std::string api_key_env;
};

void add_common_flags(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config (TOML)")->required();
    cmd->add_option("--data", args.data_path, "dataset CSV with a header row")->required();
    cmd->add_option("--optimizer", args.optimizer, "override: optimizer name");
    cmd->add_option("--steps", args.steps, "override: number of optimization steps");
    cmd->add_option("--budget", args.budget, "override: total token budget");
    cmd->add_option("--seed", args.seed, "override: run seed");
    cmd->add_option("--out", args.out_dir, "override: output directory");
    cmd->add_option("--api-key-env", args.api_key_env,
                    "environment variable holding the API key (default PROMPTFORGE_API_KEY)");
}

promptforge::ExperimentConfig load_config(const CommonArgs& args) {
    auto config = promptforge::ExperimentConfig::from_toml_file(args.config_path);
    if (!args.optimizer.empty()) config.optimizer = args.optimizer;
    if (args.steps >= 0) config.n_steps = args.steps;
    if (args.budget >= 0) config.token_limit = args.budget;
    if (args.seed >= 0) config.seed = static_cast<std::uint64_t>(args.seed);
    if (!args.out_dir.empty()) config.output_dir = args.out_dir;
    if (!args.api_key_env.empty()) config.api_key_env = args.api_key_env;
    return config;
}

std::pair<promptforge::Dataset, promptforge::Dataset> load_splits(const CommonArgs& args,
                                                                  const promptforge::ExperimentConfig& config) {
    promptforge::SplitSpec split;
    split.n_dev = config.n_dev;
    split.n_test = config.n_test;
    split.seed = config.seed;
    return promptforge::load_dataset_csv(args.data_path, config.x_column, config.y_column, split);
}

int cmd_experiment(const CommonArgs& args) {
    auto config = load_config(args);
    auto report = promptforge::run_experiment(args.data_path, config);
    std::cout << report.report_json_path << "\n";
    if (report.budget_exhausted && report.steps_completed == 0) {
        std::cerr << "token budget exhausted before any optimization step completed\n";
        return kExitBudget;
    }
    return kExitOk;
}

int cmd_optimize(const CommonArgs& args) {
    auto config = load_config(args);
    auto [dev, test] = load_splits(args, config);
    (void)test;
    auto result = promptforge::run_optimization(config, dev);
    for (const auto& member : result.ranked) {
        if (member.score) {
            std::printf("%.4f  #%llu  %s\n", member.score->value,
                        static_cast<unsigned long long>(member.candidate.id),
                        member.candidate.instruction.c_str());
        } else {
            std::printf("   -    #%llu  %s\n", static_cast<unsigned long long>(member.candidate.id),
                        member.candidate.instruction.c_str());
        }
    }
    std::cout << result.trace_path << "\n";
    if (result.budget_exhausted && result.steps_completed == 0) {
        std::cerr << "token budget exhausted before any optimization step completed\n";
        return kExitBudget;
    }
    return kExitOk;
}

int cmd_evaluate(const CommonArgs& args, const std::string& prompts_path) {
    auto config = load_config(args);
    auto [dev, test] = load_splits(args, config);
    (void)dev;

    std::ifstream in(prompts_path);
    if (!in) throw promptforge::IoError("cannot read prompts file: " + prompts_path);
    promptforge::CandidateFactory factory;
    std::vector<promptforge::PromptCandidate> candidates;
    std::string line;
    while (std::getline(in, line)) {
        if (promptforge::trim(line).empty()) continue;
        candidates.push_back(factory.create(line));
    }

    auto rows = promptforge::run_evaluation(candidates, test, config);
    for (const auto& row : rows) {
        std::printf("%.4f  #%llu  %s\n", row.test_score, static_cast<unsigned long long>(row.candidate.id),
                    row.candidate.instruction.c_str());
    }
    return kExitOk;
}

int cmd_templates(const std::string& out_dir, bool force) {
    auto written = promptforge::TemplateSet::defaults().write_dir(out_dir, force);
    for (const auto& path : written) std::cout << path << "\n";
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"promptforge: automatic discrete prompt optimization"};
    app.require_subcommand(1);

    CommonArgs experiment_args;
    auto* experiment_cmd =
        app.add_subcommand("experiment", "optimize on the dev split, evaluate on test, write a report");
    add_common_flags(experiment_cmd, experiment_args);

    CommonArgs optimize_args;
    auto* optimize_cmd = app.add_subcommand("optimize", "run the optimization loop on the dev split");
    add_common_flags(optimize_cmd, optimize_args);

    CommonArgs evaluate_args;
    std::string prompts_path;
    auto* evaluate_cmd = app.add_subcommand("evaluate", "score prompts on the test split");
    add_common_flags(evaluate_cmd, evaluate_args);
    evaluate_cmd->add_option("--prompts", prompts_path, "text file with one instruction per line")->required();

    std::string templates_out;
    bool templates_force = false;
    auto* templates_cmd = app.add_subcommand("templates", "write the default meta-prompt templates for editing");
    templates_cmd->add_option("--out", templates_out, "directory to write template files into")->required();
    templates_cmd->add_flag("--force", templates_force, "overwrite existing files");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (experiment_cmd->parsed()) return cmd_experiment(experiment_args);
        if (optimize_cmd->parsed()) return cmd_optimize(optimize_args);
        if (evaluate_cmd->parsed()) return cmd_evaluate(evaluate_args, prompts_path);
        if (templates_cmd->parsed()) return cmd_templates(templates_out, templates_force);
    } catch (const promptforge::BudgetExhausted& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBudget;
    } catch (const promptforge::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const promptforge::BackendError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const promptforge::MalformedResponse& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const promptforge::AllGenerationsFailed& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const promptforge::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitBackend;
    } catch (const promptforge::MissingColumn& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const promptforge::EmptyFile& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const promptforge::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitOk;
}
