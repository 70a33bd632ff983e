#include "promptforge/templates.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "promptforge/errors.hpp"

namespace promptforge {

namespace fs = std::filesystem;

namespace {

constexpr const char* kOproPropose = R"(You are optimizing instructions for a language model.

Task description:
{task_description}

Below are previous instructions with their scores (higher is better), worst first:
{scored_prompts}

Some examples from the task:
{examples}

Write one new instruction that is different from all the instructions above and achieves a higher score. Wrap the complete instruction in <prompt> and </prompt> tags.
)";

constexpr const char* kGaCrossover = R"(You are evolving instructions for a language model.

Task description:
{task_description}

Parent instruction 1:
{parent_a}

Parent instruction 2:
{parent_b}

Cross over the two parent instructions into one new instruction, then mutate the result by rephrasing it. Wrap the final instruction in <prompt> and </prompt> tags.
)";

constexpr const char* kDeTrial = R"(You are evolving instructions for a language model.

Task description:
{task_description}

Current instruction:
{target}

Instruction A:
{parent_a}

Instruction B:
{parent_b}

Instruction C:
{parent_c}

Best instruction so far:
{best}

Identify how instruction A differs from instruction B, apply that difference to instruction C as a mutation, then combine the result with the current instruction, keeping what works in the best instruction so far. Wrap the final instruction in <prompt> and </prompt> tags.
)";

constexpr const char* kCapoCrossover = R"(You are evolving instructions for a language model.

Task description:
{task_description}

Parent instruction 1:
{parent_a}

Parent instruction 2:
{parent_b}

Combine the two parent instructions into one new instruction, then mutate it by rephrasing. Keep the instruction concise. Wrap the final instruction in <prompt> and </prompt> tags.
)";

constexpr const char* kInitFromTaskDescription = R"(Write an instruction for a language model that solves the following task.

Task description:
{task_description}

Answer only with the instruction, wrapped in <prompt> and </prompt> tags.
)";

constexpr const char* kInitFromBasePrompt = R"(Paraphrase the following instruction while keeping its meaning.

Instruction:
{base_prompt}

Answer only with the new instruction, wrapped in <prompt> and </prompt> tags.
)";

constexpr const char* kInitFromSamples = R"(Here are input-output examples of a task:

{examples}

Write the instruction that was most likely given to produce these outputs. Answer only with the instruction, wrapped in <prompt> and </prompt> tags.
)";

const std::map<std::string, std::vector<std::string>> kRequired = {
    {"opro_propose", {"task_description", "scored_prompts", "examples"}},
    {"evoprompt_ga_crossover", {"task_description", "parent_a", "parent_b"}},
    {"evoprompt_de_trial", {"task_description", "target", "parent_a", "parent_b", "parent_c", "best"}},
    {"capo_crossover", {"task_description", "parent_a", "parent_b"}},
    {"init_from_task_description", {"task_description"}},
    {"init_from_base_prompt", {"base_prompt"}},
    {"init_from_samples", {"examples"}},
};

} // namespace

const std::vector<std::string>& required_placeholders(const std::string& template_name) {
    static const std::vector<std::string> empty;
    auto it = kRequired.find(template_name);
    return it == kRequired.end() ? empty : it->second;
}

void validate_template(const MetaPromptTemplate& tmpl) {
    for (const auto& placeholder : required_placeholders(tmpl.name)) {
        if (tmpl.text.find("{" + placeholder + "}") == std::string::npos) {
            throw ConfigError("template '" + tmpl.name + "' is missing required placeholder {" + placeholder + "}");
        }
    }
}

std::string render_template(std::string_view text, const std::map<std::string, std::string>& values) {
    std::string out(text);
    for (const auto& [key, value] : values) {
        const std::string slot = "{" + key + "}";
        std::size_t pos = 0;
        while ((pos = out.find(slot, pos)) != std::string::npos) {
            out.replace(pos, slot.size(), value);
            pos += value.size();
        }
    }
    return out;
}

TemplateSet TemplateSet::defaults() {
    TemplateSet set;
    set.opro_propose = {"opro_propose", kOproPropose};
    set.ga_crossover = {"evoprompt_ga_crossover", kGaCrossover};
    set.de_trial = {"evoprompt_de_trial", kDeTrial};
    set.capo_crossover = {"capo_crossover", kCapoCrossover};
    set.init_from_task_description = {"init_from_task_description", kInitFromTaskDescription};
    set.init_from_base_prompt = {"init_from_base_prompt", kInitFromBasePrompt};
    set.init_from_samples = {"init_from_samples", kInitFromSamples};
    return set;
}

std::vector<const MetaPromptTemplate*> TemplateSet::all() const {
    return {&opro_propose,         &ga_crossover,          &de_trial,         &capo_crossover,
            &init_from_task_description, &init_from_base_prompt, &init_from_samples};
}

namespace {

MetaPromptTemplate* slot_by_name(TemplateSet& set, const std::string& name) {
    if (name == "opro_propose") return &set.opro_propose;
    if (name == "evoprompt_ga_crossover") return &set.ga_crossover;
    if (name == "evoprompt_de_trial") return &set.de_trial;
    if (name == "capo_crossover") return &set.capo_crossover;
    if (name == "init_from_task_description") return &set.init_from_task_description;
    if (name == "init_from_base_prompt") return &set.init_from_base_prompt;
    if (name == "init_from_samples") return &set.init_from_samples;
    return nullptr;
}

} // namespace

TemplateSet TemplateSet::load_dir(const std::string& dir) {
    TemplateSet set = defaults();
    for (const auto* tmpl : set.all()) {
        fs::path path = fs::path(dir) / (tmpl->name + ".txt");
        if (!fs::exists(path)) continue;
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError("cannot read template file: " + path.string());
        std::ostringstream buf;
        buf << in.rdbuf();
        MetaPromptTemplate loaded{tmpl->name, buf.str()};
        validate_template(loaded);
        *slot_by_name(set, tmpl->name) = std::move(loaded);
    }
    return set;
}

std::vector<std::string> TemplateSet::write_dir(const std::string& dir, bool force) const {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create template directory: " + dir + ": " + ec.message());

    std::vector<fs::path> paths;
    for (const auto* tmpl : all()) paths.push_back(fs::path(dir) / (tmpl->name + ".txt"));
    if (!force) {
        for (const auto& path : paths) {
            if (fs::exists(path)) {
                throw ConfigError("template file exists (use force to overwrite): " + path.string());
            }
        }
    }
    std::vector<std::string> written;
    auto templates = all();
    for (std::size_t i = 0; i < templates.size(); ++i) {
        std::ofstream out(paths[i], std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write template file: " + paths[i].string());
        out << templates[i]->text;
        written.push_back(paths[i].string());
    }
    return written;
}

} // namespace promptforge
