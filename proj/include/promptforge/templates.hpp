#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace promptforge {

/// Markers every meta-LLM generation must wrap its prompt in. Bit-exact.
inline constexpr std::string_view kGeneratedPromptBegin = "<prompt>";
inline constexpr std::string_view kGeneratedPromptEnd = "</prompt>";

/// A named meta-prompt text asset with {placeholder} slots.
struct MetaPromptTemplate {
    std::string name;
    std::string text;
};

/// Placeholder names a template must contain, keyed by template name.
const std::vector<std::string>& required_placeholders(const std::string& template_name);

/// Throws ConfigError when a required placeholder is missing from the text.
void validate_template(const MetaPromptTemplate& tmpl);

/// Replaces every {key} occurrence with its value. Unknown placeholders are
/// left verbatim.
std::string render_template(std::string_view text, const std::map<std::string, std::string>& values);

/// The editable text assets: one per (optimizer, purpose).
struct TemplateSet {
    MetaPromptTemplate opro_propose;
    MetaPromptTemplate ga_crossover;
    MetaPromptTemplate de_trial;
    MetaPromptTemplate capo_crossover;
    MetaPromptTemplate init_from_task_description;
    MetaPromptTemplate init_from_base_prompt;
    MetaPromptTemplate init_from_samples;

    static TemplateSet defaults();

    /// Loads any template files present in dir (by asset file name), falling
    /// back to defaults for the rest. Each loaded template is validated.
    static TemplateSet load_dir(const std::string& dir);

    /// Writes the set as one UTF-8 file per asset; returns the paths.
    /// Refuses to overwrite existing files unless force is set.
    std::vector<std::string> write_dir(const std::string& dir, bool force) const;

    std::vector<const MetaPromptTemplate*> all() const;
};

} // namespace promptforge
