#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace promptforge {

enum class ExtractionKind { first_occurrence, marker_based };

/// How a prediction is pulled out of a raw model response.
struct ExtractionSpec {
    ExtractionKind kind = ExtractionKind::marker_based;
    std::vector<std::string> label_alphabet; // required for first_occurrence
    std::string begin_marker = "<final_answer>";
    std::string end_marker = "</final_answer>";
    bool case_insensitive = true;
};

/// Returns the label whose earliest occurrence in `response` comes first.
/// Ties at equal position go to the longest label, then to label-list order.
/// The canonical alphabet spelling is returned, not the matched surface form.
std::optional<std::string> extract_first_occurrence(std::string_view response,
                                                    const std::vector<std::string>& labels,
                                                    bool case_insensitive = true);

/// Content strictly between the first begin_marker and the next end_marker
/// after it, whitespace-trimmed. Absent when either marker is missing or
/// mis-ordered.
std::optional<std::string> extract_marker(std::string_view response,
                                          std::string_view begin_marker,
                                          std::string_view end_marker);

/// Dispatch on spec.kind. Absence is a value; tasks score it as incorrect.
std::optional<std::string> extract(const ExtractionSpec& spec, std::string_view response);

} // namespace promptforge
