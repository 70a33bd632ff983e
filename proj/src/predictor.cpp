#include "promptforge/predictor.hpp"

#include <algorithm>
#include <cctype>

#include "promptforge/core.hpp"

namespace promptforge {

namespace {

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

} // namespace

std::optional<std::string> extract_first_occurrence(std::string_view response,
                                                    const std::vector<std::string>& labels,
                                                    bool case_insensitive) {
    std::string haystack = case_insensitive ? to_lower(response) : std::string(response);

    std::size_t best_pos = std::string::npos;
    std::size_t best_len = 0;
    std::size_t best_index = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        std::string needle = case_insensitive ? to_lower(labels[i]) : labels[i];
        if (needle.empty()) continue;
        std::size_t pos = haystack.find(needle);
        if (pos == std::string::npos) continue;
        // earliest position wins; ties go to the longer label, then list order
        if (pos < best_pos || (pos == best_pos && needle.size() > best_len)) {
            best_pos = pos;
            best_len = needle.size();
            best_index = i;
        }
    }
    if (best_pos == std::string::npos) return std::nullopt;
    return labels[best_index]; // canonical alphabet spelling
}

std::optional<std::string> extract_marker(std::string_view response, std::string_view begin_marker,
                                          std::string_view end_marker) {
    if (begin_marker.empty() || end_marker.empty()) return std::nullopt;
    std::size_t begin = response.find(begin_marker);
    if (begin == std::string_view::npos) return std::nullopt;
    std::size_t content_start = begin + begin_marker.size();
    std::size_t end = response.find(end_marker, content_start);
    if (end == std::string_view::npos) return std::nullopt;
    return trim(response.substr(content_start, end - content_start));
}

std::optional<std::string> extract(const ExtractionSpec& spec, std::string_view response) {
    switch (spec.kind) {
    case ExtractionKind::first_occurrence:
        return extract_first_occurrence(response, spec.label_alphabet, spec.case_insensitive);
    case ExtractionKind::marker_based:
        return extract_marker(response, spec.begin_marker, spec.end_marker);
    }
    return std::nullopt;
}

} // namespace promptforge
