#pragma once

#include <string>
#include <vector>

namespace promptforge::csv {

/// RFC-4180 style reader: quoted fields, embedded commas/newlines, doubled
/// quotes. First record is the header. CRLF and LF both accepted.
struct File {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

File read_file(const std::string& path);
File parse(const std::string& text);

std::string quote_field(const std::string& field);

} // namespace promptforge::csv
