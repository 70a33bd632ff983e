#include "promptforge/csv.hpp"

#include <fstream>
#include <sstream>

#include "promptforge/errors.hpp"

namespace promptforge::csv {

File parse(const std::string& text) {
    File file;
    std::vector<std::string> record;
    std::string field;
    bool quoted = false;
    bool field_started = false;

    auto end_field = [&] {
        record.push_back(std::move(field));
        field.clear();
        field_started = false;
    };
    auto end_record = [&] {
        end_field();
        if (file.header.empty()) {
            file.header = std::move(record);
        } else {
            file.rows.push_back(std::move(record));
        }
        record.clear();
    };

    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < n && text[i + 1] == '"') {
                    field += '"';
                    i += 2;
                    continue;
                }
                quoted = false;
                i++;
                continue;
            }
            field += c;
            i++;
            continue;
        }
        if (c == '"' && !field_started) {
            quoted = true;
            field_started = true;
            i++;
            continue;
        }
        if (c == ',') {
            end_field();
            i++;
            continue;
        }
        if (c == '\r') {
            i++;
            continue;
        }
        if (c == '\n') {
            end_record();
            i++;
            continue;
        }
        field += c;
        field_started = true;
        i++;
    }
    if (quoted) throw Error("unterminated quoted CSV field");
    // trailing record without newline
    if (field_started || !field.empty() || !record.empty()) end_record();
    return file;
}

File read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read CSV file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string quote_field(const std::string& field) {
    bool needs_quotes = field.find_first_of(",\"\n\r") != std::string::npos;
    if (!needs_quotes) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += '"';
    return out;
}

} // namespace promptforge::csv
