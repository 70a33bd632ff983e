#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace promptforge::toml {

/// Minimal flat-key TOML subset: `key = value` lines with basic strings,
/// integers, floats, booleans and arrays of basic strings, plus `#` comments.
/// Enough to round-trip ExperimentConfig files; not a general TOML parser.
struct Value {
    enum class Kind { string, integer, floating, boolean, string_array };
    Kind kind = Kind::string;
    std::string str;
    std::int64_t integer = 0;
    double floating = 0.0;
    bool boolean = false;
    std::vector<std::string> array;
};

using Table = std::map<std::string, Value>;

/// Throws ConfigError with line info on malformed input.
Table parse(const std::string& text, const std::string& origin);
Table parse_file(const std::string& path);

std::string escape_string(const std::string& s);
std::string dump(const Table& table); // keys in insertion-independent (sorted) order

} // namespace promptforge::toml
