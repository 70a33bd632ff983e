#include "promptforge/toml.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "promptforge/errors.hpp"

namespace promptforge::toml {

namespace {

struct Scanner {
    const std::string& text;
    const std::string& origin;
    std::size_t pos = 0;
    int line = 1;

    bool eof() const { return pos >= text.size(); }
    char peek() const { return text[pos]; }

    char take() {
        char c = text[pos++];
        if (c == '\n') line++;
        return c;
    }

    [[noreturn]] void fail(const std::string& message) const {
        throw ConfigError(origin + ":" + std::to_string(line) + ": " + message);
    }

    void skip_inline_ws() {
        while (!eof() && (peek() == ' ' || peek() == '\t')) take();
    }

    void skip_ws_and_comments() {
        for (;;) {
            skip_inline_ws();
            if (eof()) return;
            if (peek() == '#') {
                while (!eof() && peek() != '\n') take();
                continue;
            }
            if (peek() == '\n' || peek() == '\r') {
                take();
                continue;
            }
            return;
        }
    }

    std::string parse_key() {
        std::string key;
        while (!eof()) {
            char c = peek();
            if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-') {
                key += take();
            } else {
                break;
            }
        }
        if (key.empty()) fail("expected a key");
        return key;
    }

    std::string parse_basic_string() {
        if (eof() || peek() != '"') fail("expected '\"'");
        take();
        std::string out;
        while (!eof()) {
            char c = take();
            if (c == '"') return out;
            if (c == '\n') fail("unterminated string");
            if (c == '\\') {
                if (eof()) fail("unterminated escape");
                char e = take();
                switch (e) {
                case '"': out += '"'; break;
                case '\\': out += '\\'; break;
                case 'n': out += '\n'; break;
                case 't': out += '\t'; break;
                case 'r': out += '\r'; break;
                default: fail(std::string("unsupported escape \\") + e);
                }
            } else {
                out += c;
            }
        }
        fail("unterminated string");
    }

    Value parse_value() {
        skip_inline_ws();
        if (eof()) fail("expected a value");
        Value value;
        char c = peek();
        if (c == '"') {
            value.kind = Value::Kind::string;
            value.str = parse_basic_string();
            return value;
        }
        if (c == '[') {
            take();
            value.kind = Value::Kind::string_array;
            for (;;) {
                skip_ws_and_comments();
                if (eof()) fail("unterminated array");
                if (peek() == ']') {
                    take();
                    break;
                }
                value.array.push_back(parse_basic_string());
                skip_ws_and_comments();
                if (!eof() && peek() == ',') {
                    take();
                    continue;
                }
                skip_ws_and_comments();
                if (eof() || peek() != ']') fail("expected ',' or ']' in array");
                take();
                break;
            }
            return value;
        }
        // bare scalar up to end of line or comment
        std::string raw;
        while (!eof() && peek() != '\n' && peek() != '\r' && peek() != '#') raw += take();
        while (!raw.empty() && (raw.back() == ' ' || raw.back() == '\t')) raw.pop_back();
        if (raw == "true" || raw == "false") {
            value.kind = Value::Kind::boolean;
            value.boolean = raw == "true";
            return value;
        }
        bool numeric = !raw.empty();
        bool floating = false;
        for (std::size_t i = 0; i < raw.size() && numeric; ++i) {
            char d = raw[i];
            if (std::isdigit(static_cast<unsigned char>(d))) continue;
            if ((d == '+' || d == '-') && i == 0) continue;
            if (d == '.' || d == 'e' || d == 'E' || d == '+' || d == '-') {
                floating = true;
                continue;
            }
            numeric = false;
        }
        if (!numeric) fail("cannot parse value: '" + raw + "'");
        if (floating) {
            value.kind = Value::Kind::floating;
            value.floating = std::stod(raw);
        } else {
            value.kind = Value::Kind::integer;
            value.integer = std::stoll(raw);
        }
        return value;
    }
};

} // namespace

Table parse(const std::string& text, const std::string& origin) {
    Scanner scanner{text, origin};
    Table table;
    for (;;) {
        scanner.skip_ws_and_comments();
        if (scanner.eof()) break;
        std::string key = scanner.parse_key();
        scanner.skip_inline_ws();
        if (scanner.eof() || scanner.peek() != '=') scanner.fail("expected '=' after key '" + key + "'");
        scanner.take();
        Value value = scanner.parse_value();
        if (table.count(key) != 0) scanner.fail("duplicate key '" + key + "'");
        table.emplace(std::move(key), std::move(value));
    }
    return table;
}

Table parse_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
}

std::string escape_string(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        switch (c) {
        case '"': out += "\\\""; break;
        case '\\': out += "\\\\"; break;
        case '\n': out += "\\n"; break;
        case '\t': out += "\\t"; break;
        case '\r': out += "\\r"; break;
        default: out += c; break;
        }
    }
    out += '"';
    return out;
}

std::string dump(const Table& table) {
    std::string out;
    for (const auto& [key, value] : table) {
        out += key;
        out += " = ";
        switch (value.kind) {
        case Value::Kind::string:
            out += escape_string(value.str);
            break;
        case Value::Kind::integer:
            out += std::to_string(value.integer);
            break;
        case Value::Kind::floating: {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.17g", value.floating);
            out += buf;
            break;
        }
        case Value::Kind::boolean:
            out += value.boolean ? "true" : "false";
            break;
        case Value::Kind::string_array: {
            out += '[';
            for (std::size_t i = 0; i < value.array.size(); ++i) {
                if (i != 0) out += ", ";
                out += escape_string(value.array[i]);
            }
            out += ']';
            break;
        }
        }
        out += '\n';
    }
    return out;
}

} // namespace promptforge::toml
