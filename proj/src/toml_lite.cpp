#include "fedsim/toml_lite.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fedsim::toml {

namespace {

[[noreturn]] void fail(int line, const std::string& msg) {
    throw std::runtime_error("toml parse error at line " + std::to_string(line) + ": " + msg);
}

std::string strip(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Removes a trailing comment that is not inside a string literal.
std::string strip_comment(const std::string& s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') in_str = !in_str;
        if (s[i] == '#' && !in_str) return s.substr(0, i);
    }
    return s;
}

Value parse_scalar(const std::string& tok, int line) {
    Value v;
    if (tok.empty()) fail(line, "empty value");
    if (tok == "true" || tok == "false") {
        v.kind = Value::Kind::boolean;
        v.b = tok == "true";
        return v;
    }
    if (tok.front() == '"') {
        if (tok.size() < 2 || tok.back() != '"') fail(line, "unterminated string");
        v.kind = Value::Kind::string;
        v.s = tok.substr(1, tok.size() - 2);
        return v;
    }
    // number: integer when it parses fully without . e E inf nan
    const bool looks_float = tok.find_first_of(".eEnN") != std::string::npos;
    try {
        std::size_t pos = 0;
        if (!looks_float) {
            const long long n = std::stoll(tok, &pos);
            if (pos == tok.size()) {
                v.kind = Value::Kind::integer;
                v.i = n;
                return v;
            }
        }
        pos = 0;
        const double d = std::stod(tok, &pos);
        if (pos != tok.size()) fail(line, "malformed number '" + tok + "'");
        v.kind = Value::Kind::floating;
        v.f = d;
        return v;
    } catch (const std::invalid_argument&) {
        fail(line, "unrecognized value '" + tok + "'");
    } catch (const std::out_of_range&) {
        fail(line, "number out of range '" + tok + "'");
    }
}

Value parse_value(const std::string& text, int line) {
    const std::string t = strip(text);
    if (!t.empty() && t.front() == '[') {
        if (t.back() != ']') fail(line, "unterminated array");
        Value v;
        v.kind = Value::Kind::array;
        const std::string inner = t.substr(1, t.size() - 2);
        std::string tok;
        bool in_str = false;
        for (char c : inner) {
            if (c == '"') in_str = !in_str;
            if (c == ',' && !in_str) {
                const std::string piece = strip(tok);
                if (piece.empty()) fail(line, "empty array element");
                v.items.push_back(parse_scalar(piece, line));
                tok.clear();
            } else {
                tok += c;
            }
        }
        const std::string piece = strip(tok);
        if (!piece.empty()) v.items.push_back(parse_scalar(piece, line));
        return v;
    }
    return parse_scalar(t, line);
}

bool valid_key(const std::string& k) {
    if (k.empty()) return false;
    for (char c : k)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
    return true;
}

} // namespace

double Value::as_number() const {
    if (kind == Kind::integer) return static_cast<double>(i);
    if (kind == Kind::floating) return f;
    throw std::runtime_error("value is not a number");
}

Table parse(const std::string& text) {
    Table table;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        const std::string line = strip(strip_comment(raw));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail(line_no, "unterminated section header");
            section = strip(line.substr(1, line.size() - 2));
            if (!valid_key(section)) fail(line_no, "bad section name '" + section + "'");
            table[section]; // materialize even if empty
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) fail(line_no, "expected 'key = value'");
        const std::string key = strip(line.substr(0, eq));
        if (!valid_key(key)) fail(line_no, "bad key '" + key + "'");
        if (table[section].count(key)) fail(line_no, "duplicate key '" + key + "'");
        table[section][key] = parse_value(line.substr(eq + 1), line_no);
    }
    return table;
}

Table parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

std::string format_value(const Value& v) {
    char buf[64];
    switch (v.kind) {
        case Value::Kind::boolean:
            return v.b ? "true" : "false";
        case Value::Kind::integer:
            std::snprintf(buf, sizeof buf, "%lld", static_cast<long long>(v.i));
            return buf;
        case Value::Kind::floating:
            std::snprintf(buf, sizeof buf, "%.17g", v.f);
            return buf;
        case Value::Kind::string:
            return "\"" + v.s + "\"";
        case Value::Kind::array: {
            std::string out = "[";
            for (std::size_t i = 0; i < v.items.size(); ++i) {
                if (i) out += ", ";
                out += format_value(v.items[i]);
            }
            return out + "]";
        }
    }
    return "";
}

} // namespace fedsim::toml
