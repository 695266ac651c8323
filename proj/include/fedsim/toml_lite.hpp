#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace fedsim::toml {

// Minimal TOML subset: [section] headers, key = value pairs, # comments,
// strings, integers, floats, booleans, and flat arrays. Covers everything the
// experiment configs use; parse errors carry 1-based line numbers.

struct Value {
    enum class Kind { boolean, integer, floating, string, array };
    Kind kind = Kind::string;
    bool b = false;
    std::int64_t i = 0;
    double f = 0.0;
    std::string s;
    std::vector<Value> items;

    double as_number() const; // integer or floating
};

// section -> key -> value; top-level keys live under the "" section.
using Table = std::map<std::string, std::map<std::string, Value>>;

Table parse(const std::string& text);
Table parse_file(const std::string& path);

std::string format_value(const Value& v);

} // namespace fedsim::toml
