#pragma once

// Minimal declarative-config parser shared by the io and simgen loaders:
// [dotted.section] headers and key = value lines with strings, numbers,
// booleans, and (nested, possibly multi-line) arrays.

#include <map>
#include <string>
#include <vector>

#include "spice/types.hpp"

namespace spice::toml {

struct Value {
    enum class Type { String, Number, Bool, Array, Table };
    Type type = Type::Table;
    std::string str;
    double num = 0;
    bool boolean = false;
    std::vector<Value> arr;
    std::map<std::string, Value> tab;
};

Value parse_file(const std::string& path);

const Value* find(const Value& table, const std::string& key);
double get_num(const Value& table, const std::string& key, double fallback);
bool get_bool(const Value& table, const std::string& key, bool fallback);
std::string get_str(const Value& table, const std::string& key, const std::string& fallback);

// scalar broadcast or explicit array of numbers
Vector get_vector(const Value& table, const std::string& key, int len, double fallback);
// scalar broadcast or nested rows x cols array
Matrix get_matrix(const Value& v, const std::string& key, int rows, int cols);

}  // namespace spice::toml
