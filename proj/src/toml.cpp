#include "toml.hpp"

#include <fstream>
#include <sstream>

#include "spice/errors.hpp"

namespace spice::toml {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
        if (c == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

double parse_number(const std::string& s, int line_no) {
    const char* begin = s.c_str();
    char* end = nullptr;
    const double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0') {
        throw ValidationError("config line " + std::to_string(line_no) + ": '" + s +
                              "' is not a number");
    }
    return v;
}

std::vector<std::string> split_top_level(const std::string& s, int line_no) {
    std::vector<std::string> parts;
    int depth = 0;
    bool in_string = false;
    std::string cur;
    for (size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (c == '"' && (i == 0 || s[i - 1] != '\\')) in_string = !in_string;
        if (!in_string) {
            if (c == '[') ++depth;
            if (c == ']') --depth;
            if (c == ',' && depth == 0) {
                parts.push_back(cur);
                cur.clear();
                continue;
            }
        }
        cur += c;
    }
    if (in_string || depth != 0) {
        throw ValidationError("config line " + std::to_string(line_no) + ": unbalanced value");
    }
    if (!trim(cur).empty()) parts.push_back(cur);
    return parts;
}

Value parse_value(const std::string& raw, int line_no) {
    const std::string s = trim(raw);
    if (s.empty()) {
        throw ValidationError("config line " + std::to_string(line_no) + ": empty value");
    }
    Value v;
    if (s.front() == '"') {
        if (s.size() < 2 || s.back() != '"') {
            throw ValidationError("config line " + std::to_string(line_no) +
                                  ": unterminated string");
        }
        v.type = Value::Type::String;
        for (size_t i = 1; i + 1 < s.size(); ++i) {
            if (s[i] == '\\' && i + 2 < s.size()) {
                ++i;
                v.str += s[i];
            } else {
                v.str += s[i];
            }
        }
        return v;
    }
    if (s.front() == '[') {
        if (s.back() != ']') {
            throw ValidationError("config line " + std::to_string(line_no) +
                                  ": unterminated array");
        }
        v.type = Value::Type::Array;
        for (const auto& part : split_top_level(s.substr(1, s.size() - 2), line_no)) {
            v.arr.push_back(parse_value(part, line_no));
        }
        return v;
    }
    if (s == "true" || s == "false") {
        v.type = Value::Type::Bool;
        v.boolean = (s == "true");
        return v;
    }
    v.type = Value::Type::Number;
    v.num = parse_number(s, line_no);
    return v;
}

bool brackets_balanced(const std::string& s) {
    int depth = 0;
    bool in_string = false;
    for (size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_string = !in_string;
        if (!in_string) {
            if (s[i] == '[') ++depth;
            if (s[i] == ']') --depth;
        }
    }
    return depth <= 0;
}

}  // namespace

Value parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open config file '" + path + "'");
    Value root;
    Value* current = &root;
    std::string line;
    int line_no = 0;
    std::string pending;
    int pending_line = 0;

    while (std::getline(in, line)) {
        ++line_no;
        std::string piece = trim(strip_comment(line));
        if (!pending.empty()) {
            pending += " " + piece;
            if (!brackets_balanced(pending)) continue;
            piece = pending;
            pending.clear();
        } else if (piece.empty()) {
            continue;
        }

        if (piece.front() == '[' && piece.find('=') == std::string::npos) {
            if (piece.back() != ']') {
                throw ValidationError("config line " + std::to_string(line_no) +
                                      ": malformed section header");
            }
            std::string name = trim(piece.substr(1, piece.size() - 2));
            current = &root;
            std::stringstream parts(name);
            std::string part;
            while (std::getline(parts, part, '.')) {
                part = trim(part);
                if (part.empty()) {
                    throw ValidationError("config line " + std::to_string(line_no) +
                                          ": empty section segment");
                }
                current = &current->tab[part];
                current->type = Value::Type::Table;
            }
            continue;
        }

        const size_t eq = piece.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config line " + std::to_string(line_no) +
                                  ": expected key = value");
        }
        const std::string key = trim(piece.substr(0, eq));
        const std::string value = trim(piece.substr(eq + 1));
        if (key.empty()) {
            throw ValidationError("config line " + std::to_string(line_no) + ": empty key");
        }
        if (!brackets_balanced(value)) {
            pending = piece;
            pending_line = line_no;
            continue;
        }
        current->tab[key] = parse_value(value, line_no);
    }
    if (!pending.empty()) {
        throw ValidationError("config line " + std::to_string(pending_line) +
                              ": unterminated array value");
    }
    return root;
}

const Value* find(const Value& table, const std::string& key) {
    auto it = table.tab.find(key);
    return it == table.tab.end() ? nullptr : &it->second;
}

double get_num(const Value& table, const std::string& key, double fallback) {
    const Value* v = find(table, key);
    if (!v) return fallback;
    if (v->type != Value::Type::Number) {
        throw ValidationError("config key '" + key + "' must be a number");
    }
    return v->num;
}

bool get_bool(const Value& table, const std::string& key, bool fallback) {
    const Value* v = find(table, key);
    if (!v) return fallback;
    if (v->type != Value::Type::Bool) {
        throw ValidationError("config key '" + key + "' must be true/false");
    }
    return v->boolean;
}

std::string get_str(const Value& table, const std::string& key, const std::string& fallback) {
    const Value* v = find(table, key);
    if (!v) return fallback;
    if (v->type != Value::Type::String) {
        throw ValidationError("config key '" + key + "' must be a string");
    }
    return v->str;
}

Vector get_vector(const Value& table, const std::string& key, int len, double fallback) {
    const Value* v = find(table, key);
    if (!v) return Vector::Constant(len, static_cast<real>(fallback));
    if (v->type == Value::Type::Number) return Vector::Constant(len, static_cast<real>(v->num));
    if (v->type != Value::Type::Array) {
        throw ValidationError("config key '" + key + "' must be a number or array");
    }
    if (static_cast<int>(v->arr.size()) != len) {
        throw ValidationError("config key '" + key + "' must have length " + std::to_string(len));
    }
    Vector out(len);
    for (int i = 0; i < len; ++i) {
        if (v->arr[i].type != Value::Type::Number) {
            throw ValidationError("config key '" + key + "' must contain numbers");
        }
        out[i] = static_cast<real>(v->arr[i].num);
    }
    return out;
}

Matrix get_matrix(const Value& v, const std::string& key, int rows, int cols) {
    if (v.type == Value::Type::Number) {
        return Matrix::Constant(rows, cols, static_cast<real>(v.num));
    }
    if (v.type != Value::Type::Array || static_cast<int>(v.arr.size()) != rows) {
        throw ValidationError("config key '" + key + "' must be a scalar or a " +
                              std::to_string(rows) + "x" + std::to_string(cols) + " array");
    }
    Matrix out(rows, cols);
    for (int r = 0; r < rows; ++r) {
        const Value& rowv = v.arr[r];
        if (rowv.type != Value::Type::Array || static_cast<int>(rowv.arr.size()) != cols) {
            throw ValidationError("config key '" + key + "': row " + std::to_string(r + 1) +
                                  " must be an array of length " + std::to_string(cols));
        }
        for (int c = 0; c < cols; ++c) {
            if (rowv.arr[c].type != Value::Type::Number) {
                throw ValidationError("config key '" + key + "' must contain numbers");
            }
            out(r, c) = static_cast<real>(rowv.arr[c].num);
        }
    }
    return out;
}

}  // namespace spice::toml
