#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "chatdiag/errors.hpp"
#include "chatdiag/text.hpp"

namespace chatdiag {

using json = nlohmann::json;

namespace jsonio {

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(path.string(), "cannot open for writing");
    out << bytes;
    out.flush();
    if (!out) throw IoError(path.string(), "write failed");
}

inline json parse_file(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    try {
        return json::parse(bytes);
    } catch (const json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

// Calls `fn(record, line_number)` for each non-blank line. Line numbers are 1-based.
inline void for_each_jsonl(const std::filesystem::path& path,
                           const std::function<void(const json&, std::size_t)>& fn) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path.string(), "cannot open for reading");
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (text::trim(line).empty()) continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("malformed JSON: ") + e.what(), number);
        }
        fn(record, number);
    }
}

namespace detail {

inline void dump_canonical(const json& j, std::string& out, int indent, int depth) {
    auto newline = [&](int d) {
        if (indent < 0) return;
        out.push_back('\n');
        out.append(static_cast<std::size_t>(indent * d), ' ');
    };
    switch (j.type()) {
    case json::value_t::object: {
        if (j.empty()) {
            out += "{}";
            return;
        }
        out.push_back('{');
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {  // std::map: keys already sorted
            if (!first) out.push_back(',');
            first = false;
            newline(depth + 1);
            out += json(it.key()).dump();
            out += indent < 0 ? ":" : ": ";
            dump_canonical(it.value(), out, indent, depth + 1);
        }
        newline(depth);
        out.push_back('}');
        return;
    }
    case json::value_t::array: {
        if (j.empty()) {
            out += "[]";
            return;
        }
        out.push_back('[');
        bool first = true;
        for (const auto& v : j) {
            if (!first) out.push_back(',');
            first = false;
            newline(depth + 1);
            dump_canonical(v, out, indent, depth + 1);
        }
        newline(depth);
        out.push_back(']');
        return;
    }
    case json::value_t::number_float:
        out += text::fixed(j.get<double>(), 3);
        return;
    default:
        out += j.dump(-1, ' ', false, json::error_handler_t::replace);
    }
}

}  // namespace detail

// Sorted keys, floats fixed at 3 decimals. Identical values give identical bytes.
inline std::string dump_canonical(const json& j, int indent = 2) {
    std::string out;
    detail::dump_canonical(j, out, indent, 0);
    if (indent >= 0) out.push_back('\n');
    return out;
}

template <typename T>
T require(const json& j, const char* key, const std::string& subject, std::size_t line = 0) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) throw ValidationError(subject, key, "missing", line);
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ValidationError(subject, key, "wrong type", line);
    }
}

}  // namespace jsonio
}  // namespace chatdiag
