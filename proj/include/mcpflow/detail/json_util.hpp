#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "json.hpp"

namespace mcpflow::detail {

using json = nlohmann::json;

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
    std::filesystem::create_directories(path.parent_path().empty()
                                            ? std::filesystem::path(".")
                                            : path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write file: " + path.string());
    out << content;
}

// Pretty-printed with nlohmann's default lexicographic key order; used for
// every persisted artifact so diffs and digests are stable.
inline std::string stable_dump(const json& j) { return j.dump(2) + "\n"; }

// First balanced JSON object or array in free text, tolerant of fenced code
// blocks and surrounding prose. Models rarely return bare JSON even when
// asked to.
inline std::optional<json> extract_json(std::string_view text) {
    // Prefer a fenced block if one parses.
    size_t fence = text.find("```");
    while (fence != std::string_view::npos) {
        size_t start = text.find('\n', fence);
        if (start == std::string_view::npos) break;
        size_t end = text.find("```", start);
        if (end == std::string_view::npos) break;
        auto body = text.substr(start + 1, end - start - 1);
        json parsed = json::parse(body, nullptr, false);
        if (!parsed.is_discarded()) return parsed;
        fence = text.find("```", end + 3);
    }
    // Otherwise scan for the first balanced {...} or [...] that parses.
    for (size_t i = 0; i < text.size(); ++i) {
        char open = text[i];
        if (open != '{' && open != '[') continue;
        char close = open == '{' ? '}' : ']';
        int depth = 0;
        bool in_string = false;
        bool escaped = false;
        for (size_t j = i; j < text.size(); ++j) {
            char c = text[j];
            if (in_string) {
                if (escaped) escaped = false;
                else if (c == '\\') escaped = true;
                else if (c == '"') in_string = false;
                continue;
            }
            if (c == '"') in_string = true;
            else if (c == open) ++depth;
            else if (c == close) {
                if (--depth == 0) {
                    json parsed = json::parse(text.substr(i, j - i + 1), nullptr, false);
                    if (!parsed.is_discarded()) return parsed;
                    break;
                }
            }
        }
    }
    return std::nullopt;
}

inline std::string trim(std::string_view s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

// Trim plus collapse of internal whitespace runs to single spaces; case kept.
inline std::string normalize_ws(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_run = false;
    for (char c : s) {
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            in_run = true;
            continue;
        }
        if (in_run && !out.empty()) out.push_back(' ');
        in_run = false;
        out.push_back(c);
    }
    return out;
}

inline std::string to_lower(std::string_view s) {
    std::string out(s);
    for (char& c : out)
        if (c >= 'A' && c <= 'Z') c += 32;
    return out;
}

}  // namespace mcpflow::detail
