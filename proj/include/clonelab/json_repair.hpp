#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

#include "clonelab/text.hpp"

#include "json.hpp"

namespace clonelab {

// Tolerant parsing for model-generated JSON. Strict parse first; if that
// fails, a fixed, ordered repair pass runs and the result must strict-parse.
// Rules, in order: strip code fences, single -> double quotes, quote bare
// keys, drop trailing commas, balance truncated strings/brackets.

struct RepairResult {
    bool ok = false;
    bool repaired = false;
    nlohmann::json value;
    std::string error;
};

namespace repair_detail {

inline std::string strip_code_fences(std::string_view s) {
    std::string_view t = trim(s);
    if (t.substr(0, 3) == "```") {
        std::size_t nl = t.find('\n');
        t = (nl == std::string_view::npos) ? std::string_view{} : t.substr(nl + 1);
        t = trim(t);
        if (t.size() >= 3 && t.substr(t.size() - 3) == "```") t = trim(t.substr(0, t.size() - 3));
    }
    return std::string(t);
}

inline std::string single_to_double_quotes(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_double = false, in_single = false, escape = false;
    for (char c : s) {
        if (escape) {
            out.push_back(c);
            escape = false;
            continue;
        }
        if (c == '\\') {
            out.push_back(c);
            escape = true;
            continue;
        }
        if (c == '"' && !in_single) {
            in_double = !in_double;
            out.push_back(c);
        } else if (c == '\'' && !in_double) {
            in_single = !in_single;
            out.push_back('"');
        } else if (c == '"' && in_single) {
            out += "\\\"";
        } else {
            out.push_back(c);
        }
    }
    return out;
}

inline bool is_ident_start(char c) {
    return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

inline bool is_ident_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$';
}

inline std::string quote_bare_keys(std::string_view s) {
    std::string out;
    out.reserve(s.size() + 8);
    bool in_string = false, escape = false;
    bool key_position = false; // just after '{' or ',' inside an object
    std::vector<char> stack;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (in_string) {
            out.push_back(c);
            if (escape) {
                escape = false;
            } else if (c == '\\') {
                escape = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
            key_position = false;
            out.push_back(c);
            continue;
        }
        if (c == '{' || c == '[') {
            stack.push_back(c);
            key_position = (c == '{');
            out.push_back(c);
            continue;
        }
        if (c == '}' || c == ']') {
            if (!stack.empty()) stack.pop_back();
            key_position = false;
            out.push_back(c);
            continue;
        }
        if (c == ',') {
            key_position = !stack.empty() && stack.back() == '{';
            out.push_back(c);
            continue;
        }
        if (key_position && is_ident_start(c)) {
            std::size_t j = i;
            while (j < s.size() && is_ident_char(s[j])) ++j;
            std::size_t k = j;
            while (k < s.size() && std::isspace(static_cast<unsigned char>(s[k]))) ++k;
            if (k < s.size() && s[k] == ':') {
                out.push_back('"');
                out.append(s.substr(i, j - i));
                out.push_back('"');
                i = j - 1;
                key_position = false;
                continue;
            }
        }
        if (!std::isspace(static_cast<unsigned char>(c))) key_position = false;
        out.push_back(c);
    }
    return out;
}

inline std::string drop_trailing_commas(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_string = false, escape = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (in_string) {
            out.push_back(c);
            if (escape) {
                escape = false;
            } else if (c == '\\') {
                escape = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
            out.push_back(c);
            continue;
        }
        if (c == ',') {
            std::size_t k = i + 1;
            while (k < s.size() && std::isspace(static_cast<unsigned char>(s[k]))) ++k;
            if (k < s.size() && (s[k] == '}' || s[k] == ']')) continue; // drop it
        }
        out.push_back(c);
    }
    return out;
}

inline std::string balance_brackets(std::string_view s) {
    std::string out(s);
    bool in_string = false, escape = false;
    std::vector<char> stack;
    for (char c : s) {
        if (in_string) {
            if (escape) {
                escape = false;
            } else if (c == '\\') {
                escape = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{' || c == '[') {
            stack.push_back(c);
        } else if (c == '}' || c == ']') {
            if (!stack.empty()) stack.pop_back();
        }
    }
    if (in_string) {
        if (escape) out.pop_back(); // dangling backslash from a cut escape
        out.push_back('"');
    }
    while (!stack.empty()) {
        out.push_back(stack.back() == '{' ? '}' : ']');
        stack.pop_back();
    }
    return out;
}

inline std::string repair_pass(std::string_view raw) {
    std::string s = strip_code_fences(raw);
    s = single_to_double_quotes(s);
    s = quote_bare_keys(s);
    s = drop_trailing_commas(s);
    s = balance_brackets(s);
    return s;
}

} // namespace repair_detail

inline RepairResult repair_json(std::string_view raw) {
    RepairResult r;
    nlohmann::json strict = nlohmann::json::parse(raw, nullptr, /*allow_exceptions=*/false);
    if (!strict.is_discarded()) {
        r.ok = true;
        r.repaired = false;
        r.value = std::move(strict);
        return r;
    }
    std::string fixed = repair_detail::repair_pass(raw);
    nlohmann::json reparsed = nlohmann::json::parse(fixed, nullptr, false);
    if (reparsed.is_discarded()) {
        r.ok = false;
        r.error = "unrepairable JSON";
        return r;
    }
    r.ok = true;
    r.repaired = true;
    r.value = std::move(reparsed);
    return r;
}

} // namespace clonelab
