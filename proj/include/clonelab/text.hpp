#pragma once

#include <cctype>
#include <cstddef>
#include <string>
#include <string_view>

namespace clonelab {

inline bool is_utf8_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

// Longest prefix of at most max_bytes that does not split a UTF-8 sequence.
inline std::string_view utf8_prefix(std::string_view s, std::size_t max_bytes) {
    if (s.size() <= max_bytes) return s;
    std::size_t cut = max_bytes;
    while (cut > 0 && is_utf8_continuation(static_cast<unsigned char>(s[cut]))) --cut;
    return s.substr(0, cut);
}

// Longest suffix of at most max_bytes that starts on a UTF-8 boundary.
inline std::string_view utf8_suffix(std::string_view s, std::size_t max_bytes) {
    if (s.size() <= max_bytes) return s;
    std::size_t start = s.size() - max_bytes;
    while (start < s.size() && is_utf8_continuation(static_cast<unsigned char>(s[start]))) ++start;
    return s.substr(start);
}

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

// Collapses whitespace runs to single spaces and trims the ends.
inline std::string normalize_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool in_ws = true; // swallow leading whitespace
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_ws = true;
        } else {
            if (in_ws && !out.empty()) out.push_back(' ');
            in_ws = false;
            out.push_back(c);
        }
    }
    return out;
}

} // namespace clonelab
