#pragma once

#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace vsa::text {

inline std::string to_lower(std::string_view s)
{
    std::string out(s);
    for (char& c : out)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

inline bool iequals(std::string_view a, std::string_view b)
{
    return a.size() == b.size() && to_lower(a) == to_lower(b);
}

inline bool is_word_char(char c)
{
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

/// Case-insensitive search for `phrase` bounded by non-word characters (or the string ends)
/// on both sides. Multi-word phrases match verbatim, e.g. "navigation probe".
inline bool contains_whole_word(std::string_view haystack, std::string_view phrase)
{
    if (phrase.empty())
        return false;
    const std::string h = to_lower(haystack);
    const std::string p = to_lower(phrase);
    for (std::size_t pos = h.find(p); pos != std::string::npos; pos = h.find(p, pos + 1)) {
        const bool left = pos == 0 || !is_word_char(h[pos - 1]);
        const std::size_t end = pos + p.size();
        const bool right = end == h.size() || !is_word_char(h[end]);
        if (left && right)
            return true;
    }
    return false;
}

inline std::vector<std::string> split_whitespace(std::string_view s)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!cur.empty())
                out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty())
        out.push_back(std::move(cur));
    return out;
}

inline std::string capitalize(std::string s)
{
    if (!s.empty())
        s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

} // namespace vsa::text
