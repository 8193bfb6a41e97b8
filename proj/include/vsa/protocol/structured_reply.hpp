#pragma once

// Wire format for Thinking / Calling / Replying model outputs.
//
//   <think>ESCAPED</think>
//   <call>{"api_name":"detect","api_params":{"target":"navigation probe"}}</call>
//   <reply>ESCAPED</reply>
//
// Free text is escaped with a backslash: '\' -> "\\", '<' -> "\<". The call payload is a JSON
// object whose '<' characters are written as \u003c. Full escaping table: docs/wire-format.md.

#include <map>
#include <optional>
#include <cctype>
#include <string>
#include <string_view>

#include "json.hpp"
#include "vsa/result.hpp"

namespace vsa::protocol {

struct FunctionCall {
    std::string api_name;
    std::map<std::string, std::string> api_params;

    bool operator==(const FunctionCall&) const = default;
};

struct StructuredReply {
    std::string thinking;
    std::optional<FunctionCall> calling; // absent: answer directly without a function
    std::string replying;

    bool operator==(const StructuredReply&) const = default;
};

enum class ParseErrorKind { missing_reply, duplicate_block, malformed_call_payload, unbalanced_tags };

inline const char* to_string(ParseErrorKind k)
{
    switch (k) {
    case ParseErrorKind::missing_reply:
        return "MissingReply";
    case ParseErrorKind::duplicate_block:
        return "DuplicateBlock";
    case ParseErrorKind::malformed_call_payload:
        return "MalformedCallPayload";
    case ParseErrorKind::unbalanced_tags:
        return "UnbalancedTags";
    }
    return "?";
}

struct ParseError {
    ParseErrorKind kind;
    std::size_t offset = 0;       // byte offset where the problem was detected
    std::size_t span_begin = 0;   // offending byte range (payload span for MalformedCallPayload)
    std::size_t span_end = 0;
    std::string message;
};

inline bool is_valid_api_name(std::string_view name)
{
    if (name.empty())
        return false;
    for (char c : name)
        if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-'))
            return false;
    return true;
}

inline bool is_space(char c)
{
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && is_space(s.front()))
        s.remove_prefix(1);
    while (!s.empty() && is_space(s.back()))
        s.remove_suffix(1);
    return s;
}

/// Canonical form: thinking and replying without leading/trailing whitespace.
inline StructuredReply normalized(StructuredReply r)
{
    r.thinking = std::string(trim(r.thinking));
    r.replying = std::string(trim(r.replying));
    return r;
}

/// A reply is valid for rendering when it is already in canonical form, replying is non-empty
/// and any call has a well-formed api_name.
inline bool is_valid(const StructuredReply& r)
{
    if (trim(r.replying).empty() || trim(r.replying).size() != r.replying.size())
        return false;
    if (trim(r.thinking).size() != r.thinking.size())
        return false;
    return !r.calling || is_valid_api_name(r.calling->api_name);
}

inline std::string escape_text(std::string_view s)
{
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (c == '\\' || c == '<')
            out.push_back('\\');
        out.push_back(c);
    }
    return out;
}

inline std::string unescape_text(std::string_view s)
{
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size())
            ++i;
        out.push_back(s[i]);
    }
    return out;
}

inline nlohmann::json call_to_json(const FunctionCall& c)
{
    return {{"api_name", c.api_name}, {"api_params", c.api_params}};
}

/// Compact JSON for the call block; '<' inside strings becomes \u003c so the block never
/// contains a tag opener.
inline std::string render_call_payload(const FunctionCall& c)
{
    const std::string raw = call_to_json(c).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    std::string out;
    out.reserve(raw.size());
    for (char ch : raw) {
        if (ch == '<')
            out += "\\u003c";
        else
            out.push_back(ch);
    }
    return out;
}

inline std::string render_structured(const StructuredReply& r)
{
    std::string out = "<think>" + escape_text(r.thinking) + "</think>\n";
    if (r.calling)
        out += "<call>" + render_call_payload(*r.calling) + "</call>\n";
    out += "<reply>" + escape_text(r.replying) + "</reply>";
    return out;
}

namespace detail {

enum class Block { think, call, reply };

struct Tag {
    Block block;
    bool closing;
    std::size_t length;
};

inline std::optional<Tag> match_tag(std::string_view text, std::size_t pos)
{
    static constexpr std::pair<std::string_view, Block> names[] = {
        {"think", Block::think}, {"call", Block::call}, {"reply", Block::reply}};
    std::string_view rest = text.substr(pos);
    if (rest.empty() || rest[0] != '<')
        return std::nullopt;
    const bool closing = rest.size() > 1 && rest[1] == '/';
    const std::size_t start = closing ? 2 : 1;
    for (const auto& [name, block] : names) {
        if (rest.size() >= start + name.size() + 1 && rest.substr(start, name.size()) == name &&
            rest[start + name.size()] == '>')
            return Tag{block, closing, start + name.size() + 1};
    }
    return std::nullopt;
}

inline const char* block_name(Block b)
{
    return b == Block::think ? "think" : b == Block::call ? "call" : "reply";
}

inline Result<FunctionCall, ParseError> parse_call_payload(std::string_view payload, std::size_t begin)
{
    const std::size_t end = begin + payload.size();
    auto fail = [&](std::string msg) {
        return unexpected(ParseError{ParseErrorKind::malformed_call_payload, begin, begin, end, std::move(msg)});
    };
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(payload);
    } catch (const nlohmann::json::exception& e) {
        return fail(std::string("call payload is not valid JSON: ") + e.what());
    }
    if (!j.is_object())
        return fail("call payload must be a JSON object");
    if (!j.contains("api_name") || !j["api_name"].is_string())
        return fail("call payload needs a string api_name");
    FunctionCall call;
    call.api_name = j["api_name"].get<std::string>();
    if (!is_valid_api_name(call.api_name))
        return fail("api_name '" + call.api_name + "' does not match [A-Za-z0-9_.-]+");
    if (j.contains("api_params")) {
        const auto& params = j["api_params"];
        if (!params.is_object())
            return fail("api_params must be an object of strings");
        for (const auto& [k, v] : params.items()) {
            if (!v.is_string())
                return fail("api_params['" + k + "'] must be a string");
            call.api_params[k] = v.get<std::string>();
        }
    }
    for (const auto& [k, v] : j.items())
        if (k != "api_name" && k != "api_params")
            return fail("unexpected field '" + k + "' in call payload");
    return call;
}

} // namespace detail

/// Extracts the three components. Text outside blocks is ignored; block contents are trimmed.
/// Every malformed input yields exactly one typed ParseError.
inline Result<StructuredReply, ParseError> parse_structured(std::string_view text)
{
    using detail::Block;
    std::optional<std::string> blocks[3];
    std::optional<FunctionCall> call;
    bool seen[3] = {false, false, false};

    auto error = [](ParseErrorKind kind, std::size_t at, std::string msg, std::size_t span_end = 0) {
        return unexpected(ParseError{kind, at, at, span_end ? span_end : at, std::move(msg)});
    };

    std::size_t pos = 0;
    while (pos < text.size()) {
        if (text[pos] == '\\') {
            pos += 2;
            continue;
        }
        if (text[pos] != '<') {
            ++pos;
            continue;
        }
        const auto tag = detail::match_tag(text, pos);
        if (!tag) {
            ++pos;
            continue;
        }
        const std::size_t tag_at = pos;
        if (tag->closing)
            return error(ParseErrorKind::unbalanced_tags, tag_at,
                         std::string("closing </") + detail::block_name(tag->block) + "> without an opening tag",
                         tag_at + tag->length);
        const auto idx = static_cast<std::size_t>(tag->block);
        if (seen[idx])
            return error(ParseErrorKind::duplicate_block, tag_at,
                         std::string("second <") + detail::block_name(tag->block) + "> block",
                         tag_at + tag->length);
        seen[idx] = true;
        const std::size_t content_begin = tag_at + tag->length;

        if (tag->block == Block::call) {
            const std::size_t close = text.find("</call>", content_begin);
            if (close == std::string_view::npos)
                return error(ParseErrorKind::unbalanced_tags, tag_at, "<call> is never closed", text.size());
            const auto raw = text.substr(content_begin, close - content_begin);
            const auto body = trim(raw);
            const std::size_t body_begin = content_begin + static_cast<std::size_t>(body.data() - raw.data());
            auto parsed = detail::parse_call_payload(body, body_begin);
            if (!parsed)
                return unexpected(parsed.error());
            call = std::move(parsed.value());
            pos = close + 7;
            continue;
        }

        // think / reply: escaped free text until the matching closing tag.
        std::size_t i = content_begin;
        bool closed = false;
        while (i < text.size()) {
            if (text[i] == '\\') {
                i += 2;
                continue;
            }
            if (text[i] == '<') {
                if (const auto inner = detail::match_tag(text, i)) {
                    if (inner->closing && inner->block == tag->block) {
                        closed = true;
                        break;
                    }
                    return error(ParseErrorKind::unbalanced_tags, i,
                                 std::string("unexpected ") + (inner->closing ? "</" : "<") +
                                     detail::block_name(inner->block) + "> inside <" +
                                     detail::block_name(tag->block) + ">",
                                 i + inner->length);
                }
            }
            ++i;
        }
        if (!closed)
            return error(ParseErrorKind::unbalanced_tags, tag_at,
                         std::string("<") + detail::block_name(tag->block) + "> is never closed", text.size());
        const std::size_t content_end = std::min(i, text.size());
        blocks[idx] = std::string(trim(unescape_text(text.substr(content_begin, content_end - content_begin))));
        pos = content_end + tag->length + 1; // closing tag is one '/' longer
    }

    const auto reply_idx = static_cast<std::size_t>(Block::reply);
    if (!blocks[reply_idx] || blocks[reply_idx]->empty())
        return error(ParseErrorKind::missing_reply, text.size(),
                     blocks[reply_idx] ? "<reply> block is empty" : "no <reply> block");

    StructuredReply r;
    r.thinking = blocks[static_cast<std::size_t>(Block::think)].value_or("");
    r.calling = std::move(call);
    r.replying = std::move(*blocks[reply_idx]);
    return r;
}

inline nlohmann::json reply_to_json(const StructuredReply& r)
{
    return {{"thinking", r.thinking},
            {"calling", r.calling ? call_to_json(*r.calling) : nlohmann::json(nullptr)},
            {"replying", r.replying}};
}

inline StructuredReply reply_from_json(const nlohmann::json& j)
{
    StructuredReply r;
    r.thinking = j.value("thinking", std::string());
    r.replying = j.at("replying").get<std::string>();
    if (j.contains("calling") && !j["calling"].is_null()) {
        const auto& c = j["calling"];
        FunctionCall call;
        call.api_name = c.at("api_name").get<std::string>();
        if (c.contains("api_params"))
            call.api_params = c["api_params"].get<std::map<std::string, std::string>>();
        r.calling = std::move(call);
    }
    return r;
}

} // namespace vsa::protocol
