#include <gtest/gtest.h>

#include "support/generators.hpp"
#include "vsa/protocol/structured_reply.hpp"

using namespace vsa;
using namespace vsa::protocol;

namespace {

ParseError parse_error(std::string_view text)
{
    auto r = parse_structured(text);
    EXPECT_FALSE(r) << text;
    return r ? ParseError{} : r.error();
}

} // namespace

TEST(Escaping, Table)
{
    EXPECT_EQ(escape_text("a<b"), "a\\<b");
    EXPECT_EQ(escape_text("back\\slash"), "back\\\\slash");
    EXPECT_EQ(escape_text("</reply>"), "\\</reply>");
    EXPECT_EQ(escape_text("> & \" plain"), "> & \" plain");
    EXPECT_EQ(unescape_text(escape_text("\\<\\\\<")), "\\<\\\\<");
}

TEST(Escaping, CallPayloadHidesTagOpeners)
{
    FunctionCall c{"detect", {{"target", "</call><reply>x</reply>"}}};
    const auto payload = render_call_payload(c);
    EXPECT_EQ(payload.find('<'), std::string::npos);
    EXPECT_NE(payload.find("\\u003c/call>"), std::string::npos);
}

TEST(Render, CanonicalLayout)
{
    StructuredReply r{"t", FunctionCall{"detect", {{"target", "drill"}}}, "ok"};
    EXPECT_EQ(render_structured(r),
              "<think>t</think>\n<call>{\"api_name\":\"detect\",\"api_params\":{\"target\":\"drill\"}}</call>\n"
              "<reply>ok</reply>");
    EXPECT_EQ(render_structured({"", std::nullopt, "hi"}), "<think></think>\n<reply>hi</reply>");
}

TEST(Parse, AcceptsSurroundingTextAndWhitespace)
{
    auto r = parse_structured("preamble <think>  a  </think>\n\n<reply>\n b \n</reply> trailing");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->thinking, "a");
    EXPECT_EQ(r->replying, "b");
    EXPECT_FALSE(r->calling);
}

TEST(Parse, ThinkIsOptionalAndParamsDefaultEmpty)
{
    auto r = parse_structured("<call>{\"api_name\":\"analyze_scene\"}</call><reply>x</reply>");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->thinking, "");
    ASSERT_TRUE(r->calling);
    EXPECT_TRUE(r->calling->api_params.empty());
}

TEST(ParseErrors, MissingReply)
{
    EXPECT_EQ(parse_error("<think>x</think>").kind, ParseErrorKind::missing_reply);
    EXPECT_EQ(parse_error("<think>x</think><reply>   </reply>").kind, ParseErrorKind::missing_reply);
    EXPECT_EQ(parse_error("").kind, ParseErrorKind::missing_reply);
}

TEST(ParseErrors, DuplicateBlock)
{
    const std::string text = "<reply>a</reply><reply>b</reply>";
    const auto e = parse_error(text);
    EXPECT_EQ(e.kind, ParseErrorKind::duplicate_block);
    EXPECT_EQ(e.offset, 16u);
    EXPECT_EQ(parse_error("<call>{\"api_name\":\"a\"}</call><call>{\"api_name\":\"b\"}</call><reply>x</reply>").kind,
              ParseErrorKind::duplicate_block);
}

TEST(ParseErrors, MalformedCallPayloadReportsSpan)
{
    const std::string text = "<think>t</think><call> {\"api_name\": 3} </call><reply>x</reply>";
    const auto e = parse_error(text);
    EXPECT_EQ(e.kind, ParseErrorKind::malformed_call_payload);
    EXPECT_EQ(text.substr(e.span_begin, e.span_end - e.span_begin), "{\"api_name\": 3}");

    for (const char* bad : {"<call>not json</call><reply>x</reply>", "<call>[1]</call><reply>x</reply>",
                            "<call>{\"api_name\":\"a b\"}</call><reply>x</reply>",
                            "<call>{\"api_name\":\"a\",\"api_params\":{\"k\":1}}</call><reply>x</reply>",
                            "<call>{\"api_name\":\"a\",\"extra\":true}</call><reply>x</reply>",
                            "<call></call><reply>x</reply>"})
        EXPECT_EQ(parse_error(bad).kind, ParseErrorKind::malformed_call_payload) << bad;
}

TEST(ParseErrors, UnbalancedTags)
{
    EXPECT_EQ(parse_error("<reply>never closed").kind, ParseErrorKind::unbalanced_tags);
    EXPECT_EQ(parse_error("</think><reply>x</reply>").kind, ParseErrorKind::unbalanced_tags);
    EXPECT_EQ(parse_error("<think>a<reply>b</reply></think>").kind, ParseErrorKind::unbalanced_tags);
    EXPECT_EQ(parse_error("<call>{\"api_name\":\"a\"}<reply>x</reply>").kind, ParseErrorKind::unbalanced_tags);
}

TEST(RoundTrip, DelimiterAdversarialProperty)
{
    Rng rng(20240611);
    for (int i = 0; i < 10000; ++i) {
        const auto r = testgen::random_reply(rng);
        ASSERT_TRUE(is_valid(r) || (r.calling && !is_valid_api_name(r.calling->api_name)));
        const auto text = render_structured(r);
        const auto parsed = parse_structured(text);
        ASSERT_TRUE(parsed) << "case " << i << ": " << text << "\n" << parsed.error().message;
        ASSERT_EQ(*parsed, r) << "case " << i << ": " << text;
    }
}

TEST(RoundTrip, NormalizesNonCanonicalInput)
{
    StructuredReply r{"  spaced  ", std::nullopt, "\n answer \t"};
    EXPECT_FALSE(is_valid(r));
    const auto parsed = parse_structured(render_structured(r));
    ASSERT_TRUE(parsed);
    EXPECT_EQ(*parsed, normalized(r));
}

TEST(Fuzz, MutationsYieldTypedResultsOnly)
{
    Rng rng(77);
    std::size_t errors = 0;
    for (int i = 0; i < 5000; ++i) {
        auto text = render_structured(testgen::random_reply(rng));
        const auto edits = 1 + rng.below(4);
        for (std::size_t k = 0; k < edits; ++k)
            text = testgen::mutate(rng, text);
        Result<StructuredReply, ParseError> parsed = StructuredReply{};
        ASSERT_NO_THROW(parsed = parse_structured(text)) << text;
        if (parsed) {
            EXPECT_FALSE(parsed->replying.empty());
            const auto again = parse_structured(render_structured(*parsed));
            ASSERT_TRUE(again);
            EXPECT_EQ(*again, *parsed);
        } else {
            ++errors;
            const auto& e = parsed.error();
            EXPECT_LE(e.offset, text.size());
            EXPECT_LE(e.span_begin, e.span_end);
            EXPECT_LE(e.span_end, text.size());
            EXPECT_FALSE(e.message.empty());
        }
    }
    EXPECT_GT(errors, 500u);
}

TEST(Json, ReplyRoundTrip)
{
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const auto r = testgen::random_reply(rng);
        EXPECT_EQ(reply_from_json(reply_to_json(r)), r);
    }
}
