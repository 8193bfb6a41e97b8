#include <gtest/gtest.h>

#include <set>

#include "vsa/functions/fixtures.hpp"
#include "vsa/protocol/dataset.hpp"

using namespace vsa;
using namespace vsa::protocol;

namespace {

const functions::FixtureBundle& bundle()
{
    static const auto b = functions::make_synthetic_bundle(24, 1);
    return b;
}

std::vector<functions::FunctionSpec> specs()
{
    return {functions::detect_spec(), functions::segment_spec(), functions::scene_spec()};
}

std::vector<DatasetRecord> generate(DatasetCounts counts, std::uint64_t seed)
{
    return generate_fc_dataset(default_templates(), bundle(), specs(), counts, seed);
}

} // namespace

TEST(Dataset, DeterministicForSeed)
{
    const DatasetCounts c{40, 10, 10, 10};
    EXPECT_EQ(to_jsonl(generate(c, 3)), to_jsonl(generate(c, 3)));
    EXPECT_NE(to_jsonl(generate(c, 3)), to_jsonl(generate(c, 4)));
}

TEST(Dataset, CountsAndIds)
{
    const auto recs = generate({30, 7, 11, 5}, 1);
    ASSERT_EQ(recs.size(), 53u);
    std::map<RecordKind, std::size_t> train;
    std::size_t unseen = 0;
    std::set<std::string> ids;
    for (const auto& r : recs) {
        ids.insert(r.id);
        if (r.split == Split::train)
            ++train[r.kind];
        else
            ++unseen;
    }
    EXPECT_EQ(ids.size(), recs.size());
    EXPECT_EQ(train[RecordKind::positive], 30u);
    EXPECT_EQ(train[RecordKind::negative], 7u);
    EXPECT_EQ(train[RecordKind::no_call], 11u);
    EXPECT_EQ(unseen, 5u);
    EXPECT_TRUE(generate({}, 1).empty());
}

TEST(Dataset, EveryRecordValidates)
{
    for (const auto& r : generate({120, 30, 30, 30}, 9)) {
        const auto v = validate_record(r, specs());
        EXPECT_TRUE(v.empty()) << r.id << ": " << (v.empty() ? "" : v.front().message);
        EXPECT_EQ(r.expectations.id, r.id);
        EXPECT_EQ(r.expectations.query, r.query);
        EXPECT_EQ(r.expectations.reference_reply, r.gold.replying);
    }
}

TEST(Dataset, SemanticsMatchFixtures)
{
    for (const auto& r : generate({60, 20, 20, 0}, 2)) {
        const auto* fx = bundle().find(*r.image_ref);
        ASSERT_TRUE(fx);
        if (r.kind == RecordKind::negative) {
            const auto& target = r.gold.calling->api_params.at("target");
            EXPECT_FALSE(fx->present_objects.count(target)) << r.id;
        } else if (r.gold.calling && r.gold.calling->api_name == "detect") {
            const auto& target = r.gold.calling->api_params.at("target");
            const auto det = functions::fixture_detect(*fx, target);
            ASSERT_FALSE(det.empty());
            EXPECT_NE(r.gold.replying.find(functions::format_box(det.front().bbox)), std::string::npos);
        } else if (r.kind == RecordKind::no_call) {
            EXPECT_FALSE(r.expectations.expect_call);
        }
    }
}

TEST(Dataset, UnseenTemplatesAreDisjointFromTraining)
{
    std::set<std::string> train_queries, unseen_queries;
    for (const auto& t : default_templates())
        (t.unseen ? unseen_queries : train_queries).insert(t.query);
    for (const auto& q : unseen_queries)
        EXPECT_FALSE(train_queries.count(q)) << q;

    std::set<std::string> train_shapes;
    const auto recs = generate({100, 30, 30, 40}, 5);
    auto shape_of = [](const DatasetRecord& r) {
        for (const auto& t : default_templates()) {
            const auto brace = t.query.find('{');
            const auto prefix = t.query.substr(0, brace);
            if (r.query.rfind(prefix, 0) == 0 && (brace != std::string::npos || r.query == t.query))
                return t.id;
        }
        return std::string("?");
    };
    for (const auto& r : recs)
        if (r.split == Split::train)
            train_shapes.insert(shape_of(r));
    for (const auto& r : recs)
        if (r.split == Split::test_unseen) {
            const auto id = shape_of(r);
            EXPECT_NE(id, "?") << r.query;
            EXPECT_FALSE(train_shapes.count(id)) << r.query;
        }
}

TEST(Dataset, JsonlRoundTrip)
{
    const auto recs = generate({20, 5, 5, 5}, 8);
    const auto text = to_jsonl(recs);
    EXPECT_EQ(from_jsonl(text), recs);
    EXPECT_EQ(from_jsonl("\n" + text + "\n\n"), recs);
}

TEST(Dataset, JsonlErrorsNameTheLine)
{
    const auto good = to_jsonl(generate({1, 0, 0, 0}, 1));
    try {
        from_jsonl(good + "{not json}\n");
        FAIL();
    } catch (const std::invalid_argument& e) {
        EXPECT_EQ(std::string(e.what()).rfind("line 2:", 0), 0u) << e.what();
    }
    auto j = record_to_json(generate({1, 0, 0, 0}, 1).front());
    j["schema_version"] = 2;
    EXPECT_THROW(record_from_json(j), std::invalid_argument);
}

TEST(Dataset, ValidateRecordFlagsEachViolation)
{
    DatasetRecord base;
    for (const auto& rec : generate({20, 0, 0, 0}, 1))
        if (rec.gold.calling->api_name == "detect")
            base = rec;
    ASSERT_TRUE(base.gold.calling);
    auto codes = [](const DatasetRecord& r) {
        std::set<ViolationCode> s;
        for (const auto& v : validate_record(r, specs()))
            s.insert(v.code);
        return s;
    };

    auto r = base;
    r.id.clear();
    EXPECT_TRUE(codes(r).count(ViolationCode::empty_id));

    r = base;
    r.gold.calling->api_name = "teleport";
    r.expectations.expect_call = "teleport";
    EXPECT_TRUE(codes(r).count(ViolationCode::unknown_function));

    r = base;
    r.gold.calling->api_params.clear();
    EXPECT_TRUE(codes(r).count(ViolationCode::missing_param));

    r = base;
    r.gold.calling->api_params["colour"] = "red";
    EXPECT_TRUE(codes(r).count(ViolationCode::unexpected_param));

    r = base;
    r.gold.replying = " padded";
    EXPECT_TRUE(codes(r).count(ViolationCode::invalid_reply));

    r = base;
    r.kind = RecordKind::no_call;
    EXPECT_TRUE(codes(r).count(ViolationCode::kind_mismatch));

    r = base;
    r.kind = RecordKind::negative;
    EXPECT_TRUE(codes(r).count(ViolationCode::negative_not_marked));

    r = base;
    r.expectations.expect_call = std::nullopt;
    EXPECT_TRUE(codes(r).count(ViolationCode::expectation_mismatch));
}

TEST(Dataset, GeneratorRejectsBadTemplates)
{
    auto tpls = default_templates();
    tpls.push_back({"bad", RecordKind::positive, "teleport", "q", "t", "r", false});
    EXPECT_THROW(generate_fc_dataset(tpls, bundle(), specs(), {1, 0, 0, 0}, 1), GenerationError);
    EXPECT_THROW(generate_fc_dataset({}, bundle(), specs(), {1, 0, 0, 0}, 1), GenerationError);
    std::vector<ConversationTemplate> seen_only;
    for (const auto& t : default_templates())
        if (!t.unseen)
            seen_only.push_back(t);
    EXPECT_THROW(generate_fc_dataset(seen_only, bundle(), specs(), {0, 0, 0, 1}, 1), GenerationError);
}
