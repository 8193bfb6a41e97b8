#include <gtest/gtest.h>

#include "support/harness.hpp"
#include "support/micro_suite.hpp"
#include "vsa/eval/metrics.hpp"
#include "vsa/eval/report.hpp"
#include "vsa/eval/sweep.hpp"
#include "vsa/protocol/dataset.hpp"

using namespace vsa;
using namespace vsa::eval;
using orchestrator::DispatchTrace;

using testgen::executed;
using testgen::make_case;
using testgen::micro_suite;

TEST(Percent, ExactHalfUpRounding)
{
    EXPECT_EQ(percent_2dp(2, 3), 66.67);
    EXPECT_EQ(percent_2dp(1, 3), 33.33);
    EXPECT_EQ(percent_2dp(1, 8), 12.5);
    EXPECT_EQ(percent_2dp(1, 20000), 0.01);
    EXPECT_EQ(percent_2dp(1, 40000), 0.0);
    EXPECT_EQ(percent_2dp(200, 200), 100.0);
    EXPECT_THROW(percent_2dp(0, 0), std::invalid_argument);
    EXPECT_EQ(round_2dp(83.333333), 83.33);
    EXPECT_EQ(round_2dp(66.666666), 66.67);
}

TEST(Sr, TwoOfThreeAndFailureCategories)
{
    std::vector<EvalCase> cases = {make_case("a", "detect"), make_case("b", "detect"), make_case("c", std::nullopt)};
    std::vector<DispatchTrace> traces = {executed("detect"), executed("segment"), DispatchTrace{}};
    const auto r = eval_sr(cases, traces);
    EXPECT_EQ(r.percent, 66.67);
    EXPECT_EQ(r.successes, 2u);
    EXPECT_EQ(r.wrong_function, 1u);

    EXPECT_EQ(classify_sr(make_case("x", std::nullopt), executed("detect")), SrOutcome::false_positive_call);
    EXPECT_EQ(classify_sr(make_case("x", "detect"), DispatchTrace{}), SrOutcome::missed_call);
    EXPECT_EQ(classify_sr(make_case("x", "detect"), executed("segment")), SrOutcome::wrong_function);
    EXPECT_THROW(eval_sr(cases, {}), std::invalid_argument);
    EXPECT_THROW(eval_sr({}, {}), std::invalid_argument);
}

TEST(KeyHit, WholeWordCaseInsensitiveMacroAverage)
{
    EXPECT_EQ(keyword_hits({"scissors", "cut", "tissue"}, "SCISSORS are cutting the tissue"), 2u);
    EXPECT_EQ(keyword_hits({"cut"}, "cut."), 1u);
    EXPECT_EQ(keyword_hits({"navigation probe"}, "the Navigation Probe is here"), 1u);
    EXPECT_EQ(keyword_hits({"probe"}, "probes"), 0u);

    auto a = make_case("a", std::nullopt);
    a.keywords = {"scissors", "cut", "tissue"};
    auto b = make_case("b", std::nullopt);
    b.keywords = {"drill"};
    auto none = make_case("n", std::nullopt);
    EXPECT_EQ(eval_keyhit({a, b, none}, {"scissors cut tissue", "nothing", "x"}), 50.0);
    EXPECT_EQ(eval_keyhit({a}, {"scissors are cutting tissue"}), 66.67);
    EXPECT_FALSE(eval_keyhit({none}, {"x"}));
}

TEST(Rej, NeedsEmptyEvidenceAndLexiconMatch)
{
    const auto lex = default_lexicon();
    EXPECT_TRUE(is_rejection(executed("detect"), "The drill is not present in this image.", lex));
    EXPECT_TRUE(is_rejection(DispatchTrace{}, "I cannot find any drill.", lex));
    EXPECT_TRUE(is_rejection(executed("segment", functions::rect_mask(4, 4, 0, 0, 0, 0)), "No drill.", lex));
    EXPECT_FALSE(is_rejection(executed("detect", functions::Detections{{"drill", {0, 0, 1, 1}, 1}}), "not present", lex));
    EXPECT_FALSE(is_rejection(executed("detect"), "The drill is at the top.", lex));
    EXPECT_FALSE(is_rejection(executed("detect"), "Nothing notable.", lex));
}

TEST(Lexicon, ParsingAndVersion)
{
    const auto lex = parse_lexicon("# version: 7\n\n# comment\nNot Present\r\nabsent\n");
    EXPECT_EQ(lex.version, "7");
    EXPECT_EQ(lex.phrases, (std::vector<std::string>{"not present", "absent"}));
    EXPECT_THROW(parse_lexicon("# only comments\n"), std::invalid_argument);
    const auto file = load_lexicon(std::string(VSA_SOURCE_DIR) + "/data/rejection_lexicon.txt");
    EXPECT_EQ(file.version, "1");
    auto a = file.phrases, b = default_lexicon().phrases;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
}

TEST(Bleu, Oracles)
{
    EXPECT_EQ(bleu4({"the cat sat on the mat"}, {"the cat sat on the mat"}), 100.0);
    // p1 = 5/6, p2 = 3/5, p3 = 1/4, p4 smoothed to 1/(2*3); equal lengths so no brevity penalty.
    EXPECT_NEAR(bleu4({"the cat sat on the mat"}, {"the cat is on the mat"}), 37.99178428257963, 1e-6);
    // Disjoint vocabulary: every precision is smoothed to 1/(2 count), so a short pair stays well above
    // zero (p = 1/8, 1/6, 1/4, 1/2) and only a large corpus drives the score near zero.
    EXPECT_NEAR(bleu4({"alpha beta gamma delta"}, {"one two three four"}), 100.0 * std::pow(1.0 / 384.0, 0.25), 1e-9);
    std::vector<std::string> cands, refs;
    for (int s = 0; s < 20; ++s) {
        std::string c, r;
        for (int w = 0; w < 40; ++w) {
            c += "c" + std::to_string(s * 40 + w) + " ";
            r += "r" + std::to_string(s * 40 + w) + " ";
        }
        cands.push_back(c);
        refs.push_back(r);
    }
    EXPECT_LT(bleu4(cands, refs), 0.1);
    EXPECT_EQ(bleu_tokens("The Cat, sat!"), (std::vector<std::string>{"the", "cat", "sat"}));
    EXPECT_EQ(bleu4({""}, {"reference"}), 0.0);
    EXPECT_THROW(bleu4({}, {}), std::invalid_argument);
    EXPECT_THROW(bleu4({"a"}, {"a", "b"}), std::invalid_argument);
}

TEST(Bleu, BrevityPenaltyAndCorpusPooling)
{
    // Candidate "the cat" vs reference "the cat sat on": p1 = 1, p2 = 1, p3 and p4 have no n-grams.
    const double expected = std::exp(1.0 - 4.0 / 2.0) * std::pow(1.0 * 1.0 * 0.5 * 0.5, 0.25) * 100.0;
    EXPECT_NEAR(bleu4({"the cat"}, {"the cat sat on"}), expected, 1e-9);
    const std::vector<std::string> c = {"a b c d e", "f g h i j"};
    EXPECT_EQ(bleu4(c, c), 100.0);
}

TEST(IoU, BoxOracles)
{
    EXPECT_NEAR(iou_box({0, 0, 1, 1}, {0.5, 0, 1.5, 1}), 1.0 / 3.0, 1e-12);
    EXPECT_EQ(iou_box({0, 0, 1, 1}, {0, 0, 1, 1}), 1.0);
    EXPECT_EQ(iou_box({0, 0, 0.2, 0.2}, {0.5, 0.5, 1, 1}), 0.0);
    EXPECT_NEAR(iou_box({0, 0, 0.5, 0.5}, {0, 0, 1, 1}), 0.25, 1e-12);
    EXPECT_EQ(iou_box({0.3, 0.3, 0.3, 0.3}, {0.3, 0.3, 0.3, 0.3}), 1.0);
}

TEST(IoU, SymmetricAndBoundedProperty)
{
    Rng rng(31);
    for (int i = 0; i < 2000; ++i) {
        auto box = [&] {
            const double x0 = rng.uniform(), y0 = rng.uniform();
            return functions::Box{x0, y0, rng.uniform(x0, 1), rng.uniform(y0, 1)};
        };
        const auto a = box(), b = box();
        const double v = iou_box(a, b);
        EXPECT_EQ(v, iou_box(b, a));
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
    }
}

TEST(IoU, Masks)
{
    const auto a = functions::rect_mask(10, 10, 0, 0, 5, 10);
    const auto b = functions::rect_mask(10, 10, 5, 0, 10, 10);
    const auto c = functions::rect_mask(10, 10, 0, 0, 10, 10);
    EXPECT_EQ(iou_mask(a, b), 0.0);
    EXPECT_EQ(iou_mask(a, c), 0.5);
    EXPECT_EQ(iou_mask(a, a), 1.0);
    const auto empty = functions::rect_mask(10, 10, 0, 0, 0, 0);
    EXPECT_EQ(iou_mask(empty, empty), 1.0);
    EXPECT_EQ(iou_mask(a, empty), 0.0);
    EXPECT_THROW(iou_mask(a, functions::rect_mask(5, 5, 0, 0, 1, 1)), std::invalid_argument);
    EXPECT_EQ(mean_iou({0.5, 1.0}), 75.0);
    EXPECT_FALSE(mean_iou({}));
}

TEST(MicroSuite, HandComputedMetrics)
{
    const auto m = micro_suite();
    const auto sr = eval_sr(m.cases, m.traces);
    EXPECT_EQ(sr.percent, 70.0);
    EXPECT_EQ(sr.false_positive_calls, 1u);
    EXPECT_EQ(sr.wrong_function, 1u);
    EXPECT_EQ(sr.missed_calls, 1u);
    EXPECT_EQ(eval_keyhit(m.cases, m.replies), 83.33);
    EXPECT_EQ(eval_rej(m.cases, m.traces, m.replies, default_lexicon()), 33.33);
}

TEST(MicroSuite, AggregatesReconcileWithRows)
{
    const auto m = micro_suite();
    std::vector<CaseRow> rows;
    for (std::size_t i = 0; i < m.cases.size(); ++i)
        rows.push_back(score_case(m.cases[i], m.traces[i], m.replies[i], default_lexicon()));
    const auto a = aggregate_rows(rows);
    EXPECT_EQ(a.sr.percent, eval_sr(m.cases, m.traces).percent);
    EXPECT_EQ(a.keyhit, eval_keyhit(m.cases, m.replies));
    EXPECT_EQ(a.rej, eval_rej(m.cases, m.traces, m.replies, default_lexicon()));
    EXPECT_EQ(a.bleu4, 100.0);
    EXPECT_FALSE(a.det_miou);

    EvalReport rep{a, rows, {{"backend", "test"}}};
    const auto j = report_to_json(rep);
    EXPECT_EQ(j["metrics"]["sr"], 70.0);
    EXPECT_EQ(j["metrics"]["sr_breakdown"]["missed_call"], 1);
    EXPECT_TRUE(j["metrics"]["det_miou"].is_null());
    std::vector<CaseRow> back;
    for (const auto& r : j["rows"])
        back.push_back(row_from_json(r));
    EXPECT_EQ(back, rows);
    const auto recomputed = aggregate_rows(back);
    EXPECT_EQ(recomputed.sr.percent, a.sr.percent);
    EXPECT_EQ(recomputed.keyhit, a.keyhit);
    EXPECT_EQ(recomputed.rej, a.rej);

    const auto md = report_to_markdown(rep);
    EXPECT_NE(md.find("| SR | 70.00 |"), std::string::npos);
    EXPECT_NE(md.find("| Det mIoU | n/a |"), std::string::npos);
    EXPECT_NE(md.find("| c02 | detect | segment | 2 | wrong_function | - |"), std::string::npos);
}

TEST(CaseIoU, MissingPredictionsScoreZero)
{
    auto c = make_case("d", "detect");
    c.gt_boxes = {{0, 0, 0.5, 0.5}};
    EXPECT_EQ(case_det_iou(c, DispatchTrace{}), 0.0);
    EXPECT_NEAR(case_det_iou(c, executed("detect", functions::Detections{{"x", {0, 0, 1, 1}, 0.2},
                                                                          {"x", {0, 0, 0.5, 0.5}, 0.9}})),
                1.0, 1e-12);
    auto s = make_case("s", "segment");
    s.gt_mask = functions::rect_mask(10, 10, 0, 0, 5, 5);
    EXPECT_EQ(case_seg_iou(s, DispatchTrace{}), 0.0);
    EXPECT_EQ(case_seg_iou(s, executed("segment", *s.gt_mask)), 1.0);
}

TEST(RunEval, EndToEndOnGeneratedSuite)
{
    const auto bundle = testgen::shared_bundle();
    const std::vector<functions::FunctionSpec> specs = {functions::detect_spec(), functions::segment_spec(),
                                                         functions::scene_spec()};
    const auto recs = protocol::generate_fc_dataset(protocol::default_templates(), *bundle, specs, {30, 10, 10, 10}, 4);
    auto orch = testgen::fixture_orchestrator(
        std::make_shared<orchestrator::ScriptedBackend>(orchestrator::script_from_records(recs)));
    const auto rep = run_eval(orch, cases_from_records(recs));
    EXPECT_EQ(rep.metrics.sr.percent, 100.0);
    EXPECT_EQ(rep.metrics.keyhit, 100.0);
    EXPECT_EQ(rep.metrics.rej, 100.0);
    EXPECT_EQ(rep.metrics.bleu4, 100.0);
    EXPECT_EQ(rep.metrics.det_miou, 100.0);
    EXPECT_EQ(rep.metrics.seg_miou, 100.0);
    EXPECT_TRUE(std::is_sorted(rep.rows.begin(), rep.rows.end(),
                               [](const auto& a, const auto& b) { return a.id < b.id; }));
    EXPECT_EQ(rep.config["case_count"], 60);

    auto cases = cases_from_records(recs);
    EXPECT_EQ(parse_cases(protocol::to_jsonl(recs)), cases);
    cases.push_back(cases.front());
    EXPECT_THROW(run_eval(orch, cases), std::invalid_argument);
    auto bad = cases_from_records(recs);
    bad.front().image_ref = "missing";
    EXPECT_THROW(run_eval(orch, bad), std::invalid_argument);
    EXPECT_THROW(run_eval(orch, {}), std::invalid_argument);
}

TEST(FunctionSweep, SrIsMonotoneNonIncreasing)
{
    const auto bundle = testgen::shared_bundle();
    const std::vector<functions::FunctionSpec> specs = {functions::detect_spec(), functions::segment_spec()};
    std::vector<protocol::ConversationTemplate> tpls;
    for (const auto& t : protocol::default_templates())
        if (t.api_name != "analyze_scene")
            tpls.push_back(t);
    const auto recs = protocol::generate_fc_dataset(tpls, *bundle, specs, {80, 20, 20, 0}, 3);
    const auto script = orchestrator::script_from_records(recs);
    OrchestratorFactory factory = [&](std::size_t n) {
        auto reg = std::make_shared<const functions::Registry>(
            functions::make_fixture_registry(bundle, functions::function_names(n)));
        auto backend = std::make_shared<ConfusionBackend>(std::make_shared<orchestrator::ScriptedBackend>(script),
                                                          reg->list());
        return orchestrator::Orchestrator(backend, reg, testgen::bundle_resolver(bundle));
    };
    const auto rows = sweep_functions(factory, cases_from_records(recs));
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_EQ(rows.front().sr, 100.0);
    for (std::size_t i = 1; i < rows.size(); ++i)
        EXPECT_LE(rows[i].sr, rows[i - 1].sr) << "n=" << rows[i].function_count;
    EXPECT_LT(rows.back().sr, rows.front().sr);
    EXPECT_EQ(function_sweep_csv(rows).rfind("function_count,sr,keyhit\n2,100.00,", 0), 0u);
}
