#pragma once

#include <algorithm>
#include <cstdio>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vsa/eval/case.hpp"
#include "vsa/eval/metrics.hpp"
#include "vsa/orchestrator/dispatch.hpp"
#include "vsa/protocol/dataset.hpp"

namespace vsa::eval {

inline constexpr int report_schema_version = 1;

struct CaseRow {
    std::string id;
    std::optional<std::string> expect_call;
    std::optional<std::string> called;
    int rounds = 1;
    std::optional<std::string> error; // dispatch error code
    SrOutcome sr = SrOutcome::success;
    std::size_t keyword_hits = 0;
    std::size_t keyword_total = 0;
    bool is_negative = false;
    std::optional<bool> rejected;  // negatives only
    std::optional<double> det_iou; // cases with a ground-truth box
    std::optional<double> seg_iou; // cases with a ground-truth mask
    std::string final_reply;
    std::string reference_reply;
    std::string trace_id;

    bool operator==(const CaseRow&) const = default;
};

struct Aggregates {
    SrResult sr;
    std::optional<double> keyhit;
    std::optional<double> rej;
    std::optional<double> bleu4;
    std::optional<double> det_miou;
    std::optional<double> seg_miou;
};

struct EvalReport {
    Aggregates metrics;
    std::vector<CaseRow> rows; // ordered by case id
    nlohmann::json config = nlohmann::json::object();
};

/// Aggregates computed from per-case rows alone; run_eval reports exactly these values.
inline Aggregates aggregate_rows(const std::vector<CaseRow>& rows)
{
    if (rows.empty())
        throw std::invalid_argument("no evaluation rows");
    Aggregates a;
    a.sr.total = rows.size();
    double key_sum = 0;
    std::size_t key_cases = 0, negatives = 0, rejected = 0;
    std::vector<double> det, seg;
    std::vector<std::string> cands, refs;
    for (const auto& r : rows) {
        switch (r.sr) {
        case SrOutcome::success:
            ++a.sr.successes;
            break;
        case SrOutcome::false_positive_call:
            ++a.sr.false_positive_calls;
            break;
        case SrOutcome::wrong_function:
            ++a.sr.wrong_function;
            break;
        case SrOutcome::missed_call:
            ++a.sr.missed_calls;
            break;
        }
        if (r.keyword_total > 0) {
            key_sum += static_cast<double>(r.keyword_hits) / static_cast<double>(r.keyword_total);
            ++key_cases;
        }
        if (r.is_negative) {
            ++negatives;
            rejected += r.rejected.value_or(false);
        }
        if (r.det_iou)
            det.push_back(*r.det_iou);
        if (r.seg_iou)
            seg.push_back(*r.seg_iou);
        if (!r.reference_reply.empty()) {
            cands.push_back(r.final_reply);
            refs.push_back(r.reference_reply);
        }
    }
    a.sr.percent = percent_2dp(a.sr.successes, a.sr.total);
    if (key_cases)
        a.keyhit = round_2dp(key_sum / static_cast<double>(key_cases) * 100.0);
    if (negatives)
        a.rej = percent_2dp(rejected, negatives);
    if (!cands.empty())
        a.bleu4 = bleu4(cands, refs);
    a.det_miou = mean_iou(det);
    a.seg_miou = mean_iou(seg);
    return a;
}

/// Best-scoring predicted box against the single ground-truth box; no prediction scores 0.
inline double case_det_iou(const EvalCase& c, const orchestrator::DispatchTrace& t)
{
    const functions::Detections* dets = nullptr;
    if (t.function_result)
        dets = std::get_if<functions::Detections>(&t.function_result->value);
    if (!dets || dets->empty())
        return 0.0;
    const auto best = std::max_element(dets->begin(), dets->end(),
                                       [](const auto& a, const auto& b) { return a.score < b.score; });
    return iou_box(c.gt_boxes.front(), best->bbox);
}

/// No predicted mask counts as an empty mask of the ground-truth size.
inline double case_seg_iou(const EvalCase& c, const orchestrator::DispatchTrace& t)
{
    const auto& gt = *c.gt_mask;
    if (t.function_result)
        if (const auto* m = std::get_if<functions::SegmentationMask>(&t.function_result->value))
            if (m->width == gt.width && m->height == gt.height)
                return iou_mask(gt, *m);
    functions::SegmentationMask empty{gt.width, gt.height, {static_cast<std::uint32_t>(gt.width * gt.height)}};
    return iou_mask(gt, empty);
}

inline CaseRow score_case(const EvalCase& c, const orchestrator::DispatchTrace& t, const std::string& reply,
                          const RejectionLexicon& lex)
{
    CaseRow r;
    r.id = c.id;
    r.expect_call = c.expect_call;
    if (t.executed_call)
        r.called = t.executed_call->api_name;
    r.rounds = t.rounds;
    if (t.error)
        r.error = orchestrator::to_string(t.error->code);
    r.sr = classify_sr(c, t);
    r.keyword_total = c.keywords.size();
    r.keyword_hits = keyword_hits(c.keywords, reply);
    r.is_negative = c.is_negative;
    if (c.is_negative)
        r.rejected = is_rejection(t, reply, lex);
    if (!c.gt_boxes.empty())
        r.det_iou = case_det_iou(c, t);
    if (c.gt_mask)
        r.seg_iou = case_seg_iou(c, t);
    r.final_reply = reply;
    r.reference_reply = c.reference_reply;
    r.trace_id = t.trace_id;
    return r;
}

struct EvalOptions {
    RejectionLexicon lexicon = default_lexicon();
    nlohmann::json config = nlohmann::json::object();
};

/// Runs every case in its own fresh session. Cases whose image is unknown are rejected up front.
inline EvalReport run_eval(const orchestrator::Orchestrator& orch, std::vector<EvalCase> cases,
                           const EvalOptions& opts = {})
{
    if (cases.empty())
        throw std::invalid_argument("run_eval: empty case list");
    std::set<std::string> ids;
    for (const auto& c : cases) {
        if (auto err = check_case(c))
            throw std::invalid_argument("run_eval: " + *err);
        if (!ids.insert(c.id).second)
            throw std::invalid_argument("run_eval: duplicate case id '" + c.id + "'");
        orchestrator::Session probe;
        if (c.image_ref && !orch.image_resolves(probe, *c.image_ref))
            throw std::invalid_argument("run_eval: case '" + c.id + "' references unknown image '" + *c.image_ref +
                                        "'");
    }
    std::sort(cases.begin(), cases.end(), [](const auto& a, const auto& b) { return a.id < b.id; });

    EvalReport report;
    report.config = opts.config;
    report.config["case_count"] = cases.size();
    report.config["function_count"] = orch.registry().size();
    report.config["lexicon_version"] = opts.lexicon.version;
    for (const auto& c : cases) {
        orchestrator::Session session;
        session.id = "eval-" + c.id;
        const auto out = orch.handle_query(session, c.query, c.image_ref);
        report.rows.push_back(score_case(c, out.trace, out.final_reply, opts.lexicon));
    }
    report.metrics = aggregate_rows(report.rows);
    return report;
}

inline std::vector<EvalCase> cases_from_records(const std::vector<protocol::DatasetRecord>& records)
{
    std::vector<EvalCase> cases;
    cases.reserve(records.size());
    for (const auto& r : records)
        cases.push_back(r.expectations);
    return cases;
}

/// Accepts JSONL of EvalCase objects or of dataset records (which carry an "expectations" field).
inline std::vector<EvalCase> parse_cases(std::string_view text)
{
    std::vector<EvalCase> cases;
    std::size_t line_no = 0, start = 0;
    while (start <= text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos)
            end = text.size();
        ++line_no;
        const auto line = protocol::trim(text.substr(start, end - start));
        start = end + 1;
        if (line.empty())
            continue;
        try {
            const auto j = nlohmann::json::parse(line);
            cases.push_back(j.contains("expectations") ? j["expectations"].get<EvalCase>() : j.get<EvalCase>());
        } catch (const std::exception& e) {
            throw std::invalid_argument("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return cases;
}

// ---------------------------------------------------------------------------
// Output

inline nlohmann::json opt_number(const std::optional<double>& v)
{
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json row_to_json(const CaseRow& r)
{
    auto opt_str = [](const std::optional<std::string>& s) { return s ? nlohmann::json(*s) : nlohmann::json(nullptr); };
    return {{"id", r.id},
            {"expect_call", opt_str(r.expect_call)},
            {"called", opt_str(r.called)},
            {"rounds", r.rounds},
            {"error", opt_str(r.error)},
            {"sr_outcome", to_string(r.sr)},
            {"keyword_hits", r.keyword_hits},
            {"keyword_total", r.keyword_total},
            {"is_negative", r.is_negative},
            {"rejected", r.rejected ? nlohmann::json(*r.rejected) : nlohmann::json(nullptr)},
            {"det_iou", opt_number(r.det_iou)},
            {"seg_iou", opt_number(r.seg_iou)},
            {"final_reply", r.final_reply},
            {"reference_reply", r.reference_reply},
            {"trace_id", r.trace_id}};
}

inline CaseRow row_from_json(const nlohmann::json& j)
{
    auto opt_str = [&](const char* k) -> std::optional<std::string> {
        return j[k].is_null() ? std::nullopt : std::optional(j[k].get<std::string>());
    };
    auto opt_num = [&](const char* k) -> std::optional<double> {
        return j[k].is_null() ? std::nullopt : std::optional(j[k].get<double>());
    };
    CaseRow r;
    r.id = j.at("id").get<std::string>();
    r.expect_call = opt_str("expect_call");
    r.called = opt_str("called");
    r.rounds = j.at("rounds").get<int>();
    r.error = opt_str("error");
    const auto outcome = j.at("sr_outcome").get<std::string>();
    for (auto o : {SrOutcome::success, SrOutcome::false_positive_call, SrOutcome::wrong_function,
                   SrOutcome::missed_call})
        if (outcome == to_string(o))
            r.sr = o;
    r.keyword_hits = j.at("keyword_hits").get<std::size_t>();
    r.keyword_total = j.at("keyword_total").get<std::size_t>();
    r.is_negative = j.at("is_negative").get<bool>();
    if (!j["rejected"].is_null())
        r.rejected = j["rejected"].get<bool>();
    r.det_iou = opt_num("det_iou");
    r.seg_iou = opt_num("seg_iou");
    r.final_reply = j.at("final_reply").get<std::string>();
    r.reference_reply = j.at("reference_reply").get<std::string>();
    r.trace_id = j.at("trace_id").get<std::string>();
    return r;
}

inline nlohmann::json report_to_json(const EvalReport& rep)
{
    const auto& m = rep.metrics;
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows)
        rows.push_back(row_to_json(r));
    return {{"schema_version", report_schema_version},
            {"config", rep.config},
            {"metrics",
             {{"sr", m.sr.percent},
              {"sr_breakdown",
               {{"total", m.sr.total},
                {"successes", m.sr.successes},
                {"false_positive_call", m.sr.false_positive_calls},
                {"wrong_function", m.sr.wrong_function},
                {"missed_call", m.sr.missed_calls}}},
              {"keyhit", opt_number(m.keyhit)},
              {"rej", opt_number(m.rej)},
              {"bleu4", opt_number(m.bleu4)},
              {"det_miou", opt_number(m.det_miou)},
              {"seg_miou", opt_number(m.seg_miou)}}},
            {"rows", rows}};
}

inline std::string fmt_metric(const std::optional<double>& v)
{
    if (!v)
        return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v);
    return buf;
}

inline std::string md_cell(std::string s)
{
    std::string out;
    for (char c : s) {
        if (c == '|')
            out += "\\|";
        else if (c == '\n')
            out += ' ';
        else
            out += c;
    }
    return out;
}

inline std::string report_to_markdown(const EvalReport& rep)
{
    const auto& m = rep.metrics;
    std::ostringstream os;
    os << "# Evaluation report\n\n";
    os << "| Metric | Value |\n|---|---|\n";
    os << "| SR | " << fmt_metric(m.sr.percent) << " |\n";
    os << "| KeyHit | " << fmt_metric(m.keyhit) << " |\n";
    os << "| Rej | " << fmt_metric(m.rej) << " |\n";
    os << "| BLEU@4 | " << fmt_metric(m.bleu4) << " |\n";
    os << "| Det mIoU | " << fmt_metric(m.det_miou) << " |\n";
    os << "| Seg mIoU | " << fmt_metric(m.seg_miou) << " |\n\n";
    os << "SR failures: " << m.sr.false_positive_calls << " false-positive call, " << m.sr.wrong_function
       << " wrong function, " << m.sr.missed_calls << " missed call (of " << m.sr.total << " cases).\n\n";
    os << "| Case | Expected | Called | Rounds | Outcome | Error |\n|---|---|---|---|---|---|\n";
    for (const auto& r : rep.rows)
        os << "| " << md_cell(r.id) << " | " << md_cell(r.expect_call.value_or("-")) << " | "
           << md_cell(r.called.value_or("-")) << " | " << r.rounds << " | " << to_string(r.sr) << " | "
           << r.error.value_or("-") << " |\n";
    return os.str();
}

} // namespace vsa::eval
