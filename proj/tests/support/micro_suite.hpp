#pragma once

// Ten hand-scored eval cases shared by the metric tests and the acceptance runner.

#include <string>
#include <vector>

#include "vsa/eval/case.hpp"
#include "vsa/functions/rle.hpp"
#include "vsa/orchestrator/dispatch.hpp"

namespace vsa::testgen {

using eval::EvalCase;
using orchestrator::DispatchTrace;

inline EvalCase make_case(std::string id, std::optional<std::string> expect)
{
    EvalCase c;
    c.id = std::move(id);
    c.query = "q " + c.id;
    c.expect_call = std::move(expect);
    return c;
}

inline DispatchTrace executed(const std::string& api, std::variant<functions::Detections, functions::SegmentationMask, functions::SceneAnalysis> value = functions::Detections{})
{
    DispatchTrace t;
    t.rounds = 2;
    t.executed_call = protocol::FunctionCall{api, {}};
    t.function_result = functions::FunctionResult{api, std::move(value)};
    return t;
}

struct MicroSuite {
    std::vector<EvalCase> cases;
    std::vector<DispatchTrace> traces;
    std::vector<std::string> replies;
};

// Ten cases whose metric values are worked out by hand:
// SR 7/10, KeyHit mean(3/3, 2/3), Rej 1/3.
inline MicroSuite micro_suite()
{
    MicroSuite m;
    auto add = [&](EvalCase c, DispatchTrace t, std::string reply) {
        c.reference_reply = reply;
        t.trace_id = "t-" + c.id;
        m.cases.push_back(std::move(c));
        m.traces.push_back(std::move(t));
        m.replies.push_back(std::move(reply));
    };
    add(make_case("c01", "detect"), executed("detect"), "Found.");
    add(make_case("c02", "detect"), executed("segment", functions::rect_mask(4, 4, 0, 0, 1, 1)), "Segmented.");
    add(make_case("c03", "detect"), DispatchTrace{}, "I answered directly.");
    add(make_case("c04", std::nullopt), DispatchTrace{}, "A description.");
    add(make_case("c05", std::nullopt), executed("detect"), "Called anyway.");

    auto c6 = make_case("c06", "analyze_scene");
    c6.keywords = {"scissors", "cut", "tissue"};
    add(c6, executed("analyze_scene", functions::SceneAnalysis{{{"scissors", "cut", "tissue"}}, ""}),
        "The scissors cut the tissue.");
    auto c7 = make_case("c07", std::nullopt);
    c7.keywords = {"suction", "aspirate", "blood"};
    add(c7, DispatchTrace{}, "Suction is aspirating blood.");

    auto neg = [](std::string id) {
        auto c = make_case(std::move(id), "detect");
        c.is_negative = true;
        return c;
    };
    add(neg("c08"), executed("detect"), "The drill is not present in this image.");
    add(neg("c09"), executed("detect", functions::Detections{{"drill", {0.1, 0.1, 0.2, 0.2}, 1}}),
        "The drill is not present.");
    add(neg("c10"), executed("detect"), "Here is the drill.");
    return m;
}

} // namespace vsa::testgen
