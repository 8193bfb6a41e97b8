#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vsa/functions/types.hpp"

namespace vsa::eval {

/// Ground-truth expectations for one evaluation query.
struct EvalCase {
    std::string id;
    std::string query;
    std::optional<std::string> image_ref;
    std::optional<std::string> expect_call; // api_name; nullopt means no call is expected
    std::vector<std::string> keywords;      // triplet keywords for KeyHit
    bool is_negative = false;               // asks about an object that is not in the image
    std::string reference_reply;
    std::vector<functions::Box> gt_boxes;
    std::optional<functions::SegmentationMask> gt_mask;

    bool operator==(const EvalCase&) const = default;
};

/// Empty when is_negative implies no keywords and no geometric ground truth.
inline std::optional<std::string> check_case(const EvalCase& c)
{
    if (c.id.empty())
        return "case id is empty";
    if (c.is_negative && (!c.keywords.empty() || !c.gt_boxes.empty() || c.gt_mask))
        return "negative case '" + c.id + "' must not carry keywords, boxes or masks";
    return std::nullopt;
}

inline void to_json(nlohmann::json& j, const EvalCase& c)
{
    j = {{"id", c.id},
         {"query", c.query},
         {"image_ref", c.image_ref ? nlohmann::json(*c.image_ref) : nlohmann::json(nullptr)},
         {"expect_call", c.expect_call ? nlohmann::json(*c.expect_call) : nlohmann::json(nullptr)},
         {"keywords", c.keywords},
         {"is_negative", c.is_negative},
         {"reference_reply", c.reference_reply},
         {"gt_boxes", c.gt_boxes},
         {"gt_mask", c.gt_mask ? nlohmann::json(*c.gt_mask) : nlohmann::json(nullptr)}};
}

inline void from_json(const nlohmann::json& j, EvalCase& c)
{
    auto opt_string = [&](const char* key) -> std::optional<std::string> {
        if (!j.contains(key) || j[key].is_null())
            return std::nullopt;
        return j[key].get<std::string>();
    };
    c.id = j.at("id").get<std::string>();
    c.query = j.at("query").get<std::string>();
    c.image_ref = opt_string("image_ref");
    c.expect_call = opt_string("expect_call");
    c.keywords = j.value("keywords", std::vector<std::string>{});
    c.is_negative = j.value("is_negative", false);
    c.reference_reply = j.value("reference_reply", std::string());
    c.gt_boxes = j.value("gt_boxes", std::vector<functions::Box>{});
    if (j.contains("gt_mask") && !j["gt_mask"].is_null())
        c.gt_mask = j["gt_mask"].get<functions::SegmentationMask>();
    else
        c.gt_mask.reset();
}

} // namespace vsa::eval
