#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

namespace vsa::functions {

enum class OutputKind { detections, mask, scene };

inline const char* to_string(OutputKind k)
{
    switch (k) {
    case OutputKind::detections:
        return "detections";
    case OutputKind::mask:
        return "mask";
    case OutputKind::scene:
        return "scene";
    }
    return "?";
}

inline std::optional<OutputKind> output_kind_from_string(const std::string& s)
{
    if (s == "detections")
        return OutputKind::detections;
    if (s == "mask")
        return OutputKind::mask;
    if (s == "scene")
        return OutputKind::scene;
    return std::nullopt;
}

/// Normalized corner box [x1, y1, x2, y2].
using Box = std::array<double, 4>;

struct Detection {
    std::string class_name;
    Box bbox{};
    double score = 1.0;

    bool operator==(const Detection&) const = default;
};

/// Empty when the detection satisfies x1 < x2, y1 < y2, coordinates and score in [0, 1].
inline std::optional<std::string> check_detection(const Detection& d)
{
    for (double v : d.bbox)
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
            return "bbox coordinate outside [0,1]";
    if (!(d.bbox[0] < d.bbox[2]) || !(d.bbox[1] < d.bbox[3]))
        return "bbox corners not ordered (need x1 < x2 and y1 < y2)";
    if (!std::isfinite(d.score) || d.score < 0.0 || d.score > 1.0)
        return "score outside [0,1]";
    if (d.class_name.empty())
        return "empty class name";
    return std::nullopt;
}

/// Binary mask as alternating run lengths over row-major pixels, starting with a run of zeros.
struct SegmentationMask {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint32_t> rle;

    std::size_t pixel_count() const { return width * height; }

    std::size_t area() const
    {
        std::size_t a = 0;
        for (std::size_t i = 1; i < rle.size(); i += 2)
            a += rle[i];
        return a;
    }

    bool operator==(const SegmentationMask&) const = default;
};

inline std::optional<std::string> check_mask(const SegmentationMask& m)
{
    std::uint64_t sum = 0;
    for (auto r : m.rle)
        sum += r;
    if (sum != static_cast<std::uint64_t>(m.width) * m.height)
        return "run lengths sum to " + std::to_string(sum) + ", expected width*height = " +
               std::to_string(m.width * m.height);
    return std::nullopt;
}

struct Triplet {
    std::string instrument;
    std::string verb;
    std::string target;

    bool operator==(const Triplet&) const = default;
    auto operator<=>(const Triplet&) const = default;
};

struct SceneAnalysis {
    std::vector<Triplet> triplets;
    std::string description;

    bool operator==(const SceneAnalysis&) const = default;
};

using Detections = std::vector<Detection>;

/// Typed output of one executed surgical function.
struct FunctionResult {
    std::string api_name;
    std::variant<Detections, SegmentationMask, SceneAnalysis> value;

    OutputKind kind() const { return static_cast<OutputKind>(value.index()); }

    /// True when the function found nothing: no detections, an empty mask, or no triplets.
    bool is_empty() const
    {
        if (auto d = std::get_if<Detections>(&value))
            return d->empty();
        if (auto m = std::get_if<SegmentationMask>(&value))
            return m->area() == 0;
        return std::get<SceneAnalysis>(value).triplets.empty();
    }

    bool operator==(const FunctionResult&) const = default;
};

struct FunctionSpec {
    std::string api_name;
    std::vector<std::pair<std::string, std::string>> required_params; // (name, description)
    OutputKind output_kind = OutputKind::detections;
    std::string description;

    bool operator==(const FunctionSpec&) const = default;
};

/// Ground truth for one desk-scale scene.
struct SceneFixture {
    std::string image_ref;
    std::string image_file; // path relative to the bundle's images/ directory
    std::size_t width = 100;
    std::size_t height = 100;
    std::set<std::string> present_objects;
    std::vector<Detection> gt_detections;
    std::map<std::string, SegmentationMask> gt_masks;
    std::vector<Triplet> gt_triplets;
    std::string caption; // free-text description used by no-call conversations

    bool operator==(const SceneFixture&) const = default;
};

// ---------------------------------------------------------------------------
// JSON mapping

inline void to_json(nlohmann::json& j, const Detection& d)
{
    j = {{"class_name", d.class_name}, {"bbox", d.bbox}, {"score", d.score}};
}

inline void from_json(const nlohmann::json& j, Detection& d)
{
    d.class_name = j.at("class_name").get<std::string>();
    d.bbox = j.at("bbox").get<Box>();
    d.score = j.value("score", 1.0);
}

inline void to_json(nlohmann::json& j, const SegmentationMask& m)
{
    j = {{"width", m.width}, {"height", m.height}, {"rle", m.rle}};
}

inline void from_json(const nlohmann::json& j, SegmentationMask& m)
{
    m.width = j.at("width").get<std::size_t>();
    m.height = j.at("height").get<std::size_t>();
    m.rle = j.at("rle").get<std::vector<std::uint32_t>>();
}

inline void to_json(nlohmann::json& j, const Triplet& t)
{
    j = nlohmann::json::array({t.instrument, t.verb, t.target});
}

inline void from_json(const nlohmann::json& j, Triplet& t)
{
    if (!j.is_array() || j.size() != 3)
        throw nlohmann::json::type_error::create(302, "triplet must be a 3-element array", &j);
    t = {j[0].get<std::string>(), j[1].get<std::string>(), j[2].get<std::string>()};
}

inline void to_json(nlohmann::json& j, const SceneAnalysis& s)
{
    j = {{"triplets", s.triplets}, {"description", s.description}};
}

inline void from_json(const nlohmann::json& j, SceneAnalysis& s)
{
    s.triplets = j.at("triplets").get<std::vector<Triplet>>();
    s.description = j.value("description", std::string());
}

inline void to_json(nlohmann::json& j, const FunctionResult& r)
{
    j = {{"api_name", r.api_name}, {"kind", to_string(r.kind())}};
    std::visit(
        [&](const auto& v) {
            using V = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<V, Detections>)
                j["detections"] = v;
            else if constexpr (std::is_same_v<V, SegmentationMask>)
                j["mask"] = v;
            else
                j["scene"] = v;
        },
        r.value);
}

inline void from_json(const nlohmann::json& j, FunctionResult& r)
{
    r.api_name = j.at("api_name").get<std::string>();
    const auto kind = output_kind_from_string(j.at("kind").get<std::string>());
    if (!kind)
        throw nlohmann::json::other_error::create(501, "unknown result kind", &j);
    switch (*kind) {
    case OutputKind::detections:
        r.value = j.at("detections").get<Detections>();
        break;
    case OutputKind::mask:
        r.value = j.at("mask").get<SegmentationMask>();
        break;
    case OutputKind::scene:
        r.value = j.at("scene").get<SceneAnalysis>();
        break;
    }
}

inline void to_json(nlohmann::json& j, const FunctionSpec& s)
{
    auto params = nlohmann::json::array();
    for (const auto& [name, desc] : s.required_params)
        params.push_back({{"name", name}, {"description", desc}});
    j = {{"api_name", s.api_name},
         {"required_params", params},
         {"output_kind", to_string(s.output_kind)},
         {"description", s.description}};
}

inline void to_json(nlohmann::json& j, const SceneFixture& f)
{
    nlohmann::json masks = nlohmann::json::object();
    for (const auto& [cls, m] : f.gt_masks)
        masks[cls] = m;
    j = {{"schema_version", 1},
         {"image_ref", f.image_ref},
         {"image_file", f.image_file},
         {"width", f.width},
         {"height", f.height},
         {"present_objects", f.present_objects},
         {"detections", f.gt_detections},
         {"masks", masks},
         {"triplets", f.gt_triplets},
         {"caption", f.caption}};
}

inline void from_json(const nlohmann::json& j, SceneFixture& f)
{
    f.image_ref = j.at("image_ref").get<std::string>();
    f.image_file = j.value("image_file", std::string());
    f.width = j.value("width", std::size_t{100});
    f.height = j.value("height", std::size_t{100});
    f.present_objects = j.at("present_objects").get<std::set<std::string>>();
    f.gt_detections = j.value("detections", std::vector<Detection>{});
    f.gt_masks.clear();
    if (j.contains("masks"))
        for (const auto& [cls, m] : j.at("masks").items())
            f.gt_masks[cls] = m.get<SegmentationMask>();
    f.gt_triplets = j.value("triplets", std::vector<Triplet>{});
    f.caption = j.value("caption", std::string());
}

} // namespace vsa::functions
