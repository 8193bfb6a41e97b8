#pragma once

#include <cstdio>
#include <string>

#include "vsa/functions/rle.hpp"
#include "vsa/functions/types.hpp"

namespace vsa::functions {

/// "[x1, y1, x2, y2]" with exactly two decimals per coordinate.
inline std::string format_box(const Box& b)
{
    char buf[96];
    std::snprintf(buf, sizeof buf, "[%.2f, %.2f, %.2f, %.2f]", b[0], b[1], b[2], b[3]);
    return buf;
}

inline std::string format_fixed(double v, int decimals)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

inline std::string triplet_line(const Triplet& t)
{
    return t.instrument + ", " + t.verb + ", " + t.target;
}

/// Deterministic text shown to the model in the function turn.
///   detections: one "class [x1, y1, x2, y2] score" line each, or "no objects detected"
///   mask:       "mask area fraction F, bounding box [..]" (or "empty mask")
///   scene:      one "instrument, verb, target" line per triplet, or "no activity recognized"
inline std::string render_result_text(const FunctionResult& r)
{
    std::string out;
    if (const auto* dets = std::get_if<Detections>(&r.value)) {
        if (dets->empty())
            return "no objects detected";
        for (const auto& d : *dets) {
            if (!out.empty())
                out += '\n';
            out += d.class_name + " " + format_box(d.bbox) + " " + format_fixed(d.score, 2);
        }
        return out;
    }
    if (const auto* mask = std::get_if<SegmentationMask>(&r.value)) {
        const double frac = mask->pixel_count() ? static_cast<double>(mask->area()) / mask->pixel_count() : 0.0;
        const auto box = mask_bbox(*mask);
        if (!box)
            return "empty mask (area fraction 0.00)";
        return "mask area fraction " + format_fixed(frac, 4) + ", bounding box " + format_box(*box);
    }
    const auto& scene = std::get<SceneAnalysis>(r.value);
    if (scene.triplets.empty())
        return "no activity recognized";
    for (const auto& t : scene.triplets) {
        if (!out.empty())
            out += '\n';
        out += triplet_line(t);
    }
    return out;
}

} // namespace vsa::functions
