#pragma once

// HTTP adapter for real detectors / segmenters / scene analyzers.
//
// Request:  POST <path>  {"image": "<base64>", "params": {"target": "..."}}
// Response (status 200), by output kind:
//   detections  {"detections": [{"class_name": "...", "bbox": [x1,y1,x2,y2], "score": s}, ...]}
//   mask        {"mask": {"width": W, "height": H, "rle": [..]}}
//   scene       {"scene": {"triplets": [[instrument, verb, target], ...], "description": "..."}}
// Any other status, an unparsable body, or a result violating the type invariants fails the call.

#include <string>

#include "vsa/base64.hpp"
#include "vsa/functions/registry.hpp"
#include "vsa/functions/types.hpp"
#include "vsa/http_client.hpp"

namespace vsa::functions {

inline FunctionResult parse_remote_response(const FunctionSpec& spec, const std::string& body)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::exception& e) {
        throw FunctionFailure(FailureCause::schema, std::string("response is not JSON: ") + e.what());
    }
    FunctionResult r{spec.api_name, Detections{}};
    try {
        switch (spec.output_kind) {
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
    } catch (const nlohmann::json::exception& e) {
        throw FunctionFailure(FailureCause::schema, std::string("response does not match the ") +
                                                        to_string(spec.output_kind) + " schema: " + e.what());
    }
    if (const auto* dets = std::get_if<Detections>(&r.value)) {
        for (const auto& d : *dets)
            if (auto err = check_detection(d))
                throw FunctionFailure(FailureCause::validation, "detection '" + d.class_name + "': " + *err);
    } else if (const auto* mask = std::get_if<SegmentationMask>(&r.value)) {
        if (auto err = check_mask(*mask))
            throw FunctionFailure(FailureCause::validation, "mask: " + *err);
    }
    return r;
}

inline FunctionImpl make_remote_function(FunctionSpec spec, EndpointConfig endpoint)
{
    return [spec = std::move(spec), endpoint = std::move(endpoint)](const Params& params, const CallContext& ctx) {
        std::string image;
        if (ctx.image_ref) {
            if (!ctx.image_bytes)
                throw FunctionFailure(FailureCause::missing_input, "no image store available");
            auto bytes = ctx.image_bytes(*ctx.image_ref);
            if (!bytes)
                throw FunctionFailure(FailureCause::missing_input, "unknown image '" + *ctx.image_ref + "'");
            image = base64_encode(*bytes);
        }
        const nlohmann::json request = {{"image", image}, {"params", params}};
        auto body = post_json(endpoint, request.dump());
        if (!body)
            throw FunctionFailure(body.error().cause == TransportFailure::timeout ? FailureCause::timeout
                                                                                 : FailureCause::transport,
                                  body.error().message);
        return parse_remote_response(spec, *body);
    };
}

} // namespace vsa::functions
