#pragma once

// Function-calling conversation datasets: deterministic template-based generation with
// positive / negative / no-call records and a disjoint unseen test split, stored as JSON Lines.

#include <algorithm>
#include <cstdio>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsa/eval/case.hpp"
#include "vsa/functions/fixtures.hpp"
#include "vsa/functions/render.hpp"
#include "vsa/protocol/structured_reply.hpp"
#include "vsa/rng.hpp"

namespace vsa::protocol {

inline constexpr int dataset_schema_version = 1;

enum class Split { train, test_unseen };
enum class RecordKind { positive, negative, no_call };

inline const char* to_string(Split s)
{
    return s == Split::train ? "train" : "test-unseen";
}

inline const char* to_string(RecordKind k)
{
    switch (k) {
    case RecordKind::positive:
        return "positive";
    case RecordKind::negative:
        return "negative";
    case RecordKind::no_call:
        return "no-call";
    }
    return "?";
}

struct DatasetRecord {
    std::string id;
    Split split = Split::train;
    RecordKind kind = RecordKind::positive;
    std::optional<std::string> image_ref;
    std::string query;
    StructuredReply gold;
    eval::EvalCase expectations;

    bool operator==(const DatasetRecord&) const = default;
};

/// One conversation pattern. Placeholders in query/thinking/reply:
///   {object} queried object, {box} its box, {area} mask area percentage, {mask_box} mask bounds,
///   {description} scene-analysis description, {caption} scene caption.
struct ConversationTemplate {
    std::string id;
    RecordKind kind = RecordKind::positive;
    std::string api_name; // function the gold reply calls (empty for no-call)
    std::string query;
    std::string thinking;
    std::string reply;
    bool unseen = false;  // reserved for the test-unseen split
};

inline std::vector<ConversationTemplate> default_templates()
{
    using K = RecordKind;
    return {
        {"det-where", K::positive, "detect", "Where is the {object} in this image?",
         "The utilization of a detection model to ascertain the presence of the {object} could be highly beneficial.",
         "The {object} is detected in the image, with bounding box coordinates of {box}.", false},
        {"det-find", K::positive, "detect", "Can you find the {object}?",
         "Finding the {object} requires the detection function.",
         "I found the {object} at {box}.", false},
        {"seg-outline", K::positive, "segment", "Segment the {object} in this frame.",
         "A pixel-level outline of the {object} needs the segmentation function.",
         "The {object} is segmented; it covers {area} of the image within {mask_box}.", false},
        {"scene-what", K::positive, "analyze_scene", "What is happening in this surgical scene?",
         "Recognizing the surgical activity calls for the scene analysis function.", "{description}", false},
        {"neg-is-there", K::negative, "detect", "Is there a {object} in this image?",
         "The detection model can verify whether the {object} is in view.",
         "The {object} is not present in this image.", false},
        {"nocall-describe", K::no_call, "", "Describe this image.",
         "The image can be described directly without calling a function.", "{caption}", false},

        {"u-det-localize", K::positive, "detect", "Could you localize the {object} for me?",
         "Localizing the {object} is a job for the detection function.",
         "The {object} is located at {box}.", true},
        {"u-seg-mask", K::positive, "segment", "Please outline the {object}.",
         "Outlining the {object} requires segmentation.",
         "Here is the {object} outline: {area} of the frame, bounded by {mask_box}.", true},
        {"u-scene-summary", K::positive, "analyze_scene", "Summarize the surgical activity in view.",
         "The scene analysis function identifies the ongoing actions.", "{description}", true},
        {"u-neg-see", K::negative, "detect", "Do you see a {object} here?",
         "A detection pass will confirm whether the {object} appears.",
         "I cannot find any {object} in this image.", true},
        {"u-nocall-caption", K::no_call, "", "Give me a short caption of this frame.",
         "A caption can be written from the visual context alone.", "{caption}", true},
    };
}

struct DatasetCounts {
    std::size_t positive = 0;
    std::size_t negative = 0;
    std::size_t no_call = 0;
    std::size_t unseen = 0;
};

struct GenerationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string substitute(std::string s, const std::string& key, const std::string& value)
{
    const std::string token = "{" + key + "}";
    for (std::size_t pos = s.find(token); pos != std::string::npos; pos = s.find(token, pos + value.size()))
        s.replace(pos, token.size(), value);
    return s;
}

struct Slots {
    std::string object, box, area, mask_box, description, caption;
};

inline std::string fill(std::string s, const Slots& v)
{
    s = substitute(std::move(s), "object", v.object);
    s = substitute(std::move(s), "box", v.box);
    s = substitute(std::move(s), "area", v.area);
    s = substitute(std::move(s), "mask_box", v.mask_box);
    s = substitute(std::move(s), "description", v.description);
    s = substitute(std::move(s), "caption", v.caption);
    return s;
}

inline std::vector<std::string> triplet_keywords(const std::vector<functions::Triplet>& triplets)
{
    std::vector<std::string> out;
    for (const auto& t : triplets)
        for (const auto* w : {&t.instrument, &t.verb, &t.target})
            if (std::find(out.begin(), out.end(), *w) == out.end())
                out.push_back(*w);
    return out;
}

} // namespace detail

/// Deterministic generator. Positive records call a registered function on an object present in the
/// chosen scene; negative records ask about an object from the vocabulary that the scene does not
/// contain and acknowledge its absence; no-call records answer from the caption.
inline std::vector<DatasetRecord> generate_fc_dataset(const std::vector<ConversationTemplate>& templates,
                                                      const functions::FixtureBundle& bundle,
                                                      const std::vector<functions::FunctionSpec>& specs,
                                                      const DatasetCounts& counts, std::uint64_t seed)
{
    const std::size_t total = counts.positive + counts.negative + counts.no_call + counts.unseen;
    if (total == 0)
        return {};
    if (templates.empty())
        throw GenerationError("no conversation templates");
    if (bundle.scenes.empty())
        throw GenerationError("fixture bundle has no scenes");
    for (const auto& t : templates) {
        if (t.kind == RecordKind::no_call) {
            if (!t.api_name.empty())
                throw GenerationError("no-call template '" + t.id + "' names a function");
            continue;
        }
        const bool known = std::any_of(specs.begin(), specs.end(),
                                       [&](const functions::FunctionSpec& s) { return s.api_name == t.api_name; });
        if (!known)
            throw GenerationError("template '" + t.id + "' references unknown function '" + t.api_name + "'");
    }

    std::vector<const functions::SceneFixture*> scenes;
    for (const auto& [ref, fx] : bundle.scenes)
        scenes.push_back(&fx);

    Rng rng(derive_seed(seed, 0xDA7A));
    std::vector<DatasetRecord> out;
    out.reserve(total);

    auto pick_template = [&](RecordKind kind, bool unseen) -> const ConversationTemplate& {
        std::vector<const ConversationTemplate*> pool;
        for (const auto& t : templates)
            if (t.kind == kind && t.unseen == unseen)
                pool.push_back(&t);
        if (pool.empty())
            throw GenerationError(std::string("no ") + (unseen ? "unseen " : "") + to_string(kind) + " template");
        return *pool[rng.below(pool.size())];
    };

    auto make = [&](const ConversationTemplate& tpl, Split split, const std::string& id) {
        // Retry scenes until one can host this template (e.g. a segment template needs a mask).
        for (int attempt = 0; attempt < 64; ++attempt) {
            const auto& fx = *scenes[rng.below(scenes.size())];
            detail::Slots slots;
            slots.caption = fx.caption.empty() ? functions::scene_description(fx.gt_triplets) : fx.caption;
            slots.description = functions::scene_description(fx.gt_triplets);

            DatasetRecord rec;
            rec.id = id;
            rec.split = split;
            rec.kind = tpl.kind;
            rec.image_ref = fx.image_ref;
            auto& ec = rec.expectations;
            ec.id = id;
            ec.image_ref = fx.image_ref;

            if (tpl.kind == RecordKind::negative) {
                std::vector<std::string> absent;
                for (const auto& obj : bundle.vocabulary.instruments)
                    if (!fx.present_objects.count(obj))
                        absent.push_back(obj);
                if (absent.empty())
                    continue;
                slots.object = absent[rng.below(absent.size())];
                ec.is_negative = true;
            } else if (tpl.api_name == "detect" || tpl.api_name == "segment") {
                std::vector<std::string> candidates;
                for (const auto& obj : fx.present_objects)
                    if (tpl.api_name == "detect" ? !functions::fixture_detect(fx, obj).empty()
                                                 : fx.gt_masks.count(obj) > 0)
                        candidates.push_back(obj);
                if (candidates.empty())
                    continue;
                slots.object = candidates[rng.below(candidates.size())];
                if (tpl.api_name == "detect") {
                    const auto box = functions::fixture_detect(fx, slots.object).front().bbox;
                    slots.box = functions::format_box(box);
                    ec.gt_boxes = {box};
                } else {
                    const auto& mask = fx.gt_masks.at(slots.object);
                    const double frac = static_cast<double>(mask.area()) / static_cast<double>(mask.pixel_count());
                    slots.area = functions::format_fixed(100.0 * frac, 2) + "%";
                    slots.mask_box = functions::format_box(functions::mask_bbox(mask).value());
                    ec.gt_mask = mask;
                }
            } else if (tpl.api_name == "analyze_scene" || tpl.kind == RecordKind::no_call) {
                ec.keywords = detail::triplet_keywords(fx.gt_triplets);
            }

            rec.query = detail::fill(tpl.query, slots);
            ec.query = rec.query;
            rec.gold.thinking = std::string(trim(detail::fill(tpl.thinking, slots)));
            rec.gold.replying = std::string(trim(detail::fill(tpl.reply, slots)));
            if (tpl.kind != RecordKind::no_call) {
                FunctionCall call{tpl.api_name, {}};
                if (!slots.object.empty())
                    call.api_params["target"] = slots.object;
                rec.gold.calling = call;
                ec.expect_call = tpl.api_name;
            }
            ec.reference_reply = rec.gold.replying;
            return rec;
        }
        throw GenerationError("no scene in the bundle fits template '" + tpl.id + "'");
    };

    auto emit = [&](std::size_t n, RecordKind kind, const char* tag) {
        for (std::size_t i = 0; i < n; ++i) {
            char id[48];
            std::snprintf(id, sizeof id, "train-%s-%05zu", tag, i + 1);
            out.push_back(make(pick_template(kind, false), Split::train, id));
        }
    };
    emit(counts.positive, RecordKind::positive, "pos");
    emit(counts.negative, RecordKind::negative, "neg");
    emit(counts.no_call, RecordKind::no_call, "nocall");

    std::vector<const ConversationTemplate*> unseen_pool;
    for (const auto& t : templates)
        if (t.unseen)
            unseen_pool.push_back(&t);
    if (counts.unseen > 0 && unseen_pool.empty())
        throw GenerationError("unseen records requested but no unseen templates exist");
    for (std::size_t i = 0; i < counts.unseen; ++i) {
        char id[48];
        std::snprintf(id, sizeof id, "unseen-%05zu", i + 1);
        out.push_back(make(*unseen_pool[rng.below(unseen_pool.size())], Split::test_unseen, id));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Validation

enum class ViolationCode {
    empty_id,
    kind_mismatch,
    unknown_function,
    missing_param,
    unexpected_param,
    invalid_reply,
    negative_not_marked,
    expectation_mismatch,
    case_invariant,
};

inline const char* to_string(ViolationCode c)
{
    switch (c) {
    case ViolationCode::empty_id:
        return "EmptyId";
    case ViolationCode::kind_mismatch:
        return "KindMismatch";
    case ViolationCode::unknown_function:
        return "UnknownFunction";
    case ViolationCode::missing_param:
        return "MissingParam";
    case ViolationCode::unexpected_param:
        return "UnexpectedParam";
    case ViolationCode::invalid_reply:
        return "InvalidReply";
    case ViolationCode::negative_not_marked:
        return "NegativeNotMarked";
    case ViolationCode::expectation_mismatch:
        return "ExpectationMismatch";
    case ViolationCode::case_invariant:
        return "CaseInvariant";
    }
    return "?";
}

struct Violation {
    ViolationCode code;
    std::string message;
};

/// All invariant violations of a record; empty when the record is well-formed. Never throws.
inline std::vector<Violation> validate_record(const DatasetRecord& rec,
                                              const std::vector<functions::FunctionSpec>& specs)
{
    std::vector<Violation> v;
    if (rec.id.empty())
        v.push_back({ViolationCode::empty_id, "record id is empty"});
    if (!is_valid(rec.gold))
        v.push_back({ViolationCode::invalid_reply, "gold reply is not a valid structured reply"});
    if (rec.kind == RecordKind::no_call && rec.gold.calling)
        v.push_back({ViolationCode::kind_mismatch, "no-call record has a gold calling"});
    if (rec.kind != RecordKind::no_call && !rec.gold.calling)
        v.push_back({ViolationCode::kind_mismatch, std::string(to_string(rec.kind)) + " record has no gold calling"});
    if (rec.kind == RecordKind::negative && !rec.expectations.is_negative)
        v.push_back({ViolationCode::negative_not_marked, "negative record's expectations are not marked negative"});
    if (rec.kind != RecordKind::negative && rec.expectations.is_negative)
        v.push_back({ViolationCode::kind_mismatch, "non-negative record marked as a negative query"});
    if (auto err = eval::check_case(rec.expectations))
        v.push_back({ViolationCode::case_invariant, *err});

    const std::optional<std::string> gold_api =
        rec.gold.calling ? std::optional<std::string>(rec.gold.calling->api_name) : std::nullopt;
    if (rec.expectations.expect_call != gold_api)
        v.push_back({ViolationCode::expectation_mismatch, "expect_call disagrees with the gold calling"});

    if (rec.gold.calling) {
        const auto& call = *rec.gold.calling;
        const auto it = std::find_if(specs.begin(), specs.end(),
                                     [&](const functions::FunctionSpec& s) { return s.api_name == call.api_name; });
        if (it == specs.end()) {
            v.push_back({ViolationCode::unknown_function, "function '" + call.api_name + "' is not registered"});
        } else {
            for (const auto& [name, desc] : it->required_params)
                if (!call.api_params.count(name) || call.api_params.at(name).empty())
                    v.push_back({ViolationCode::missing_param,
                                 "call to '" + call.api_name + "' lacks required parameter '" + name + "'"});
            for (const auto& [name, value] : call.api_params) {
                const bool declared = std::any_of(it->required_params.begin(), it->required_params.end(),
                                                  [&](const auto& p) { return p.first == name; });
                if (!declared)
                    v.push_back({ViolationCode::unexpected_param,
                                 "call to '" + call.api_name + "' passes undeclared parameter '" + name + "'"});
            }
        }
    }
    return v;
}

// ---------------------------------------------------------------------------
// JSON Lines

inline nlohmann::json record_to_json(const DatasetRecord& r)
{
    return {{"schema_version", dataset_schema_version},
            {"id", r.id},
            {"split", to_string(r.split)},
            {"kind", to_string(r.kind)},
            {"image_ref", r.image_ref ? nlohmann::json(*r.image_ref) : nlohmann::json(nullptr)},
            {"query", r.query},
            {"gold", reply_to_json(r.gold)},
            {"expectations", r.expectations}};
}

inline DatasetRecord record_from_json(const nlohmann::json& j)
{
    if (j.value("schema_version", 0) != dataset_schema_version)
        throw std::invalid_argument("unsupported dataset schema_version");
    DatasetRecord r;
    r.id = j.at("id").get<std::string>();
    const auto split = j.at("split").get<std::string>();
    if (split == "train")
        r.split = Split::train;
    else if (split == "test-unseen")
        r.split = Split::test_unseen;
    else
        throw std::invalid_argument("unknown split '" + split + "'");
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "positive")
        r.kind = RecordKind::positive;
    else if (kind == "negative")
        r.kind = RecordKind::negative;
    else if (kind == "no-call")
        r.kind = RecordKind::no_call;
    else
        throw std::invalid_argument("unknown kind '" + kind + "'");
    if (j.contains("image_ref") && !j["image_ref"].is_null())
        r.image_ref = j["image_ref"].get<std::string>();
    r.query = j.at("query").get<std::string>();
    r.gold = reply_from_json(j.at("gold"));
    r.expectations = j.at("expectations").get<eval::EvalCase>();
    return r;
}

inline std::string to_jsonl(const std::vector<DatasetRecord>& records)
{
    std::string out;
    for (const auto& r : records)
        out += record_to_json(r).dump() + "\n";
    return out;
}

/// Parses JSON Lines; blank lines are skipped. Errors name the 1-based line.
inline std::vector<DatasetRecord> from_jsonl(std::string_view text)
{
    std::vector<DatasetRecord> out;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const auto line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (trim(line).empty())
            continue;
        try {
            out.push_back(record_from_json(nlohmann::json::parse(line)));
        } catch (const std::exception& e) {
            throw std::invalid_argument("line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

} // namespace vsa::protocol
