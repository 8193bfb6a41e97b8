#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "vsa/base64.hpp"
#include "vsa/http_client.hpp"
#include "vsa/orchestrator/session.hpp"
#include "vsa/protocol/dataset.hpp"
#include "vsa/protocol/structured_reply.hpp"
#include "vsa/result.hpp"

namespace vsa::orchestrator {

enum class BackendFailure { timeout, transport, http_status, bad_response };

inline const char* to_string(BackendFailure f)
{
    switch (f) {
    case BackendFailure::timeout:
        return "timeout";
    case BackendFailure::transport:
        return "transport";
    case BackendFailure::http_status:
        return "http_status";
    case BackendFailure::bad_response:
        return "bad_response";
    }
    return "?";
}

struct BackendError {
    BackendFailure cause = BackendFailure::transport;
    std::string message;
};

/// The model: maps a conversation to one structured-reply candidate. Stateless across calls.
class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    virtual Result<std::string, BackendError> generate(const std::vector<Turn>& conversation) = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend

/// Deterministic replay keyed by (image of the last user turn, last user query, whether a
/// function turn follows it). Entries without an image match any image.
struct Script {
    struct Key {
        std::optional<std::string> image_ref;
        std::string query;
        bool after_function = false;
        auto operator<=>(const Key&) const = default;
    };
    std::map<Key, std::string> replies;
    std::string default_reply = protocol::render_structured(
        {"No scripted response matches this conversation.", std::nullopt, "I am not sure how to help with that."});

    void add(std::optional<std::string> image_ref, std::string query, bool after_function, std::string reply)
    {
        replies[Key{std::move(image_ref), std::move(query), after_function}] = std::move(reply);
    }
};

inline nlohmann::json script_to_json(const Script& s)
{
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [k, reply] : s.replies)
        entries.push_back({{"image_ref", k.image_ref ? nlohmann::json(*k.image_ref) : nlohmann::json(nullptr)},
                           {"query", k.query},
                           {"after_function", k.after_function},
                           {"reply", reply}});
    return {{"schema_version", 1}, {"default", s.default_reply}, {"entries", entries}};
}

inline Script script_from_json(const nlohmann::json& j)
{
    Script s;
    if (j.contains("default"))
        s.default_reply = j["default"].get<std::string>();
    for (const auto& e : j.at("entries")) {
        std::optional<std::string> image;
        if (e.contains("image_ref") && !e["image_ref"].is_null())
            image = e["image_ref"].get<std::string>();
        s.add(image, e.at("query").get<std::string>(), e.value("after_function", false),
              e.at("reply").get<std::string>());
    }
    return s;
}

/// Interim reply of the first round when a record's gold answer calls a function.
inline protocol::StructuredReply first_round_reply(const protocol::StructuredReply& gold)
{
    protocol::StructuredReply r = gold;
    if (gold.calling)
        r.replying = "Calling " + gold.calling->api_name + " to answer.";
    return r;
}

/// Reply of the second round: the gold answer, produced after the function result arrives.
inline protocol::StructuredReply second_round_reply(const protocol::StructuredReply& gold)
{
    return {"The function result is available; composing the answer.", std::nullopt, gold.replying};
}

/// Script that reproduces every record's gold conversation (a "perfect" model on these records).
inline Script script_from_records(const std::vector<protocol::DatasetRecord>& records)
{
    Script s;
    for (const auto& r : records) {
        s.add(r.image_ref, r.query, false, protocol::render_structured(first_round_reply(r.gold)));
        if (r.gold.calling)
            s.add(r.image_ref, r.query, true, protocol::render_structured(second_round_reply(r.gold)));
    }
    return s;
}

class ScriptedBackend final : public LlmBackend {
public:
    explicit ScriptedBackend(Script script) : script_(std::move(script)) {}

    Result<std::string, BackendError> generate(const std::vector<Turn>& conversation) override
    {
        const Turn* last_user = nullptr;
        bool after_function = false;
        for (const auto& t : conversation) {
            if (t.role == Role::user) {
                last_user = &t;
                after_function = false;
            } else if (t.role == Role::function) {
                after_function = true;
            }
        }
        if (!last_user)
            return script_.default_reply;
        using Key = Script::Key;
        if (auto it = script_.replies.find(Key{last_user->image_ref, last_user->content, after_function});
            it != script_.replies.end())
            return it->second;
        if (auto it = script_.replies.find(Key{std::nullopt, last_user->content, after_function});
            it != script_.replies.end())
            return it->second;
        return script_.default_reply;
    }

private:
    Script script_;
};

// ---------------------------------------------------------------------------
// Remote backend

enum class ImageTransport { reference, base64 };

struct RemoteBackendConfig {
    EndpointConfig endpoint{"http://127.0.0.1:8000", "/v1/chat/completions", 30000, 3, 50};
    std::string model = "vs-assistant";
    ImageTransport images = ImageTransport::reference;
};

/// Chat-completion style client.
/// Request:  {"model": m, "messages": [{"role", "content", "image_ref"?, "image_base64"?}]}
/// Response: {"choices": [{"message": {"content": "<structured reply text>"}}]}
class RemoteBackend final : public LlmBackend {
public:
    using ImageLookup = std::function<std::optional<std::string>(const std::string&)>;

    explicit RemoteBackend(RemoteBackendConfig cfg, ImageLookup images = {})
        : cfg_(std::move(cfg)), images_(std::move(images))
    {
    }

    nlohmann::json request_body(const std::vector<Turn>& conversation) const
    {
        nlohmann::json messages = nlohmann::json::array();
        for (const auto& t : conversation) {
            nlohmann::json m = {{"role", to_string(t.role)}, {"content", t.content}};
            if (t.image_ref) {
                m["image_ref"] = *t.image_ref;
                if (cfg_.images == ImageTransport::base64 && images_)
                    if (auto bytes = images_(*t.image_ref))
                        m["image_base64"] = base64_encode(*bytes);
            }
            messages.push_back(std::move(m));
        }
        return {{"model", cfg_.model}, {"messages", messages}};
    }

    Result<std::string, BackendError> generate(const std::vector<Turn>& conversation) override
    {
        auto body = post_json(cfg_.endpoint, request_body(conversation).dump());
        if (!body) {
            const auto& e = body.error();
            const BackendFailure cause = e.cause == TransportFailure::timeout       ? BackendFailure::timeout
                                         : e.cause == TransportFailure::http_status ? BackendFailure::http_status
                                                                                    : BackendFailure::transport;
            return unexpected(BackendError{cause, e.message + " after " + std::to_string(e.attempts) + " attempt(s)"});
        }
        try {
            const auto j = nlohmann::json::parse(*body);
            return j.at("choices").at(0).at("message").at("content").get<std::string>();
        } catch (const std::exception& e) {
            return unexpected(BackendError{BackendFailure::bad_response, std::string("unexpected response: ") + e.what()});
        }
    }

private:
    RemoteBackendConfig cfg_;
    ImageLookup images_;
};

} // namespace vsa::orchestrator

namespace vsa::orchestrator {

/// The detection walkthrough on the probe scene: ask for the probe, call detect, answer with its box.
inline protocol::DatasetRecord probe_walkthrough_record(const functions::SceneFixture& probe = functions::probe_fixture())
{
    const std::string object = "navigation probe";
    const auto dets = functions::fixture_detect(probe, object);
    if (dets.empty())
        throw std::invalid_argument("probe scene has no navigation probe annotation");
    const auto box = dets.front().bbox;

    protocol::DatasetRecord r;
    r.id = "walkthrough-probe";
    r.split = protocol::Split::train;
    r.kind = protocol::RecordKind::positive;
    r.image_ref = probe.image_ref;
    r.query = "Where is the " + object + " in this image?";
    r.gold.thinking = "The utilization of a detection model to ascertain the presence of the " + object +
                      " could be highly beneficial.";
    r.gold.calling = protocol::FunctionCall{"detect", {{"target", object}}};
    r.gold.replying = "The " + object + " is detected in the image, with bounding box coordinates of " +
                      functions::format_box(box) + ".";
    auto& ec = r.expectations;
    ec.id = r.id;
    ec.query = r.query;
    ec.image_ref = r.image_ref;
    ec.expect_call = "detect";
    ec.reference_reply = r.gold.replying;
    ec.gt_boxes = {box};
    return r;
}

} // namespace vsa::orchestrator
