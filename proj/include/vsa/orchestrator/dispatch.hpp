#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "json.hpp"
#include "vsa/functions/registry.hpp"
#include "vsa/functions/render.hpp"
#include "vsa/orchestrator/backend.hpp"
#include "vsa/orchestrator/session.hpp"
#include "vsa/protocol/structured_reply.hpp"

namespace vsa::orchestrator {

enum class DispatchErrorCode { BackendUnavailable, ParseFailed, UnknownFunction, ParamValidation, FunctionFailed };

inline const char* to_string(DispatchErrorCode c)
{
    switch (c) {
    case DispatchErrorCode::BackendUnavailable:
        return "BackendUnavailable";
    case DispatchErrorCode::ParseFailed:
        return "ParseFailed";
    case DispatchErrorCode::UnknownFunction:
        return "UnknownFunction";
    case DispatchErrorCode::ParamValidation:
        return "ParamValidation";
    case DispatchErrorCode::FunctionFailed:
        return "FunctionFailed";
    }
    return "?";
}

inline std::optional<DispatchErrorCode> dispatch_error_from_string(const std::string& s)
{
    for (auto c : {DispatchErrorCode::BackendUnavailable, DispatchErrorCode::ParseFailed,
                   DispatchErrorCode::UnknownFunction, DispatchErrorCode::ParamValidation,
                   DispatchErrorCode::FunctionFailed})
        if (s == to_string(c))
            return c;
    return std::nullopt;
}

/// `detail` carries the nested error: parser error kind/offset, parameter name, function failure cause.
struct DispatchError {
    DispatchErrorCode code = DispatchErrorCode::BackendUnavailable;
    std::string message;
    nlohmann::json detail = nlohmann::json::object();

    bool operator==(const DispatchError&) const = default;
};

inline nlohmann::json error_to_json(const DispatchError& e)
{
    return {{"code", to_string(e.code)}, {"message", e.message}, {"detail", e.detail}};
}

inline DispatchError error_from_json(const nlohmann::json& j)
{
    const auto code = dispatch_error_from_string(j.at("code").get<std::string>());
    if (!code)
        throw std::invalid_argument("unknown dispatch error code");
    return {*code, j.at("message").get<std::string>(), j.value("detail", nlohmann::json::object())};
}

/// Runs f on a detached thread; nullopt if it does not finish within `timeout`.
/// f must own everything it touches, since it may outlive the caller.
template <class F>
std::optional<std::invoke_result_t<F>> run_with_timeout(F f, std::chrono::milliseconds timeout)
{
    using T = std::invoke_result_t<F>;
    auto promise = std::make_shared<std::promise<T>>();
    auto future = promise->get_future();
    std::thread([promise, f = std::move(f)]() mutable {
        try {
            promise->set_value(f());
        } catch (...) {
            promise->set_exception(std::current_exception());
        }
    }).detach();
    if (future.wait_for(timeout) == std::future_status::timeout)
        return std::nullopt;
    return future.get();
}

// ---------------------------------------------------------------------------
// Function execution

inline Result<functions::FunctionResult, DispatchError> check_result_shape(const functions::FunctionSpec& spec,
                                                                          const functions::FunctionResult& r)
{
    auto fail = [&](const std::string& why) {
        return unexpected(DispatchError{DispatchErrorCode::FunctionFailed, spec.api_name + " returned an invalid result: " + why,
                                        {{"cause", "validation"}, {"api_name", spec.api_name}}});
    };
    if (r.kind() != spec.output_kind)
        return fail(std::string("expected ") + functions::to_string(spec.output_kind) + " output, got " +
                    functions::to_string(r.kind()));
    if (const auto* dets = std::get_if<functions::Detections>(&r.value)) {
        for (const auto& d : *dets)
            if (auto err = functions::check_detection(d))
                return fail(*err);
    } else if (const auto* m = std::get_if<functions::SegmentationMask>(&r.value)) {
        if (auto err = functions::check_mask(*m))
            return fail(*err);
    }
    return r;
}

inline Result<functions::FunctionResult, DispatchError>
execute_call(const protocol::FunctionCall& call, const functions::Registry& registry, const functions::CallContext& ctx,
             std::chrono::milliseconds timeout = std::chrono::milliseconds(10000))
{
    auto entry = registry.lookup(call.api_name);
    if (!entry)
        return unexpected(DispatchError{DispatchErrorCode::UnknownFunction,
                                        "no function named '" + call.api_name + "' is registered",
                                        {{"api_name", call.api_name}}});
    const auto& spec = (*entry)->spec;

    for (const auto& [name, desc] : spec.required_params) {
        const auto it = call.api_params.find(name);
        if (it == call.api_params.end() || it->second.empty())
            return unexpected(DispatchError{DispatchErrorCode::ParamValidation,
                                            call.api_name + ": missing required parameter '" + name + "'",
                                            {{"api_name", call.api_name}, {"param", name}, {"reason", "missing"}}});
    }
    for (const auto& [name, value] : call.api_params) {
        bool declared = false;
        for (const auto& [req, desc] : spec.required_params)
            declared = declared || req == name;
        if (!declared)
            return unexpected(DispatchError{DispatchErrorCode::ParamValidation,
                                            call.api_name + ": undeclared parameter '" + name + "'",
                                            {{"api_name", call.api_name}, {"param", name}, {"reason", "undeclared"}}});
    }

    auto failed = [&](const char* cause, const std::string& msg) {
        return unexpected(DispatchError{DispatchErrorCode::FunctionFailed, call.api_name + " failed: " + msg,
                                        {{"api_name", call.api_name}, {"cause", cause}}});
    };
    functions::FunctionImpl impl = (*entry)->impl;
    std::optional<functions::FunctionResult> result;
    try {
        result = run_with_timeout([impl, params = call.api_params, ctx] { return impl(params, ctx); }, timeout);
    } catch (const functions::FunctionFailure& e) {
        return failed(functions::to_string(e.cause), e.what());
    } catch (const std::exception& e) {
        return failed("internal", e.what());
    } catch (...) {
        return failed("internal", "unknown exception");
    }
    if (!result)
        return failed("timeout", "no result within " + std::to_string(timeout.count()) + " ms");
    result->api_name = spec.api_name;
    return check_result_shape(spec, *result);
}

inline Turn render_result_turn(const functions::FunctionResult& result)
{
    Turn t;
    t.role = Role::function;
    t.content = functions::render_result_text(result);
    t.attached_result = result;
    return t;
}

// ---------------------------------------------------------------------------
// Trace

inline constexpr int trace_schema_version = 1;

struct DispatchTrace {
    std::string trace_id;
    std::string session_id;
    std::string query;
    std::optional<std::string> image_ref;
    std::optional<std::string> first_raw;
    std::optional<protocol::StructuredReply> first_reply;
    std::optional<protocol::FunctionCall> executed_call;
    std::optional<functions::FunctionResult> function_result;
    std::optional<std::string> second_raw;
    std::optional<protocol::StructuredReply> second_reply;
    int rounds = 1;
    std::optional<DispatchError> error;
    std::string final_reply;

    bool operator==(const DispatchTrace&) const = default;
};

template <class T, class F>
nlohmann::json opt_json(const std::optional<T>& v, F f)
{
    return v ? f(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json trace_to_json(const DispatchTrace& t)
{
    auto id = [](const auto& x) { return nlohmann::json(x); };
    return {{"schema_version", trace_schema_version},
            {"trace_id", t.trace_id},
            {"session_id", t.session_id},
            {"query", t.query},
            {"image_ref", opt_json(t.image_ref, id)},
            {"first_raw", opt_json(t.first_raw, id)},
            {"first_reply", opt_json(t.first_reply, protocol::reply_to_json)},
            {"executed_call", opt_json(t.executed_call, protocol::call_to_json)},
            {"function_result", opt_json(t.function_result, id)},
            {"second_raw", opt_json(t.second_raw, id)},
            {"second_reply", opt_json(t.second_reply, protocol::reply_to_json)},
            {"rounds", t.rounds},
            {"error", opt_json(t.error, error_to_json)},
            {"final_reply", t.final_reply}};
}

inline DispatchTrace trace_from_json(const nlohmann::json& j)
{
    if (j.value("schema_version", 0) != trace_schema_version)
        throw std::invalid_argument("unsupported trace schema_version");
    auto str = [&](const char* k) -> std::optional<std::string> {
        if (!j.contains(k) || j[k].is_null())
            return std::nullopt;
        return j[k].get<std::string>();
    };
    auto has = [&](const char* k) { return j.contains(k) && !j[k].is_null(); };
    DispatchTrace t;
    t.trace_id = j.at("trace_id").get<std::string>();
    t.session_id = j.at("session_id").get<std::string>();
    t.query = j.at("query").get<std::string>();
    t.image_ref = str("image_ref");
    t.first_raw = str("first_raw");
    if (has("first_reply"))
        t.first_reply = protocol::reply_from_json(j["first_reply"]);
    if (has("executed_call")) {
        const auto& c = j["executed_call"];
        t.executed_call = protocol::FunctionCall{c.at("api_name").get<std::string>(),
                                                 c.at("api_params").get<std::map<std::string, std::string>>()};
    }
    if (has("function_result"))
        t.function_result = j["function_result"].get<functions::FunctionResult>();
    t.second_raw = str("second_raw");
    if (has("second_reply"))
        t.second_reply = protocol::reply_from_json(j["second_reply"]);
    t.rounds = j.at("rounds").get<int>();
    if (has("error"))
        t.error = error_from_json(j["error"]);
    t.final_reply = j.at("final_reply").get<std::string>();
    return t;
}

/// One JSON file per trace, written once via tmp + rename. Existing files are never rewritten.
class TraceStore {
public:
    explicit TraceStore(std::optional<std::filesystem::path> dir = std::nullopt) : dir_(std::move(dir))
    {
        if (dir_)
            std::filesystem::create_directories(*dir_);
    }

    void put(const DispatchTrace& t)
    {
        std::lock_guard lk(m_);
        memory_[t.trace_id] = t;
        if (!dir_)
            return;
        const auto path = *dir_ / (t.trace_id + ".json");
        if (std::filesystem::exists(path))
            return;
        const auto tmp = *dir_ / (t.trace_id + ".json.tmp");
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << trace_to_json(t).dump(2) << "\n";
        }
        std::filesystem::rename(tmp, path);
    }

    std::optional<DispatchTrace> get(const std::string& id) const
    {
        std::lock_guard lk(m_);
        if (auto it = memory_.find(id); it != memory_.end())
            return it->second;
        if (!dir_ || id.find('/') != std::string::npos || id.find("..") != std::string::npos)
            return std::nullopt;
        std::ifstream in(*dir_ / (id + ".json"));
        if (!in)
            return std::nullopt;
        std::ostringstream os;
        os << in.rdbuf();
        try {
            return trace_from_json(nlohmann::json::parse(os.str()));
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }

    std::size_t size() const
    {
        std::lock_guard lk(m_);
        if (!dir_)
            return memory_.size();
        std::size_t n = 0;
        for (const auto& e : std::filesystem::directory_iterator(*dir_))
            n += e.path().extension() == ".json";
        return n;
    }

private:
    std::optional<std::filesystem::path> dir_;
    mutable std::mutex m_;
    std::map<std::string, DispatchTrace> memory_;
};

// ---------------------------------------------------------------------------
// Dispatch engine

struct OrchestratorConfig {
    std::chrono::milliseconds backend_timeout{30000};
    std::chrono::milliseconds function_timeout{10000};
};

struct DispatchOutcome {
    std::string final_reply;
    DispatchTrace trace;
};

inline std::string apology_for(DispatchErrorCode code)
{
    switch (code) {
    case DispatchErrorCode::BackendUnavailable:
        return "Sorry, the assistant model is unavailable right now. Please try again.";
    case DispatchErrorCode::ParseFailed:
        return "Sorry, I could not produce a well-formed answer to that request.";
    case DispatchErrorCode::UnknownFunction:
        return "Sorry, I tried to use a tool that is not available here.";
    case DispatchErrorCode::ParamValidation:
        return "Sorry, I called a tool with invalid parameters.";
    case DispatchErrorCode::FunctionFailed:
        return "Sorry, the tool I called failed to return a result.";
    }
    return "Sorry, something went wrong.";
}

class Orchestrator {
public:
    using ImageResolver = std::function<std::optional<std::string>(const std::string&)>;

    Orchestrator(std::shared_ptr<LlmBackend> backend, std::shared_ptr<const functions::Registry> registry,
                 ImageResolver shared_images = {}, OrchestratorConfig cfg = {})
        : backend_(std::move(backend)), registry_(std::move(registry)), shared_images_(std::move(shared_images)),
          cfg_(cfg)
    {
        if (!backend_ || !registry_)
            throw std::invalid_argument("orchestrator needs a backend and a registry");
    }

    const functions::Registry& registry() const { return *registry_; }
    const OrchestratorConfig& config() const { return cfg_; }

    bool image_resolves(const Session& s, const std::string& ref) const
    {
        return s.image_store.count(ref) || (shared_images_ && shared_images_(ref));
    }

    /// Throws std::invalid_argument when image_ref is given but unknown. Every other failure is
    /// reported through the trace.
    DispatchOutcome handle_query(Session& session, const std::string& query,
                                 const std::optional<std::string>& image_ref = std::nullopt) const
    {
        if (image_ref && !image_resolves(session, *image_ref))
            throw std::invalid_argument("image '" + *image_ref + "' is not known to this session");

        std::size_t index = 0;
        for (const auto& t : session.turns)
            index += t.role == Role::user;
        char suffix[16];
        std::snprintf(suffix, sizeof suffix, "-t%04zu", index + 1);

        DispatchTrace trace;
        trace.trace_id = session.id + suffix;
        trace.session_id = session.id;
        trace.query = query;
        trace.image_ref = image_ref;
        trace.rounds = 1;

        session.append(Turn{Role::user, query, image_ref, std::nullopt});

        auto fail = [&](DispatchError e) {
            const auto apology = apology_for(e.code);
            trace.error = std::move(e);
            trace.final_reply = apology;
            session.append(Turn{Role::assistant, protocol::render_structured({"", std::nullopt, apology}), std::nullopt,
                                std::nullopt});
            return DispatchOutcome{apology, trace};
        };

        // Round 1
        auto raw1 = generate(session.turns);
        if (!raw1)
            return fail(raw1.error());
        trace.first_raw = *raw1;
        auto first = protocol::parse_structured(*raw1);
        if (!first)
            return fail(parse_error(first.error(), "first"));
        trace.first_reply = *first;

        if (!first->calling) {
            session.append(Turn{Role::assistant, *raw1, std::nullopt, std::nullopt});
            trace.final_reply = first->replying;
            return {trace.final_reply, trace};
        }

        session.append(Turn{Role::assistant, *raw1, std::nullopt, std::nullopt});
        functions::CallContext ctx;
        ctx.image_ref = last_image(session);
        ctx.image_bytes = image_lookup(session, ctx.image_ref);
        auto result = execute_call(*first->calling, *registry_, ctx, cfg_.function_timeout);
        if (!result)
            return fail(result.error());

        // Round 2
        trace.rounds = 2;
        trace.executed_call = *first->calling;
        trace.function_result = *result;
        session.append(render_result_turn(*result));

        auto raw2 = generate(session.turns);
        if (!raw2)
            return fail(raw2.error());
        trace.second_raw = *raw2;
        auto second = protocol::parse_structured(*raw2);
        if (!second) {
            // Degrade to the raw text rather than dropping the answer.
            trace.error = parse_error(second.error(), "second");
            trace.final_reply = *raw2;
            session.append(Turn{Role::assistant, *raw2, std::nullopt, std::nullopt});
            return {trace.final_reply, trace};
        }
        trace.second_reply = *second; // any calling block here is recorded but never executed
        trace.final_reply = second->replying;
        session.append(Turn{Role::assistant, *raw2, std::nullopt, std::nullopt});
        return {trace.final_reply, trace};
    }

private:
    static DispatchError parse_error(const protocol::ParseError& e, const char* round)
    {
        return {DispatchErrorCode::ParseFailed,
                std::string(round) + " reply did not parse: " + e.message,
                {{"round", round},
                 {"kind", protocol::to_string(e.kind)},
                 {"offset", e.offset},
                 {"span", {e.span_begin, e.span_end}}}};
    }

    Result<std::string, DispatchError> generate(const std::vector<Turn>& turns) const
    {
        auto unavailable = [](const char* cause, const std::string& msg) {
            return unexpected(DispatchError{DispatchErrorCode::BackendUnavailable, msg, {{"cause", cause}}});
        };
        std::optional<Result<std::string, BackendError>> out;
        try {
            out = run_with_timeout([backend = backend_, turns] { return backend->generate(turns); },
                                   cfg_.backend_timeout);
        } catch (const std::exception& e) {
            return unavailable("internal", std::string("backend raised: ") + e.what());
        } catch (...) {
            return unavailable("internal", "backend raised an unknown exception");
        }
        if (!out)
            return unavailable("timeout", "backend did not answer within " + std::to_string(cfg_.backend_timeout.count()) +
                                              " ms");
        if (!*out)
            return unavailable(to_string(out->error().cause), out->error().message);
        return out->value();
    }

    static std::optional<std::string> last_image(const Session& s)
    {
        for (auto it = s.turns.rbegin(); it != s.turns.rend(); ++it)
            if (it->role == Role::user && it->image_ref)
                return it->image_ref;
        return std::nullopt;
    }

    /// Snapshot of the bytes the call may need, so a timed-out function never touches the session.
    functions::CallContext::Lookup image_lookup(const Session& s, const std::optional<std::string>& ref) const
    {
        std::optional<std::string> bytes;
        if (ref)
            if (auto it = s.image_store.find(*ref); it != s.image_store.end())
                bytes = it->second;
        return [ref, bytes, shared = shared_images_](const std::string& r) -> std::optional<std::string> {
            if (ref && r == *ref && bytes)
                return bytes;
            return shared ? shared(r) : std::nullopt;
        };
    }

    std::shared_ptr<LlmBackend> backend_;
    std::shared_ptr<const functions::Registry> registry_;
    ImageResolver shared_images_;
    OrchestratorConfig cfg_;
};

} // namespace vsa::orchestrator
