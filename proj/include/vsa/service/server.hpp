#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "vsa/base64.hpp"
#include "vsa/eval/report.hpp"
#include "vsa/orchestrator/dispatch.hpp"
#include "vsa/orchestrator/session.hpp"
#include "vsa/service/config.hpp"
#include "vsa/service/runtime.hpp"

namespace vsa::service {

struct StartupError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// HTTP error body: {code, message, detail}.
struct HttpError {
    int status = 400;
    std::string code;
    std::string message;
    nlohmann::json detail = nlohmann::json::object();
};

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, const HttpError& e)
{
    send_json(res, e.status, {{"code", e.code}, {"message", e.message}, {"detail", e.detail}});
}

inline HttpError bad_field(const std::string& field, const std::string& message)
{
    return {400, "bad_request", message, {{"field", field}}};
}

inline nlohmann::json parse_body(const httplib::Request& req, bool allow_empty)
{
    if (req.body.empty() || protocol::trim(req.body).empty()) {
        if (allow_empty)
            return nlohmann::json::object();
        throw bad_field("body", "request body must be a JSON object");
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
        HttpError err = bad_field("body", "request body is not valid JSON");
        err.detail["byte"] = e.byte;
        throw err;
    }
    if (!j.is_object())
        throw bad_field("body", "request body must be a JSON object");
    return j;
}

class Service {
public:
    Service(ServiceConfig cfg, Runtime rt)
        : cfg_(std::move(cfg)), rt_(std::move(rt)), sessions_(cfg_.session_dir), traces_(cfg_.trace_dir)
    {
        const int threads = cfg_.threads;
        server_.new_task_queue = [threads] { return new httplib::ThreadPool(static_cast<size_t>(threads)); };
        server_.set_payload_max_length(cfg_.max_image_bytes / 3 * 4 + (1u << 20));
        // httplib also sets SO_REUSEPORT by default, which lets a second instance share a busy port.
        server_.set_socket_options([](socket_t sock) {
            int yes = 1;
            ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
        });
        server_.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                                     {"Access-Control-Allow-Headers", "Content-Type"},
                                     {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
        routes();
    }

    explicit Service(ServiceConfig cfg) : Service(cfg, make_runtime(cfg)) {}

    /// Binds the listening socket; throws StartupError when the port is taken. Returns the bound port.
    int bind()
    {
        if (cfg_.port == 0)
            port_ = server_.bind_to_any_port(cfg_.host);
        else
            port_ = server_.bind_to_port(cfg_.host, cfg_.port) ? cfg_.port : -1;
        if (port_ < 0)
            throw StartupError("cannot listen on " + cfg_.host + ":" + std::to_string(cfg_.port) +
                               " (address in use or not permitted)");
        return port_;
    }

    /// Serves until stop(); in-flight requests complete before this returns.
    void run()
    {
        if (port_ < 0)
            bind();
        server_.listen_after_bind();
    }

    void stop() { server_.stop(); }
    bool running() const { return server_.is_running(); }
    void wait_until_ready() const { server_.wait_until_ready(); }
    int port() const { return port_; }

    orchestrator::SessionStore& sessions() { return sessions_; }
    orchestrator::TraceStore& traces() { return traces_; }
    const Runtime& runtime() const { return rt_; }

    nlohmann::json health() const
    {
        nlohmann::json names = nlohmann::json::array();
        for (const auto& s : rt_.registry->list())
            names.push_back(s.api_name);
        return {{"status", "ok"},
                {"version", version},
                {"backend", cfg_.backend},
                {"registry", {{"count", rt_.registry->size()}, {"functions", names}}},
                {"sessions", sessions_.size()}};
    }

private:
    template <class F>
    httplib::Server::Handler guarded(F f)
    {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const HttpError& e) {
                send_error(res, e);
            } catch (const std::exception& e) {
                send_error(res, {500, "internal", e.what(), nlohmann::json::object()});
            }
        };
    }

    void routes()
    {
        server_.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

        server_.Get("/v1/health", guarded([this](const httplib::Request&, httplib::Response& res) {
                        send_json(res, 200, health());
                    }));

        server_.Get("/v1/functions", guarded([this](const httplib::Request&, httplib::Response& res) {
                        send_json(res, 200, {{"functions", rt_.registry->list()}});
                    }));

        server_.Post("/v1/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                         parse_body(req, true);
                         auto slot = sessions_.create();
                         std::lock_guard lk(slot->dispatch);
                         sessions_.persist(slot->session);
                         send_json(res, 201, orchestrator::session_to_json(slot->session));
                     }));

        server_.Get(R"(/v1/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        auto slot = find_session(req.matches[1]);
                        std::lock_guard lk(slot->dispatch);
                        send_json(res, 200, orchestrator::session_to_json(slot->session));
                    }));

        server_.Post(R"(/v1/sessions/([^/]+)/chat)",
                     guarded([this](const httplib::Request& req, httplib::Response& res) { chat(req, res); }));

        server_.Get(R"(/v1/traces/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                        auto t = traces_.get(req.matches[1]);
                        if (!t)
                            throw HttpError{404, "not_found", "no trace '" + std::string(req.matches[1]) + "'",
                                            {{"trace_id", std::string(req.matches[1])}}};
                        send_json(res, 200, orchestrator::trace_to_json(*t));
                    }));

        server_.Post("/v1/eval",
                     guarded([this](const httplib::Request& req, httplib::Response& res) { run_eval(req, res); }));
    }

    std::shared_ptr<orchestrator::SessionSlot> find_session(const std::string& id)
    {
        auto slot = sessions_.get(id);
        if (!slot)
            throw HttpError{404, "not_found", "no session '" + id + "'", {{"session_id", id}}};
        return slot;
    }

    void chat(const httplib::Request& req, httplib::Response& res)
    {
        auto slot = find_session(req.matches[1]);
        const auto body = parse_body(req, false);
        if (!body.contains("message") || !body["message"].is_string())
            throw bad_field("message", "'message' must be a string");
        const auto message = body["message"].get<std::string>();
        if (protocol::trim(message).empty())
            throw bad_field("message", "'message' must not be empty");

        std::optional<std::string> image_bytes;
        if (body.contains("image_base64") && !body["image_base64"].is_null()) {
            if (!body["image_base64"].is_string())
                throw bad_field("image_base64", "'image_base64' must be a base64 string");
            const auto& b64 = body["image_base64"].get_ref<const std::string&>();
            if (b64.size() / 4 * 3 > cfg_.max_image_bytes)
                throw HttpError{413, "payload_too_large", "image exceeds the size limit",
                                {{"field", "image_base64"}, {"max_bytes", cfg_.max_image_bytes}}};
            image_bytes = base64_decode(b64);
            if (!image_bytes)
                throw bad_field("image_base64", "'image_base64' is not valid base64");
            if (image_bytes->size() > cfg_.max_image_bytes)
                throw HttpError{413, "payload_too_large", "image exceeds the size limit",
                                {{"field", "image_base64"}, {"max_bytes", cfg_.max_image_bytes}}};
        }
        std::optional<std::string> image_ref;
        if (body.contains("image_ref") && !body["image_ref"].is_null()) {
            if (!body["image_ref"].is_string())
                throw bad_field("image_ref", "'image_ref' must be a string");
            image_ref = body["image_ref"].get<std::string>();
        }
        if (image_ref && image_bytes)
            throw bad_field("image_ref", "send either 'image_ref' or 'image_base64', not both");

        std::lock_guard lk(slot->dispatch);
        auto& session = slot->session;
        if (image_bytes)
            image_ref = session.add_image(std::move(*image_bytes));
        else if (image_ref && !rt_.orchestrator->image_resolves(session, *image_ref))
            throw HttpError{400, "bad_request", "unknown image '" + *image_ref + "'", {{"field", "image_ref"}}};

        const auto out = rt_.orchestrator->handle_query(session, message, image_ref);
        traces_.put(out.trace);
        sessions_.persist(session);
        nlohmann::json reply = {{"reply", out.final_reply},
                                {"trace_id", out.trace.trace_id},
                                {"rounds", out.trace.rounds},
                                {"error", out.trace.error ? nlohmann::json(orchestrator::to_string(out.trace.error->code))
                                                          : nlohmann::json(nullptr)},
                                {"trace", orchestrator::trace_to_json(out.trace)}};
        send_json(res, 200, reply);
    }

    void run_eval(const httplib::Request& req, httplib::Response& res)
    {
        const auto body = parse_body(req, false);
        std::vector<eval::EvalCase> cases;
        if (body.contains("cases")) {
            if (!body["cases"].is_array())
                throw bad_field("cases", "'cases' must be an array of eval cases");
            for (std::size_t i = 0; i < body["cases"].size(); ++i) {
                try {
                    const auto& c = body["cases"][i];
                    cases.push_back(c.contains("expectations") ? c["expectations"].get<eval::EvalCase>()
                                                               : c.get<eval::EvalCase>());
                } catch (const std::exception& e) {
                    HttpError err = bad_field("cases", std::string("case ") + std::to_string(i) + ": " + e.what());
                    err.detail["index"] = i;
                    throw err;
                }
            }
        } else if (body.contains("cases_path")) {
            if (!body["cases_path"].is_string())
                throw bad_field("cases_path", "'cases_path' must be a string");
            try {
                cases = eval::parse_cases(read_text_file(body["cases_path"].get<std::string>()));
            } catch (const std::exception& e) {
                throw bad_field("cases_path", e.what());
            }
        } else {
            throw bad_field("cases", "provide 'cases' or 'cases_path'");
        }
        eval::EvalOptions opts;
        opts.lexicon = rt_.lexicon;
        opts.config = {{"backend", cfg_.backend}};
        eval::EvalReport rep;
        try {
            rep = eval::run_eval(*rt_.orchestrator, cases, opts);
        } catch (const std::invalid_argument& e) {
            throw bad_field("cases", e.what());
        }
        send_json(res, 200, eval::report_to_json(rep));
    }

    ServiceConfig cfg_;
    Runtime rt_;
    orchestrator::SessionStore sessions_;
    orchestrator::TraceStore traces_;
    httplib::Server server_;
    int port_ = -1;
};

} // namespace vsa::service
