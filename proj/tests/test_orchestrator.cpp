#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "httplib.h"
#include "support/harness.hpp"
#include "vsa/orchestrator/dispatch.hpp"
#include "vsa/orchestrator/session.hpp"

using namespace vsa;
using namespace vsa::orchestrator;
using namespace std::chrono_literals;
using testgen::call_reply;
using testgen::plain_reply;
namespace fs = std::filesystem;

namespace {

Session make_session(const std::string& id = "s-test")
{
    Session s;
    s.id = id;
    return s;
}

std::shared_ptr<testgen::QueueBackend> queue(std::vector<std::string> replies)
{
    return std::make_shared<testgen::QueueBackend>(std::move(replies));
}

fs::path temp_dir(const std::string& name)
{
    auto p = fs::temp_directory_path() / ("vsa_orch_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    return p;
}

/// Registry with one custom function named `name` declared as detect-shaped.
std::shared_ptr<const functions::Registry> custom_registry(functions::FunctionImpl impl)
{
    functions::Registry reg;
    reg.register_function(functions::detect_spec(), std::move(impl));
    return std::make_shared<const functions::Registry>(std::move(reg));
}

} // namespace

TEST(Dispatch, NoCallBranchIsOneRound)
{
    auto backend = queue({plain_reply("It is a surgical scene.")});
    auto orch = testgen::fixture_orchestrator(backend);
    auto s = make_session();
    const auto out = orch.handle_query(s, "Describe this image.", "probe_0001");
    EXPECT_EQ(out.final_reply, "It is a surgical scene.");
    EXPECT_EQ(out.trace.rounds, 1);
    EXPECT_FALSE(out.trace.error);
    EXPECT_FALSE(out.trace.executed_call);
    EXPECT_EQ(backend->calls, 1);
    ASSERT_EQ(s.turns.size(), 2u);
    EXPECT_EQ(s.turns[0].role, Role::user);
    EXPECT_EQ(s.turns[1].role, Role::assistant);
}

TEST(Dispatch, CallBranchIsTwoRoundsWithFunctionTurn)
{
    auto backend = queue({call_reply("detect", {{"target", "navigation probe"}}), plain_reply("Found it.")});
    auto orch = testgen::fixture_orchestrator(backend);
    auto s = make_session();
    const auto out = orch.handle_query(s, "Where is the navigation probe?", "probe_0001");
    EXPECT_EQ(out.final_reply, "Found it.");
    EXPECT_EQ(out.trace.rounds, 2);
    ASSERT_TRUE(out.trace.function_result);
    EXPECT_EQ(backend->calls, 2);
    ASSERT_EQ(s.turns.size(), 4u);
    EXPECT_EQ(s.turns[2].role, Role::function);
    EXPECT_EQ(s.turns[2].content, "navigation probe [0.18, 0.41, 0.45, 0.99] 1.00");
    EXPECT_TRUE(s.turns[2].attached_result);
}

TEST(Dispatch, ProbeWalkthrough)
{
    const auto rec = probe_walkthrough_record();
    auto orch = testgen::fixture_orchestrator(std::make_shared<ScriptedBackend>(script_from_records({rec})));
    auto s = make_session();
    const auto out = orch.handle_query(s, rec.query, rec.image_ref);
    EXPECT_EQ(out.trace.rounds, 2);
    EXPECT_FALSE(out.trace.error);
    ASSERT_TRUE(out.trace.executed_call);
    EXPECT_EQ(out.trace.executed_call->api_name, "detect");
    EXPECT_EQ(out.trace.executed_call->api_params.at("target"), "navigation probe");
    EXPECT_NE(out.final_reply.find("[0.18, 0.41, 0.45, 0.99]"), std::string::npos) << out.final_reply;
    EXPECT_NE(s.turns[2].content.find("[0.18, 0.41, 0.45, 0.99]"), std::string::npos);
}

TEST(Dispatch, UnknownFunction)
{
    auto backend = queue({call_reply("teleport")});
    auto orch = testgen::fixture_orchestrator(backend);
    auto s = make_session();
    const auto out = orch.handle_query(s, "q", "probe_0001");
    ASSERT_TRUE(out.trace.error);
    EXPECT_EQ(out.trace.error->code, DispatchErrorCode::UnknownFunction);
    EXPECT_EQ(out.trace.error->detail["api_name"], "teleport");
    EXPECT_EQ(out.final_reply, apology_for(DispatchErrorCode::UnknownFunction));
    EXPECT_EQ(backend->calls, 1);
    ASSERT_EQ(s.turns.size(), 3u);
    auto last = protocol::parse_structured(s.turns.back().content);
    ASSERT_TRUE(last);
    EXPECT_EQ(last->replying, out.final_reply);
}

TEST(Dispatch, ParamValidation)
{
    for (const auto& [params, reason] :
         std::vector<std::pair<std::map<std::string, std::string>, std::string>>{
             {{}, "target"}, {{{"target", ""}}, "target"}, {{{"target", "drill"}, {"colour", "red"}}, "colour"}}) {
        auto orch = testgen::fixture_orchestrator(queue({call_reply("detect", params)}));
        auto s = make_session();
        const auto out = orch.handle_query(s, "q", "probe_0001");
        ASSERT_TRUE(out.trace.error);
        EXPECT_EQ(out.trace.error->code, DispatchErrorCode::ParamValidation);
        EXPECT_EQ(out.trace.error->detail["param"], reason);
        EXPECT_FALSE(out.trace.function_result);
    }
}

TEST(Dispatch, FunctionFailures)
{
    auto check = [](functions::FunctionImpl impl, const std::string& cause, OrchestratorConfig cfg = {}) {
        Orchestrator orch(queue({call_reply("detect", {{"target", "x"}})}), custom_registry(std::move(impl)), {}, cfg);
        auto s = make_session();
        const auto out = orch.handle_query(s, "q");
        ASSERT_TRUE(out.trace.error);
        EXPECT_EQ(out.trace.error->code, DispatchErrorCode::FunctionFailed);
        EXPECT_EQ(out.trace.error->detail["cause"], cause);
        EXPECT_EQ(out.final_reply, apology_for(DispatchErrorCode::FunctionFailed));
    };
    check([](const functions::Params&, const functions::CallContext&) -> functions::FunctionResult {
        throw std::runtime_error("boom");
    }, "internal");
    check([](const functions::Params&, const functions::CallContext&) -> functions::FunctionResult {
        throw functions::FunctionFailure(functions::FailureCause::missing_input, "no image");
    }, "missing_input");
    check([](const functions::Params&, const functions::CallContext&) {
        return functions::FunctionResult{"detect", functions::SceneAnalysis{}};
    }, "validation");
    check([](const functions::Params&, const functions::CallContext&) {
        return functions::FunctionResult{"detect", functions::Detections{{"x", {0.9, 0.1, 0.2, 0.2}, 1.0}}};
    }, "validation");
    OrchestratorConfig fast;
    fast.function_timeout = 100ms;
    check([](const functions::Params&, const functions::CallContext&) {
        std::this_thread::sleep_for(400ms);
        return functions::FunctionResult{"detect", functions::Detections{}};
    }, "timeout", fast);
}

TEST(Dispatch, BackendFailuresAreBackendUnavailable)
{
    auto run = [](std::shared_ptr<LlmBackend> b, OrchestratorConfig cfg = {}) {
        Orchestrator orch(std::move(b), custom_registry({}), {}, cfg);
        auto s = make_session();
        return orch.handle_query(s, "q");
    };
    OrchestratorConfig fast;
    fast.backend_timeout = 100ms;
    auto slow = std::make_shared<testgen::FnBackend>([](const std::vector<Turn>&) -> Result<std::string, BackendError> {
        std::this_thread::sleep_for(400ms);
        return plain_reply("late");
    });
    const auto t0 = std::chrono::steady_clock::now();
    auto out = run(slow, fast);
    EXPECT_LT(std::chrono::steady_clock::now() - t0, 350ms);
    ASSERT_TRUE(out.trace.error);
    EXPECT_EQ(out.trace.error->code, DispatchErrorCode::BackendUnavailable);
    EXPECT_EQ(out.trace.error->detail["cause"], "timeout");

    auto refusing = std::make_shared<testgen::FnBackend>([](const std::vector<Turn>&) -> Result<std::string, BackendError> {
        return unexpected(BackendError{BackendFailure::transport, "connection refused"});
    });
    out = run(refusing);
    ASSERT_TRUE(out.trace.error);
    EXPECT_EQ(out.trace.error->code, DispatchErrorCode::BackendUnavailable);
    EXPECT_EQ(out.trace.error->detail["cause"], "transport");

    auto throwing = std::make_shared<testgen::FnBackend>([](const std::vector<Turn>&) -> Result<std::string, BackendError> {
        throw std::runtime_error("kaput");
    });
    out = run(throwing);
    ASSERT_TRUE(out.trace.error);
    EXPECT_EQ(out.trace.error->detail["cause"], "internal");
}

TEST(Dispatch, ParseFailures)
{
    auto orch = testgen::fixture_orchestrator(queue({"<think>no reply here</think>"}));
    auto s = make_session();
    auto out = orch.handle_query(s, "q", "probe_0001");
    ASSERT_TRUE(out.trace.error);
    EXPECT_EQ(out.trace.error->code, DispatchErrorCode::ParseFailed);
    EXPECT_EQ(out.trace.error->detail["round"], "first");
    EXPECT_EQ(out.trace.error->detail["kind"], "MissingReply");
    EXPECT_EQ(out.final_reply, apology_for(DispatchErrorCode::ParseFailed));

    auto orch2 = testgen::fixture_orchestrator(
        queue({call_reply("analyze_scene"), "free text answer without tags"}));
    auto s2 = make_session();
    out = orch2.handle_query(s2, "q", "probe_0001");
    ASSERT_TRUE(out.trace.error);
    EXPECT_EQ(out.trace.error->code, DispatchErrorCode::ParseFailed);
    EXPECT_EQ(out.trace.error->detail["round"], "second");
    EXPECT_EQ(out.final_reply, "free text answer without tags");
    EXPECT_EQ(out.trace.rounds, 2);
}

TEST(Dispatch, CallInSecondReplyIsNeverExecuted)
{
    std::atomic<int> executions{0};
    Orchestrator orch(queue({call_reply("detect", {{"target", "x"}}), call_reply("detect", {{"target", "y"}}, "Final.")}),
                      custom_registry([&](const functions::Params&, const functions::CallContext&) {
                          ++executions;
                          return functions::FunctionResult{"detect", functions::Detections{}};
                      }));
    auto s = make_session();
    const auto out = orch.handle_query(s, "q");
    EXPECT_EQ(executions.load(), 1);
    EXPECT_EQ(out.trace.rounds, 2);
    EXPECT_EQ(out.final_reply, "Final.");
    ASSERT_TRUE(out.trace.second_reply && out.trace.second_reply->calling);
    EXPECT_EQ(out.trace.executed_call->api_params.at("target"), "x");
    EXPECT_EQ(s.turns.size(), 4u);
}

TEST(Dispatch, UnknownImageIsRejected)
{
    auto orch = testgen::fixture_orchestrator(queue({}));
    auto s = make_session();
    EXPECT_THROW(orch.handle_query(s, "q", "nope"), std::invalid_argument);
    EXPECT_TRUE(s.turns.empty());
    const auto id = s.add_image("PGM bytes");
    EXPECT_NO_THROW(orch.handle_query(s, "q", id));
}

TEST(Dispatch, FunctionSeesSessionImageAndFollowUpsReuseIt)
{
    std::vector<std::optional<std::string>> seen;
    Orchestrator orch(queue({call_reply("detect", {{"target", "x"}}), plain_reply("a"),
                             call_reply("detect", {{"target", "x"}}), plain_reply("b")}),
                      custom_registry([&](const functions::Params&, const functions::CallContext& ctx) {
                          seen.push_back(ctx.image_ref ? ctx.image_bytes(*ctx.image_ref) : std::nullopt);
                          return functions::FunctionResult{"detect", functions::Detections{}};
                      }));
    auto s = make_session();
    const auto id = s.add_image("raw-image");
    orch.handle_query(s, "first", id);
    orch.handle_query(s, "follow-up");
    ASSERT_EQ(seen.size(), 2u);
    EXPECT_EQ(seen[0], "raw-image");
    EXPECT_EQ(seen[1], "raw-image");
}

TEST(Session, TurnsAppendOnlyAndTraceIdsMonotone)
{
    auto orch = testgen::fixture_orchestrator(queue({plain_reply("1"), call_reply("analyze_scene"), plain_reply("2"),
                                                     call_reply("teleport")}));
    auto s = make_session("s-000042");
    std::vector<Turn> prefix;
    std::vector<std::string> ids;
    for (const char* q : {"a", "b", "c"}) {
        ids.push_back(orch.handle_query(s, q, "probe_0001").trace.trace_id);
        ASSERT_GE(s.turns.size(), prefix.size());
        EXPECT_TRUE(std::equal(prefix.begin(), prefix.end(), s.turns.begin()));
        prefix = s.turns;
    }
    EXPECT_EQ(ids, (std::vector<std::string>{"s-000042-t0001", "s-000042-t0002", "s-000042-t0003"}));
    EXPECT_EQ(s.turns.size(), 2u + 4u + 3u);
}

TEST(Session, JsonRoundTripKeepsImages)
{
    auto s = make_session();
    const auto id = s.add_image(std::string("\x00\xff\x10", 3));
    s.append({Role::user, "q", id, std::nullopt});
    s.append(render_result_turn({"detect", functions::Detections{{"drill", {0, 0, 1, 1}, 1}}}));
    const auto back = session_from_json(session_to_json(s, true));
    EXPECT_EQ(back.turns, s.turns);
    EXPECT_EQ(back.image_store, s.image_store);
    EXPECT_TRUE(session_from_json(session_to_json(s, false)).image_store.empty());
    EXPECT_EQ(image_id_for("abc"), image_id_for("abc"));
    EXPECT_NE(image_id_for("abc"), image_id_for("abd"));
}

TEST(Session, FifoMutexServesInArrivalOrder)
{
    FifoMutex m;
    std::vector<int> order;
    std::mutex order_m;
    m.lock();
    std::vector<std::thread> threads;
    for (int i = 0; i < 6; ++i) {
        threads.emplace_back([&, i] {
            m.lock();
            {
                std::lock_guard lk(order_m);
                order.push_back(i);
            }
            m.unlock();
        });
        std::this_thread::sleep_for(30ms);
    }
    m.unlock();
    for (auto& t : threads)
        t.join();
    EXPECT_EQ(order, (std::vector<int>{0, 1, 2, 3, 4, 5}));
}

TEST(Session, ConcurrentQueriesDoNotInterleave)
{
    auto backend = std::make_shared<testgen::FnBackend>([](const std::vector<Turn>& c) -> Result<std::string, BackendError> {
        std::this_thread::sleep_for(2ms);
        if (c.back().role == Role::user)
            return call_reply("analyze_scene");
        return plain_reply("ok");
    });
    auto orch = testgen::fixture_orchestrator(backend);
    SessionStore store;
    auto slot = store.create();
    std::vector<std::thread> threads;
    std::mutex ids_m;
    std::set<std::string> ids;
    for (int i = 0; i < 8; ++i)
        threads.emplace_back([&, i] {
            std::lock_guard<FifoMutex> lk(slot->dispatch);
            auto out = orch.handle_query(slot->session, "q" + std::to_string(i), "probe_0001");
            std::lock_guard lk2(ids_m);
            ids.insert(out.trace.trace_id);
        });
    for (auto& t : threads)
        t.join();
    EXPECT_EQ(ids.size(), 8u);
    const auto& turns = slot->session.turns;
    ASSERT_EQ(turns.size(), 32u);
    for (std::size_t i = 0; i < turns.size(); i += 4) {
        EXPECT_EQ(turns[i].role, Role::user);
        EXPECT_EQ(turns[i + 1].role, Role::assistant);
        EXPECT_EQ(turns[i + 2].role, Role::function);
        EXPECT_EQ(turns[i + 3].role, Role::assistant);
    }
}

TEST(Trace, ReplayIsBytewiseIdentical)
{
    const auto rec = probe_walkthrough_record();
    auto run = [&] {
        auto orch = testgen::fixture_orchestrator(std::make_shared<ScriptedBackend>(script_from_records({rec})));
        auto s = make_session("s-000001");
        std::string all;
        for (const auto& q : {rec.query, std::string("unmatched"), rec.query})
            all += trace_to_json(orch.handle_query(s, q, rec.image_ref).trace).dump() + "\n";
        return all;
    };
    EXPECT_EQ(run(), run());
}

TEST(Trace, JsonRoundTripAndStorePersistence)
{
    auto orch = testgen::fixture_orchestrator(queue({call_reply("detect", {{"target", "navigation probe"}}),
                                                     plain_reply("done"), call_reply("teleport")}));
    auto s = make_session();
    const auto ok = orch.handle_query(s, "q1", "probe_0001").trace;
    const auto bad = orch.handle_query(s, "q2").trace;
    EXPECT_EQ(trace_to_json(trace_from_json(trace_to_json(ok))), trace_to_json(ok));
    EXPECT_EQ(trace_to_json(trace_from_json(trace_to_json(bad))), trace_to_json(bad));

    const auto dir = temp_dir("traces");
    {
        TraceStore store(dir);
        store.put(ok);
        store.put(bad);
        EXPECT_EQ(store.size(), 2u);
    }
    TraceStore reopened(dir);
    EXPECT_EQ(reopened.size(), 2u);
    const auto got = reopened.get(ok.trace_id);
    ASSERT_TRUE(got);
    EXPECT_EQ(trace_to_json(*got), trace_to_json(ok));
    EXPECT_FALSE(reopened.get("../etc/passwd"));
    EXPECT_FALSE(reopened.get("missing"));
    for (const auto& e : fs::directory_iterator(dir))
        EXPECT_NE(e.path().extension(), ".tmp");
    fs::remove_all(dir);
}

TEST(Session, StoreReloadsPersistedSessions)
{
    const auto dir = temp_dir("sessions");
    std::string id;
    {
        SessionStore store(dir);
        auto slot = store.create();
        id = slot->session.id;
        slot->session.add_image("bytes");
        slot->session.append({Role::user, "hello", std::nullopt, std::nullopt});
        store.persist(slot->session);
    }
    SessionStore reopened(dir);
    auto slot = reopened.get(id);
    ASSERT_TRUE(slot);
    EXPECT_EQ(slot->session.turns.size(), 1u);
    EXPECT_EQ(slot->session.image_store.size(), 1u);
    EXPECT_NE(reopened.create()->session.id, id);
    fs::remove_all(dir);
}

namespace {

struct StubLlm {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> hits{0};
    std::string last_body;

    StubLlm()
    {
        server.Post("/echo", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits;
            last_body = req.body;
            const auto j = nlohmann::json::parse(req.body);
            const auto content = plain_reply("echo: " + j["messages"].back()["content"].get<std::string>());
            res.set_content(nlohmann::json{{"choices", {{{"message", {{"content", content}}}}}}}.dump(),
                            "application/json");
        });
        server.Post("/fail", [this](const httplib::Request&, httplib::Response& res) {
            ++hits;
            res.status = 500;
        });
        server.Post("/slow", [](const httplib::Request&, httplib::Response& res) {
            std::this_thread::sleep_for(500ms);
            res.set_content("{}", "application/json");
        });
        server.Post("/weird", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"choices":[]})", "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~StubLlm()
    {
        server.stop();
        thread.join();
    }

    std::shared_ptr<RemoteBackend> backend(const std::string& path, int timeout_ms = 2000,
                                           ImageTransport images = ImageTransport::reference)
    {
        RemoteBackendConfig cfg;
        cfg.endpoint = {"http://127.0.0.1:" + std::to_string(port), path, timeout_ms, 3, 1};
        cfg.images = images;
        return std::make_shared<RemoteBackend>(
            cfg, [](const std::string& ref) -> std::optional<std::string> { return "bytes-of-" + ref; });
    }
};

} // namespace

TEST(RemoteBackend, EchoThroughOrchestrator)
{
    StubLlm stub;
    auto orch = testgen::fixture_orchestrator(stub.backend("/echo", 2000, ImageTransport::base64));
    auto s = make_session();
    const auto out = orch.handle_query(s, "hello there", "probe_0001");
    EXPECT_EQ(out.final_reply, "echo: hello there");
    EXPECT_FALSE(out.trace.error);
    const auto body = nlohmann::json::parse(stub.last_body);
    EXPECT_EQ(body["model"], "vs-assistant");
    EXPECT_EQ(body["messages"][0]["role"], "user");
    EXPECT_EQ(body["messages"][0]["image_ref"], "probe_0001");
    EXPECT_EQ(body["messages"][0]["image_base64"], base64_encode("bytes-of-probe_0001"));
}

TEST(RemoteBackend, ServerErrorsRetriedThenUnavailable)
{
    StubLlm stub;
    auto orch = testgen::fixture_orchestrator(stub.backend("/fail"));
    auto s = make_session();
    const auto out = orch.handle_query(s, "q");
    EXPECT_EQ(stub.hits.load(), 3);
    ASSERT_TRUE(out.trace.error);
    EXPECT_EQ(out.trace.error->code, DispatchErrorCode::BackendUnavailable);
    EXPECT_EQ(out.trace.error->detail["cause"], "http_status");
}

TEST(RemoteBackend, TimeoutAndBadResponse)
{
    StubLlm stub;
    auto s = make_session();
    auto out = testgen::fixture_orchestrator(stub.backend("/slow", 150)).handle_query(s, "q");
    ASSERT_TRUE(out.trace.error);
    EXPECT_EQ(out.trace.error->detail["cause"], "timeout");
    out = testgen::fixture_orchestrator(stub.backend("/weird")).handle_query(s, "q");
    ASSERT_TRUE(out.trace.error);
    EXPECT_EQ(out.trace.error->detail["cause"], "bad_response");
}

TEST(Script, JsonRoundTripAndLookup)
{
    const auto rec = probe_walkthrough_record();
    const auto script = script_from_records({rec});
    const auto back = script_from_json(script_to_json(script));
    EXPECT_EQ(script_to_json(back), script_to_json(script));
    ScriptedBackend b(back);
    std::vector<Turn> conv{{Role::user, rec.query, rec.image_ref, std::nullopt}};
    auto first = protocol::parse_structured(*b.generate(conv));
    ASSERT_TRUE(first);
    EXPECT_TRUE(first->calling);
    conv.push_back({Role::assistant, "x", std::nullopt, std::nullopt});
    conv.push_back({Role::function, "y", std::nullopt, std::nullopt});
    auto second = protocol::parse_structured(*b.generate(conv));
    ASSERT_TRUE(second);
    EXPECT_EQ(second->replying, rec.gold.replying);
    EXPECT_EQ(*b.generate({{Role::user, "nothing", std::nullopt, std::nullopt}}), script.default_reply);
}
