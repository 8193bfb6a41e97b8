#pragma once

// Test doubles for the dispatch engine.

#include <deque>
#include <memory>
#include <mutex>

#include "vsa/functions/fixtures.hpp"
#include "vsa/orchestrator/backend.hpp"
#include "vsa/orchestrator/dispatch.hpp"

namespace vsa::testgen {

/// Backend driven by a callable.
class FnBackend final : public orchestrator::LlmBackend {
public:
    using Fn = std::function<Result<std::string, orchestrator::BackendError>(const std::vector<orchestrator::Turn>&)>;
    explicit FnBackend(Fn fn) : fn_(std::move(fn)) {}
    Result<std::string, orchestrator::BackendError> generate(const std::vector<orchestrator::Turn>& c) override
    {
        return fn_(c);
    }

private:
    Fn fn_;
};

/// Returns the queued raw replies in order, then a plain no-call reply.
class QueueBackend final : public orchestrator::LlmBackend {
public:
    explicit QueueBackend(std::vector<std::string> replies) : replies_(replies.begin(), replies.end()) {}

    Result<std::string, orchestrator::BackendError> generate(const std::vector<orchestrator::Turn>&) override
    {
        std::lock_guard lk(m_);
        ++calls;
        if (replies_.empty())
            return protocol::render_structured({"", std::nullopt, "done"});
        auto r = replies_.front();
        replies_.pop_front();
        return r;
    }

    int calls = 0;

private:
    std::mutex m_;
    std::deque<std::string> replies_;
};

inline std::string call_reply(const std::string& api, std::map<std::string, std::string> params = {},
                              const std::string& reply = "Calling.")
{
    return protocol::render_structured({"thinking", protocol::FunctionCall{api, std::move(params)}, reply});
}

inline std::string plain_reply(const std::string& reply)
{
    return protocol::render_structured({"thinking", std::nullopt, reply});
}

inline std::shared_ptr<const functions::FixtureBundle> shared_bundle()
{
    static const auto b = std::make_shared<const functions::FixtureBundle>(functions::make_synthetic_bundle(24, 1));
    return b;
}

inline orchestrator::Orchestrator::ImageResolver bundle_resolver(std::shared_ptr<const functions::FixtureBundle> b)
{
    return [b](const std::string& ref) -> std::optional<std::string> { return b->image_bytes(ref); };
}

inline orchestrator::Orchestrator fixture_orchestrator(std::shared_ptr<orchestrator::LlmBackend> backend,
                                                       std::size_t function_count = 3,
                                                       orchestrator::OrchestratorConfig cfg = {})
{
    const auto b = shared_bundle();
    auto reg = std::make_shared<const functions::Registry>(
        functions::make_fixture_registry(b, functions::function_names(function_count)));
    return orchestrator::Orchestrator(std::move(backend), reg, bundle_resolver(b), cfg);
}

} // namespace vsa::testgen
