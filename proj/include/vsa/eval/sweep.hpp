#pragma once

#include <chrono>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vsa/eval/report.hpp"
#include "vsa/mop/synthetic.hpp"
#include "vsa/mop/train.hpp"
#include "vsa/orchestrator/backend.hpp"
#include "vsa/orchestrator/dispatch.hpp"
#include "vsa/rng.hpp"

namespace vsa::eval {

struct FunctionSweepRow {
    std::size_t function_count = 0;
    double sr = 0;
    std::optional<double> keyhit;
};

using OrchestratorFactory = std::function<orchestrator::Orchestrator(std::size_t function_count)>;

inline std::vector<FunctionSweepRow> sweep_functions(const OrchestratorFactory& factory,
                                                     const std::vector<EvalCase>& cases,
                                                     const std::vector<std::size_t>& counts = {2, 3, 4, 5, 6},
                                                     const EvalOptions& opts = {})
{
    if (counts.empty())
        throw std::invalid_argument("sweep_functions: no registry sizes");
    std::vector<FunctionSweepRow> table;
    for (auto n : counts) {
        const auto orch = factory(n);
        const auto rep = run_eval(orch, cases, opts);
        table.push_back({n, rep.metrics.sr.percent, rep.metrics.keyhit});
    }
    return table;
}

inline std::string function_sweep_csv(const std::vector<FunctionSweepRow>& rows)
{
    std::string out = "function_count,sr,keyhit\n";
    for (const auto& r : rows) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%zu,%.2f,%s\n", r.function_count, r.sr, r.keyhit ? fmt_metric(r.keyhit).c_str() : "");
        out += buf;
    }
    return out;
}

/// Test double for registry scaling: wraps a backend and, for a query-dependent subset whose
/// size grows with the registry, renames the first-round call to another registered function.
/// The subset for n functions contains the subset for any smaller n, so SR cannot increase.
class ConfusionBackend final : public orchestrator::LlmBackend {
public:
    ConfusionBackend(std::shared_ptr<orchestrator::LlmBackend> inner, std::vector<functions::FunctionSpec> specs,
                     double rate_per_extra_function = 0.04, std::size_t base_count = 2)
        : inner_(std::move(inner)), specs_(std::move(specs)), rate_(rate_per_extra_function), base_(base_count)
    {
    }

    double confusion_rate() const
    {
        const double extra = specs_.size() > base_ ? static_cast<double>(specs_.size() - base_) : 0.0;
        return std::min(1.0, extra * rate_);
    }

    /// Stable per-query draw in [0,1).
    static double draw(const std::string& query)
    {
        std::uint64_t h = 0x9e3779b97f4a7c15ull;
        for (unsigned char c : query)
            h = splitmix64(h ^ c);
        return static_cast<double>(h >> 11) * 0x1.0p-53;
    }

    Result<std::string, orchestrator::BackendError> generate(const std::vector<orchestrator::Turn>& conv) override
    {
        auto out = inner_->generate(conv);
        if (!out || conv.empty() || conv.back().role != orchestrator::Role::user)
            return out;
        if (draw(conv.back().content) >= confusion_rate())
            return out;
        auto parsed = protocol::parse_structured(*out);
        if (!parsed || !parsed->calling || specs_.size() < 2)
            return out;
        auto reply = *parsed;
        std::size_t idx = 0;
        while (idx < specs_.size() && specs_[idx].api_name != reply.calling->api_name)
            ++idx;
        const auto& wrong = specs_[(idx + 1) % specs_.size()];
        protocol::FunctionCall call{wrong.api_name, {}};
        for (const auto& [name, desc] : wrong.required_params) {
            auto it = parsed->calling->api_params.find(name);
            call.api_params[name] = it != parsed->calling->api_params.end() ? it->second : "unknown";
        }
        reply.calling = call;
        return protocol::render_structured(reply);
    }

private:
    std::shared_ptr<orchestrator::LlmBackend> inner_;
    std::vector<functions::FunctionSpec> specs_;
    double rate_;
    std::size_t base_;
};

// ---------------------------------------------------------------------------
// Projector-count sweep

struct ProjectorSweepRow {
    std::size_t n_projectors = 0;
    std::size_t top_k = 0;
    double final_loss = 0;
    double seconds = 0;
};

struct ProjectorSweepOptions {
    std::vector<std::size_t> n_list = {1, 2, 4, 8, 16};
    std::size_t top_k = 2;
    std::uint64_t seed = 1;
    mop::TaskShape shape{};
    double flag_scale = 3.0;
    std::size_t steps = 2000;
};

inline std::vector<ProjectorSweepRow> sweep_projectors(const ProjectorSweepOptions& o = {})
{
    if (o.n_list.empty())
        throw std::invalid_argument("sweep_projectors: empty projector list");
    const auto task = mop::make_two_domain_task(o.shape, o.seed, o.flag_scale);
    std::vector<ProjectorSweepRow> rows;
    for (auto n : o.n_list) {
        auto cfg = mop::experiment_config(n, o.top_k);
        cfg.c_in = o.shape.c_in;
        cfg.c_out = o.shape.c_out;
        auto hyper = mop::experiment_hyper(o.seed);
        hyper.steps = o.steps;
        const auto t0 = std::chrono::steady_clock::now();
        const auto res = mop::train_mop(task, cfg, hyper);
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        rows.push_back({n, cfg.top_k, res.final_loss, secs});
    }
    return rows;
}

inline std::string projector_sweep_csv(const std::vector<ProjectorSweepRow>& rows)
{
    std::string out = "n_projectors,top_k,final_loss\n";
    for (const auto& r : rows) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g\n", r.n_projectors, r.top_k, r.final_loss);
        out += buf;
    }
    return out;
}

} // namespace vsa::eval
