#pragma once

#include <chrono>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include "vsa/eval/metrics.hpp"
#include "vsa/functions/fixtures.hpp"
#include "vsa/orchestrator/backend.hpp"
#include "vsa/orchestrator/dispatch.hpp"
#include "vsa/protocol/dataset.hpp"
#include "vsa/service/config.hpp"

namespace vsa::service {

inline constexpr const char* version = "0.1.0";

/// Records behind the default scripted backend: a generated suite over the bundle plus the
/// probe walkthrough.
inline std::vector<protocol::DatasetRecord> default_script_records(const functions::FixtureBundle& bundle,
                                                                   const std::vector<functions::FunctionSpec>& specs)
{
    std::vector<functions::FunctionSpec> usable;
    for (const auto& s : specs)
        if (s.api_name == "detect" || s.api_name == "segment" || s.api_name == "analyze_scene")
            usable.push_back(s);
    std::vector<protocol::ConversationTemplate> templates;
    for (const auto& t : protocol::default_templates()) {
        const bool ok = t.api_name.empty() || std::any_of(usable.begin(), usable.end(), [&](const auto& s) {
                            return s.api_name == t.api_name;
                        });
        if (ok)
            templates.push_back(t);
    }
    auto records = protocol::generate_fc_dataset(templates, bundle, usable, {100, 50, 50, 50}, 1);
    if (bundle.find("probe_0001") && std::any_of(usable.begin(), usable.end(), [](const auto& s) {
            return s.api_name == "detect";
        }))
        records.push_back(orchestrator::probe_walkthrough_record(*bundle.find("probe_0001")));
    return records;
}

inline std::string read_text_file(const std::filesystem::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot read " + p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// Everything a dispatch needs, built from a validated config.
struct Runtime {
    std::shared_ptr<const functions::FixtureBundle> bundle;
    std::shared_ptr<const functions::Registry> registry;
    std::shared_ptr<orchestrator::LlmBackend> backend;
    std::shared_ptr<orchestrator::Orchestrator> orchestrator;
    eval::RejectionLexicon lexicon = eval::default_lexicon();
};

inline std::shared_ptr<const functions::FixtureBundle> load_or_make_bundle(const std::optional<std::filesystem::path>& dir)
{
    if (dir)
        return std::make_shared<const functions::FixtureBundle>(functions::load_bundle(*dir));
    return std::make_shared<const functions::FixtureBundle>(functions::make_synthetic_bundle(24, 1));
}

inline std::shared_ptr<orchestrator::LlmBackend> make_backend(const ServiceConfig& cfg,
                                                              const functions::FixtureBundle& bundle,
                                                              const functions::Registry& registry)
{
    if (cfg.backend == "remote") {
        auto b = std::make_shared<const functions::FixtureBundle>(bundle);
        return std::make_shared<orchestrator::RemoteBackend>(
            cfg.remote, [b](const std::string& ref) { return b->image_bytes(ref); });
    }
    if (cfg.script)
        return std::make_shared<orchestrator::ScriptedBackend>(
            orchestrator::script_from_json(nlohmann::json::parse(read_text_file(*cfg.script))));
    return std::make_shared<orchestrator::ScriptedBackend>(
        orchestrator::script_from_records(default_script_records(bundle, registry.list())));
}

inline Runtime make_runtime(const ServiceConfig& cfg)
{
    Runtime rt;
    rt.bundle = load_or_make_bundle(cfg.fixtures);
    rt.registry = std::make_shared<const functions::Registry>(functions::make_fixture_registry(rt.bundle, cfg.functions));
    rt.backend = make_backend(cfg, *rt.bundle, *rt.registry);
    if (cfg.lexicon)
        rt.lexicon = eval::load_lexicon(*cfg.lexicon);
    orchestrator::OrchestratorConfig oc;
    oc.backend_timeout = std::chrono::milliseconds(cfg.backend_timeout_ms);
    oc.function_timeout = std::chrono::milliseconds(cfg.function_timeout_ms);
    auto bundle = rt.bundle;
    rt.orchestrator = std::make_shared<orchestrator::Orchestrator>(
        rt.backend, rt.registry, [bundle](const std::string& ref) -> std::optional<std::string> {
            if (auto bytes = bundle->image_bytes(ref))
                return bytes;
            if (bundle->find(ref))
                return std::string();
            return std::nullopt;
        },
        oc);
    return rt;
}

} // namespace vsa::service
