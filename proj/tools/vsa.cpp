// vsa: command-line driver for data generation, MOP experiments, evaluation, chat and the HTTP service.

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <pthread.h>

#include "CLI11.hpp"
#include "vsa/eval/report.hpp"
#include "vsa/eval/sweep.hpp"
#include "vsa/mop/checkpoint.hpp"
#include "vsa/mop/gradcheck.hpp"
#include "vsa/mop/synthetic.hpp"
#include "vsa/protocol/dataset.hpp"
#include "vsa/service/server.hpp"

namespace fs = std::filesystem;
using namespace vsa;

namespace {

enum Exit : int {
    ok = 0,
    check_failed = 1,
    usage = 2,
    bad_input = 3,
    bad_config = 4,
    startup_failed = 5,
    internal = 6,
};

struct CliFailure : std::runtime_error {
    int code;
    CliFailure(int c, const std::string& msg) : std::runtime_error(msg), code(c) {}
};

std::string read_input(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        throw CliFailure(bad_input, "cannot read " + p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_output(const fs::path& p, const std::string& data)
{
    if (p.has_parent_path())
        fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out || !(out << data))
        throw CliFailure(bad_input, "cannot write " + p.string());
}

std::shared_ptr<const functions::FixtureBundle> bundle_from(const std::string& dir)
{
    try {
        return service::load_or_make_bundle(dir.empty() ? std::nullopt : std::optional<fs::path>(dir));
    } catch (const functions::BundleError& e) {
        throw CliFailure(bad_input, e.what());
    }
}

/// Suite file: JSONL of dataset records (with gold replies) or of bare eval cases.
struct Suite {
    std::vector<eval::EvalCase> cases;
    std::vector<protocol::DatasetRecord> records; // empty for bare cases
};

Suite load_suite(const fs::path& p)
{
    const auto text = read_input(p);
    Suite s;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (protocol::trim(line).empty())
            continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (j.contains("gold")) {
                s.records.push_back(protocol::record_from_json(j));
                s.cases.push_back(s.records.back().expectations);
            } else {
                s.cases.push_back(j.get<eval::EvalCase>());
            }
        } catch (const std::exception& e) {
            throw CliFailure(bad_input, p.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (!s.records.empty() && s.records.size() != s.cases.size())
        throw CliFailure(bad_input, p.string() + ": mixes dataset records and bare eval cases");
    if (s.cases.empty())
        throw CliFailure(bad_input, p.string() + ": no cases");
    return s;
}

// ---------------------------------------------------------------------------

struct CommonRuntimeOpts {
    std::string config;
    std::string backend = "scripted";
    std::string script;
    std::string fixtures;
    std::string remote_url;
    std::string lexicon;
    std::vector<std::string> functions;

    void add_to(CLI::App* cmd)
    {
        cmd->add_option("--config", config, "Service config file (key = value); VSA_* variables override it")
            ->check(CLI::ExistingFile);
        cmd->add_option("--backend", backend, "Model backend")->check(CLI::IsMember({"scripted", "remote"}));
        cmd->add_option("--script", script, "Scripted-backend replies (JSON); default derives from the data")
            ->check(CLI::ExistingFile);
        cmd->add_option("--fixtures", fixtures, "Fixture bundle directory; default is the built-in synthetic bundle")
            ->check(CLI::ExistingDirectory);
        cmd->add_option("--remote-url", remote_url, "Chat-completion endpoint base URL for --backend remote");
        cmd->add_option("--lexicon", lexicon, "Rejection lexicon file")->check(CLI::ExistingFile);
        cmd->add_option("--functions", functions, "Registered functions, in order")->delimiter(',');
    }

    service::ServiceConfig config_value() const
    {
        service::ServiceConfig c = service::load_config(config.empty() ? std::nullopt : std::optional<fs::path>(config));
        c.backend = backend;
        if (!script.empty())
            c.script = script;
        if (!fixtures.empty())
            c.fixtures = fixtures;
        if (!remote_url.empty())
            c.remote.endpoint.base_url = remote_url;
        if (!lexicon.empty())
            c.lexicon = lexicon;
        if (!functions.empty()) {
            std::string joined;
            for (const auto& f : functions)
                joined += (joined.empty() ? "" : ",") + f;
            service::set_config_value(c, "functions", joined, "--functions", 0);
        }
        service::validate_config(c);
        return c;
    }
};

// ---------------------------------------------------------------------------
// chat

struct ChatOpts {
    CommonRuntimeOpts rt;
    std::string image;
    bool show_thinking = false;
};

int cmd_chat(const ChatOpts& o)
{
    auto cfg = o.rt.config_value();
    auto rt = service::make_runtime(cfg);
    orchestrator::Session session;
    session.id = "cli";
    std::optional<std::string> image = o.image.empty() ? std::nullopt : std::optional(o.image);
    if (image && !rt.orchestrator->image_resolves(session, *image))
        throw CliFailure(bad_input, "unknown image '" + *image + "'");

    std::cout << "Type a question; '/image REF' switches the image, '/quit' exits.\n";
    std::string line;
    while (std::cout << "you> " << std::flush, std::getline(std::cin, line)) {
        const auto text = std::string(protocol::trim(line));
        if (text.empty())
            continue;
        if (text == "/quit")
            break;
        if (text.rfind("/image", 0) == 0) {
            const auto ref = std::string(protocol::trim(std::string_view(text).substr(6)));
            if (!rt.orchestrator->image_resolves(session, ref)) {
                std::cout << "unknown image '" << ref << "'\n";
                continue;
            }
            image = ref;
            std::cout << "image set to " << ref << "\n";
            continue;
        }
        const auto out = rt.orchestrator->handle_query(session, text, image);
        const auto& t = out.trace;
        if (o.show_thinking && t.first_reply && !t.first_reply->thinking.empty())
            std::cout << "[thinking] " << t.first_reply->thinking << "\n";
        if (t.executed_call) {
            std::cout << "[call] " << t.executed_call->api_name << " " << protocol::call_to_json(*t.executed_call)["api_params"].dump()
                      << "\n";
            std::cout << "[result] " << functions::render_result_text(*t.function_result) << "\n";
            if (o.show_thinking && t.second_reply && !t.second_reply->thinking.empty())
                std::cout << "[thinking] " << t.second_reply->thinking << "\n";
        }
        if (t.error)
            std::cout << "[error] " << orchestrator::to_string(t.error->code) << ": " << t.error->message << "\n";
        std::cout << "assistant> " << out.final_reply << "\n";
        std::cout << "[trace " << t.trace_id << ", " << t.rounds << (t.rounds == 1 ? " round" : " rounds") << "]\n";
    }
    return ok;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
    CommonRuntimeOpts rt;
    std::string cases;
    std::string out;
    double require_sr = -1;
};

int cmd_eval(const EvalOpts& o)
{
    const auto suite = load_suite(o.cases);
    auto cfg = o.rt.config_value();
    auto rt = service::make_runtime(cfg);
    if (cfg.backend == "scripted" && !cfg.script && !suite.records.empty())
        rt.orchestrator = std::make_shared<orchestrator::Orchestrator>(
            std::make_shared<orchestrator::ScriptedBackend>(orchestrator::script_from_records(suite.records)),
            rt.registry,
            [b = rt.bundle](const std::string& ref) -> std::optional<std::string> {
                if (auto bytes = b->image_bytes(ref))
                    return bytes;
                return b->find(ref) ? std::optional<std::string>("") : std::nullopt;
            },
            rt.orchestrator->config());

    eval::EvalOptions opts;
    opts.lexicon = rt.lexicon;
    opts.config = {{"backend", cfg.backend}, {"cases_path", fs::path(o.cases).filename().string()}};
    eval::EvalReport rep;
    try {
        rep = eval::run_eval(*rt.orchestrator, suite.cases, opts);
    } catch (const std::invalid_argument& e) {
        throw CliFailure(bad_input, e.what());
    }
    const auto md = eval::report_to_markdown(rep);
    if (!o.out.empty()) {
        write_output(fs::path(o.out) / "report.json", eval::report_to_json(rep).dump(2) + "\n");
        write_output(fs::path(o.out) / "report.md", md);
    }
    std::cout << md;
    if (o.require_sr >= 0 && rep.metrics.sr.percent < o.require_sr) {
        std::cerr << "SR " << rep.metrics.sr.percent << " is below the required " << o.require_sr << "\n";
        return check_failed;
    }
    return ok;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenOpts {
    std::size_t positive = 100, negative = 10, no_call = 10, unseen = 0;
    std::uint64_t seed = 1;
    std::string out;
    std::string script_out;
    std::string fixtures;
};

int cmd_gen_data(const GenOpts& o)
{
    const auto bundle = bundle_from(o.fixtures);
    const std::vector<functions::FunctionSpec> specs = {functions::detect_spec(), functions::segment_spec(),
                                                        functions::scene_spec()};
    std::vector<protocol::DatasetRecord> records;
    try {
        records = protocol::generate_fc_dataset(protocol::default_templates(), *bundle, specs,
                                                {o.positive, o.negative, o.no_call, o.unseen}, o.seed);
    } catch (const protocol::GenerationError& e) {
        throw CliFailure(bad_input, e.what());
    }
    for (const auto& r : records)
        if (auto v = protocol::validate_record(r, specs); !v.empty())
            throw CliFailure(internal, "generated record " + r.id + " is invalid: " + v.front().message);
    write_output(o.out, protocol::to_jsonl(records));
    if (!o.script_out.empty())
        write_output(o.script_out, orchestrator::script_to_json(orchestrator::script_from_records(records)).dump(2) + "\n");
    std::cout << "wrote " << records.size() << " records to " << o.out << "\n";
    return ok;
}

// ---------------------------------------------------------------------------
// mop

struct MopTrainOpts {
    std::string task = "two-domain";
    std::size_t n = 8, k = 2, steps = 2000;
    std::uint64_t seed = 1;
    std::string out, loss_csv;
};

int cmd_mop_train(const MopTrainOpts& o)
{
    mop::TaskShape shape;
    const auto data = o.task == "linear" ? mop::make_linear_task(shape, o.seed) : mop::make_two_domain_task(shape, o.seed);
    if (o.k > o.n)
        throw CliFailure(usage, "--k must not exceed --n");
    auto cfg = mop::experiment_config(o.n, o.k);
    auto hyper = mop::experiment_hyper(o.seed);
    hyper.steps = o.steps;
    const auto res = mop::train_mop(data, cfg, hyper);
    std::printf("task=%s n=%zu k=%zu steps=%zu final_loss=%.9g\n", o.task.c_str(), cfg.n_projectors, cfg.top_k,
                hyper.steps, res.final_loss);
    if (!o.out.empty())
        write_output(o.out, mop::save_checkpoint(cfg, res.params));
    if (!o.loss_csv.empty())
        write_output(o.loss_csv, mop::loss_curve_csv(res.loss_curve));
    return ok;
}

struct GradcheckOpts {
    std::uint64_t seed = 7;
    std::size_t configs = 12;
    double tolerance = 1e-4;
};

int cmd_mop_gradcheck(const GradcheckOpts& o)
{
    const auto results = mop::gradcheck_suite(o.seed, o.configs);
    double worst = 0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        std::printf("config %2zu: N=%zu K=%zu c_in=%zu hidden=%zu c_out=%zu router_hidden=%zu  entries=%zu  "
                    "max_rel_error=%.3e\n",
                    i, r.config.n_projectors, r.config.top_k, r.config.c_in, r.config.hidden, r.config.c_out,
                    r.config.router_hidden, r.checked, r.max_rel_error);
        worst = std::max(worst, r.max_rel_error);
    }
    std::printf("max relative error %.3e (tolerance %.1e)\n", worst, o.tolerance);
    return worst <= o.tolerance ? ok : check_failed;
}

struct SweepOpts {
    std::vector<std::size_t> n_list = {1, 2, 4, 8, 16};
    std::size_t k = 2, steps = 2000;
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_mop_sweep(const SweepOpts& o)
{
    eval::ProjectorSweepOptions so;
    so.n_list = o.n_list;
    so.top_k = o.k;
    so.steps = o.steps;
    so.seed = o.seed;
    const auto rows = eval::sweep_projectors(so);
    const auto csv = eval::projector_sweep_csv(rows);
    if (!o.out.empty())
        write_output(o.out, csv);
    std::cout << csv;
    return ok;
}

// ---------------------------------------------------------------------------
// serve

struct ServeOpts {
    std::string config;
    std::string host;
    int port = -1;
    std::string fixtures;
    std::string trace_dir;
};

int cmd_serve(const ServeOpts& o)
{
    auto cfg = service::load_config(o.config.empty() ? std::nullopt : std::optional<fs::path>(o.config));
    if (!o.host.empty())
        cfg.host = o.host;
    if (o.port >= 0)
        cfg.port = o.port;
    if (!o.fixtures.empty())
        cfg.fixtures = o.fixtures;
    if (!o.trace_dir.empty())
        cfg.trace_dir = o.trace_dir;
    service::validate_config(cfg);

    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    service::Service svc(cfg);
    const int port = svc.bind();
    std::thread([&svc, signals] {
        int sig = 0;
        sigwait(&signals, &sig);
        std::cerr << "shutting down\n";
        svc.stop();
    }).detach();
    std::cerr << "listening on http://" << cfg.host << ":" << port << "\n";
    svc.run();
    return ok;
}

// ---------------------------------------------------------------------------
// make-fixtures

struct FixtureOpts {
    std::string out;
    std::size_t count = 24;
    std::uint64_t seed = 1;
};

int cmd_make_fixtures(const FixtureOpts& o)
{
    const auto b = functions::make_synthetic_bundle(o.count, o.seed);
    try {
        functions::write_bundle(o.out, b);
    } catch (const functions::BundleError& e) {
        throw CliFailure(bad_input, e.what());
    }
    std::cout << "wrote " << b.scenes.size() << " scenes to " << o.out << "\n";
    return ok;
}

// ---------------------------------------------------------------------------
// reference page

void describe_app(const CLI::App* app, const std::string& path, std::ostringstream& os)
{
    const auto subs = app->get_subcommands([](const CLI::App*) { return true; });
    if (!path.empty()) {
        os << "## `" << path << "`\n\n" << app->get_description() << "\n\n";
        std::vector<const CLI::Option*> opts;
        for (const auto* opt : app->get_options())
            if (opt->get_name() != "--help" && !opt->get_lnames().empty())
                opts.push_back(opt);
        if (!opts.empty()) {
            os << "| Option | Default | Description |\n|---|---|---|\n";
            for (const auto* opt : opts) {
                std::string def = opt->get_default_str();
                if (opt->get_required())
                    def = "(required)";
                else if (def.empty())
                    def = "-";
                os << "| `--" << opt->get_lnames().front() << "` | " << def << " | " << opt->get_description()
                   << " |\n";
            }
            os << "\n";
        }
    }
    for (const auto* sub : subs)
        describe_app(sub, path.empty() ? sub->get_name() : path + " " + sub->get_name(), os);
}

std::string reference_page(const CLI::App& app)
{
    std::ostringstream os;
    os << "# vsa command reference\n\n"
       << "Generated by `vsa reference`; do not edit by hand.\n\n"
       << "## Exit codes\n\n"
       << "| Code | Meaning |\n|---|---|\n"
       << "| 0 | success |\n"
       << "| 1 | a requested check failed (gradient tolerance, required SR) |\n"
       << "| 2 | usage error: unknown flag, missing or invalid argument |\n"
       << "| 3 | unreadable or invalid input (paths, datasets, fixture bundles) |\n"
       << "| 4 | invalid service configuration |\n"
       << "| 5 | service failed to start (for example, port in use) |\n"
       << "| 6 | internal error |\n\n";
    describe_app(&app, "", os);
    return os.str();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"VS-Assistant: function-calling assistant toolkit"};
    app.name("vsa");
    app.require_subcommand(1);

    ChatOpts chat;
    auto* c_chat = app.add_subcommand("chat", "Interactive terminal chat against the configured backend");
    chat.rt.add_to(c_chat);
    c_chat->add_option("--image", chat.image, "Image reference attached to each query");
    c_chat->add_flag("--show-thinking", chat.show_thinking, "Print the Thinking block of each reply");

    EvalOpts ev;
    auto* c_eval = app.add_subcommand("eval", "Run an evaluation suite and write JSON and Markdown reports");
    ev.rt.add_to(c_eval);
    c_eval->add_option("--cases", ev.cases, "Suite JSONL (dataset records or eval cases)")
        ->required()
        ->check(CLI::ExistingFile);
    c_eval->add_option("--out", ev.out, "Directory for report.json and report.md");
    c_eval->add_option("--require-sr", ev.require_sr, "Exit 1 if SR falls below this percentage");

    GenOpts gen;
    auto* c_gen = app.add_subcommand("gen-data", "Generate a function-calling dataset as JSONL");
    c_gen->add_option("--positive", gen.positive, "Positive (function-calling) records")->capture_default_str();
    c_gen->add_option("--negative", gen.negative, "Negative (absent object) records")->capture_default_str();
    c_gen->add_option("--no-call", gen.no_call, "Records answered without a function")->capture_default_str();
    c_gen->add_option("--unseen", gen.unseen, "Records from held-out templates")->capture_default_str();
    c_gen->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
    c_gen->add_option("--out", gen.out, "Output JSONL path")->required();
    c_gen->add_option("--script-out", gen.script_out, "Also write a scripted-backend file replaying the gold replies");
    c_gen->add_option("--fixtures", gen.fixtures, "Fixture bundle directory")->check(CLI::ExistingDirectory);

    auto* c_mop = app.add_subcommand("mop", "Mixture-of-projectors experiments");
    c_mop->require_subcommand(1);
    MopTrainOpts mt;
    auto* c_train = c_mop->add_subcommand("train", "Train a MOP layer on a synthetic task");
    c_train->add_option("--task", mt.task, "Synthetic task")
        ->check(CLI::IsMember({"two-domain", "linear"}))
        ->capture_default_str();
    c_train->add_option("--n", mt.n, "Number of projectors")->check(CLI::Range(1, 64))->capture_default_str();
    c_train->add_option("--k", mt.k, "Projectors selected per token")->check(CLI::Range(1, 64))->capture_default_str();
    c_train->add_option("--steps", mt.steps, "Optimizer steps")->capture_default_str();
    c_train->add_option("--seed", mt.seed, "Seed")->capture_default_str();
    c_train->add_option("--out", mt.out, "Checkpoint output (JSON)");
    c_train->add_option("--loss-csv", mt.loss_csv, "Loss curve output (CSV)");

    GradcheckOpts gc;
    auto* c_gc = c_mop->add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    c_gc->add_option("--seed", gc.seed, "Seed")->capture_default_str();
    c_gc->add_option("--configs", gc.configs, "Random configurations to check")->check(CLI::Range(1, 1000))->capture_default_str();
    c_gc->add_option("--tolerance", gc.tolerance, "Maximum allowed relative error")->capture_default_str();

    SweepOpts sw;
    auto* c_sw = c_mop->add_subcommand("sweep", "Two-domain loss versus projector count, as CSV");
    c_sw->add_option("--n-list", sw.n_list, "Projector counts")->delimiter(',')->capture_default_str();
    c_sw->add_option("--k", sw.k, "Top-K, capped at each N")->check(CLI::Range(1, 64))->capture_default_str();
    c_sw->add_option("--steps", sw.steps, "Optimizer steps per run")->capture_default_str();
    c_sw->add_option("--seed", sw.seed, "Seed")->capture_default_str();
    c_sw->add_option("--out", sw.out, "CSV output path");

    ServeOpts sv;
    auto* c_serve = app.add_subcommand("serve", "Run the HTTP service");
    c_serve->add_option("--config", sv.config, "Config file (key = value)")->check(CLI::ExistingFile);
    c_serve->add_option("--host", sv.host, "Listen address (overrides config)");
    c_serve->add_option("--port", sv.port, "Listen port, 0 picks a free one (overrides config)")->check(CLI::Range(0, 65535));
    c_serve->add_option("--fixtures", sv.fixtures, "Fixture bundle directory (overrides config)")
        ->check(CLI::ExistingDirectory);
    c_serve->add_option("--trace-dir", sv.trace_dir, "Trace directory (overrides config)");

    FixtureOpts fx;
    auto* c_fx = app.add_subcommand("make-fixtures", "Write a synthetic fixture bundle");
    c_fx->add_option("--out", fx.out, "Bundle directory")->required();
    c_fx->add_option("--count", fx.count, "Number of scenes (the first is the probe scene)")->capture_default_str();
    c_fx->add_option("--seed", fx.seed, "Seed")->capture_default_str();

    std::string ref_out;
    auto* c_ref = app.add_subcommand("reference", "Print the command reference page (Markdown)");
    c_ref->add_option("--out", ref_out, "Write to this file instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : usage;
    }

    try {
        if (*c_chat)
            return cmd_chat(chat);
        if (*c_eval)
            return cmd_eval(ev);
        if (*c_gen)
            return cmd_gen_data(gen);
        if (*c_train)
            return cmd_mop_train(mt);
        if (*c_gc)
            return cmd_mop_gradcheck(gc);
        if (*c_sw)
            return cmd_mop_sweep(sw);
        if (*c_serve)
            return cmd_serve(sv);
        if (*c_fx)
            return cmd_make_fixtures(fx);
        if (*c_ref) {
            const auto page = reference_page(app);
            if (ref_out.empty())
                std::cout << page;
            else
                write_output(ref_out, page);
            return ok;
        }
    } catch (const CliFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code;
    } catch (const service::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return bad_config;
    } catch (const service::StartupError& e) {
        std::cerr << "startup error: " << e.what() << "\n";
        return startup_failed;
    } catch (const functions::BundleError& e) {
        std::cerr << "fixture error: " << e.what() << "\n";
        return bad_input;
    } catch (const mop::ConfigError& e) {
        std::cerr << "invalid MOP configuration: " << e.what() << "\n";
        return usage;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return internal;
    }
    return usage;
}
