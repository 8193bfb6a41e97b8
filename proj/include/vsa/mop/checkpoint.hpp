#pragma once

// MOP checkpoint container: one JSON document (format described in docs/checkpoint-format.md).

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "vsa/mop/mop.hpp"

namespace vsa::mop {

inline constexpr int checkpoint_format_version = 1;
inline constexpr const char* checkpoint_format_name = "vsa-mop-checkpoint";

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline nlohmann::json matrix_to_json(const Matrix& m)
{
    return {{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}};
}

inline Matrix matrix_from_json(const nlohmann::json& j, const char* what)
{
    try {
        return Matrix(j.at("rows").get<std::size_t>(), j.at("cols").get<std::size_t>(),
                      j.at("data").get<std::vector<double>>());
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("bad matrix '") + what + "': " + e.what());
    }
}

} // namespace detail

inline nlohmann::json config_to_json(const MopConfig& c)
{
    return {{"n_projectors", c.n_projectors}, {"top_k", c.top_k},
            {"noise_sigma", c.noise_sigma},   {"c_in", c.c_in},
            {"hidden", c.hidden},             {"c_out", c.c_out},
            {"router_hidden", c.router_hidden},
            {"mode", c.mode == Mode::training ? "training" : "inference"}};
}

inline MopConfig config_from_json(const nlohmann::json& j)
{
    MopConfig c;
    c.n_projectors = j.at("n_projectors").get<std::size_t>();
    c.top_k = j.at("top_k").get<std::size_t>();
    c.noise_sigma = j.at("noise_sigma").get<double>();
    c.c_in = j.at("c_in").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.c_out = j.at("c_out").get<std::size_t>();
    c.router_hidden = j.at("router_hidden").get<std::size_t>();
    const auto mode = j.value("mode", std::string("inference"));
    if (mode != "training" && mode != "inference")
        throw CheckpointError("unknown mode '" + mode + "'");
    c.mode = mode == "training" ? Mode::training : Mode::inference;
    return c;
}

inline std::string save_checkpoint(const MopConfig& cfg, const MopParams& params)
{
    validate_params(params, cfg);
    nlohmann::json j;
    j["format"] = checkpoint_format_name;
    j["format_version"] = checkpoint_format_version;
    j["config"] = config_to_json(cfg);
    j["router"] = {{"wr1", detail::matrix_to_json(params.router.wr1)},
                   {"br1", params.router.br1},
                   {"wr2", detail::matrix_to_json(params.router.wr2)},
                   {"br2", params.router.br2}};
    auto& projs = j["projectors"] = nlohmann::json::array();
    for (const auto& p : params.projectors)
        projs.push_back({{"w1", detail::matrix_to_json(p.w1)},
                         {"b1", p.b1},
                         {"w2", detail::matrix_to_json(p.w2)},
                         {"b2", p.b2}});
    return j.dump(1) + "\n";
}

struct Checkpoint {
    MopConfig config;
    MopParams params;
};

inline Checkpoint load_checkpoint(const std::string& text)
{
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint is not valid JSON: ") + e.what());
    }
    if (j.value("format", std::string()) != checkpoint_format_name)
        throw CheckpointError("not a MOP checkpoint (missing format tag)");
    const int version = j.value("format_version", -1);
    if (version != checkpoint_format_version)
        throw CheckpointError("unsupported checkpoint format_version " + std::to_string(version));
    try {
        Checkpoint ck;
        ck.config = config_from_json(j.at("config"));
        ck.config.validate();
        const auto& r = j.at("router");
        ck.params.router = {detail::matrix_from_json(r.at("wr1"), "wr1"), r.at("br1").get<Vector>(),
                            detail::matrix_from_json(r.at("wr2"), "wr2"), r.at("br2").get<Vector>()};
        for (const auto& p : j.at("projectors"))
            ck.params.projectors.push_back({detail::matrix_from_json(p.at("w1"), "w1"), p.at("b1").get<Vector>(),
                                            detail::matrix_from_json(p.at("w2"), "w2"), p.at("b2").get<Vector>()});
        validate_params(ck.params, ck.config);
        return ck;
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
    }
}

/// Loss curve as CSV with header `step,loss`.
inline std::string loss_curve_csv(std::span<const double> curve)
{
    std::ostringstream os;
    os << "step,loss\n";
    char buf[64];
    for (std::size_t i = 0; i < curve.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", i, curve[i]);
        os << buf;
    }
    return os.str();
}

} // namespace vsa::mop
