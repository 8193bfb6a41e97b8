#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vsa/mop/mop.hpp"

namespace vsa::mop {

struct GradcheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;   // scalar entries compared
    MopConfig config;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true gradient is zero
/// (unselected projectors, dead GeLU tails) from dividing round-off by round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-6)
{
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central finite differences of L = <R, mop_forward(I)> against mop_backward, with the top-K
/// mask of the unperturbed forward held fixed and sigma forced to zero.
inline GradcheckResult gradcheck(MopConfig cfg, std::size_t tokens, std::uint64_t seed, double h = 1e-5)
{
    cfg.noise_sigma = 0.0;
    cfg.validate();
    Rng rng(derive_seed(seed, 0x6C));
    MopParams params = init_params(cfg, derive_seed(seed, 1));
    // Non-zero biases so every term of the graph is exercised.
    for_each_tensor(params, [&](std::span<double> s) {
        for (double& v : s)
            if (v == 0.0)
                v = rng.uniform(-0.5, 0.5);
    });
    Matrix input(tokens, cfg.c_in);
    for (double& v : input.data)
        v = rng.uniform(-1.0, 1.0);
    Matrix probe(tokens, cfg.c_out);
    for (double& v : probe.data)
        v = rng.uniform(-1.0, 1.0);

    const RoutingDecision mask = route(input, params.router, cfg, 0);
    const auto objective = [&](const MopParams& p, const Matrix& in) {
        const Matrix out = mop_forward(in, p, cfg, 0, &mask).output;
        double acc = 0.0;
        for (std::size_t i = 0; i < out.data.size(); ++i)
            acc += out.data[i] * probe.data[i];
        return acc;
    };

    const MopGradients g = mop_backward(input, params, cfg, 0, probe, &mask);
    GradcheckResult res{0.0, 0, cfg};

    std::vector<std::span<double>> p_tensors;
    std::vector<std::span<const double>> g_tensors;
    for_each_tensor(params, [&](std::span<double> s) { p_tensors.push_back(s); });
    for_each_tensor(g.params, [&](std::span<const double> s) { g_tensors.push_back(s); });
    for (std::size_t a = 0; a < p_tensors.size(); ++a)
        for (std::size_t i = 0; i < p_tensors[a].size(); ++i) {
            double& w = p_tensors[a][i];
            const double saved = w;
            w = saved + h;
            const double up = objective(params, input);
            w = saved - h;
            const double down = objective(params, input);
            w = saved;
            res.max_rel_error =
                std::max(res.max_rel_error, relative_error(g_tensors[a][i], (up - down) / (2.0 * h)));
            ++res.checked;
        }
    for (std::size_t i = 0; i < input.data.size(); ++i) {
        Matrix shifted = input;
        shifted.data[i] = input.data[i] + h;
        const double up = objective(params, shifted);
        shifted.data[i] = input.data[i] - h;
        const double down = objective(params, shifted);
        res.max_rel_error = std::max(res.max_rel_error, relative_error(g.input.data[i], (up - down) / (2.0 * h)));
        ++res.checked;
    }
    return res;
}

/// Random small configuration: N in {1,2,4,8}, 1 <= K <= N, dims in [2, 16].
inline MopConfig random_small_config(Rng& rng)
{
    static constexpr std::size_t ns[] = {1, 2, 4, 8};
    MopConfig cfg;
    cfg.n_projectors = ns[rng.below(4)];
    cfg.top_k = 1 + rng.below(cfg.n_projectors);
    cfg.c_in = 2 + rng.below(15);
    cfg.hidden = 2 + rng.below(15);
    cfg.c_out = 2 + rng.below(15);
    cfg.router_hidden = 2 + rng.below(15);
    cfg.noise_sigma = 0.0;
    cfg.mode = Mode::inference;
    return cfg;
}

/// `count` random configurations, each with 1-6 tokens, checked independently.
inline std::vector<GradcheckResult> gradcheck_suite(std::uint64_t seed, std::size_t count)
{
    Rng rng(derive_seed(seed, 0x9C));
    std::vector<GradcheckResult> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const MopConfig cfg = random_small_config(rng);
        const std::size_t tokens = 1 + rng.below(6);
        out.push_back(gradcheck(cfg, tokens, derive_seed(seed, 1000 + i)));
    }
    return out;
}

} // namespace vsa::mop
