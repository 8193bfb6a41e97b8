#pragma once

// Mixture-of-projectors alignment layer: N parallel two-layer GeLU projectors
// combined per token by a noisy top-K router.

#include <algorithm>
#include <concepts>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "vsa/mop/gelu.hpp"
#include "vsa/mop/matrix.hpp"
#include "vsa/rng.hpp"

namespace vsa::mop {

struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

enum class Mode { training, inference };

struct MopConfig {
    std::size_t n_projectors = 8;
    std::size_t top_k = 2;
    double noise_sigma = 1.0;
    std::size_t c_in = 16;
    std::size_t hidden = 16;
    std::size_t c_out = 16;
    std::size_t router_hidden = 16;
    Mode mode = Mode::inference;

    void validate() const
    {
        if (n_projectors == 0)
            throw ConfigError("n_projectors must be >= 1");
        if (top_k < 1 || top_k > n_projectors)
            throw ConfigError("top_k must satisfy 1 <= K <= N (K=" + std::to_string(top_k) +
                              ", N=" + std::to_string(n_projectors) + ")");
        if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma))
            throw ConfigError("noise_sigma must be a finite non-negative value");
        if (c_in == 0 || hidden == 0 || c_out == 0 || router_hidden == 0)
            throw ConfigError("all layer dimensions must be >= 1");
    }

    /// Noise standard deviation actually applied: zero outside training.
    double effective_sigma() const { return mode == Mode::training ? noise_sigma : 0.0; }

    bool operator==(const MopConfig&) const = default;
};

struct ProjectorParams {
    Matrix w1; // c_in x hidden
    Vector b1; // hidden
    Matrix w2; // hidden x c_out
    Vector b2; // c_out

    bool operator==(const ProjectorParams&) const = default;
};

struct RouterParams {
    Matrix wr1; // c_in x router_hidden
    Vector br1; // router_hidden
    Matrix wr2; // router_hidden x n_projectors
    Vector br2; // n_projectors

    bool operator==(const RouterParams&) const = default;
};

struct MopParams {
    std::vector<ProjectorParams> projectors;
    RouterParams router;

    bool operator==(const MopParams&) const = default;
};

inline ProjectorParams zero_projector(std::size_t c_in, std::size_t hidden, std::size_t c_out)
{
    return {Matrix(c_in, hidden), Vector(hidden, 0.0), Matrix(hidden, c_out), Vector(c_out, 0.0)};
}

inline RouterParams zero_router(const MopConfig& cfg)
{
    return {Matrix(cfg.c_in, cfg.router_hidden), Vector(cfg.router_hidden, 0.0),
            Matrix(cfg.router_hidden, cfg.n_projectors), Vector(cfg.n_projectors, 0.0)};
}

inline MopParams zero_params(const MopConfig& cfg)
{
    MopParams p;
    p.projectors.assign(cfg.n_projectors, zero_projector(cfg.c_in, cfg.hidden, cfg.c_out));
    p.router = zero_router(cfg);
    return p;
}

/// Visits every parameter array in a fixed order (projectors in index order, then router).
template <class Params, class Fn>
    requires std::same_as<std::remove_const_t<Params>, MopParams>
void for_each_tensor(Params& p, Fn&& fn)
{
    for (auto& proj : p.projectors) {
        fn(std::span(proj.w1.data));
        fn(std::span(proj.b1));
        fn(std::span(proj.w2.data));
        fn(std::span(proj.b2));
    }
    fn(std::span(p.router.wr1.data));
    fn(std::span(p.router.br1));
    fn(std::span(p.router.wr2.data));
    fn(std::span(p.router.br2));
}

inline std::size_t parameter_count(const MopParams& p)
{
    std::size_t n = 0;
    for_each_tensor(p, [&](auto s) { n += s.size(); });
    return n;
}

inline void validate_params(const MopParams& p, const MopConfig& cfg)
{
    require_size(p.projectors.size(), cfg.n_projectors, "projector count");
    for (const auto& proj : p.projectors) {
        require_shape(proj.w1, cfg.c_in, cfg.hidden, "projector W1");
        require_size(proj.b1.size(), cfg.hidden, "projector b1");
        require_shape(proj.w2, cfg.hidden, cfg.c_out, "projector W2");
        require_size(proj.b2.size(), cfg.c_out, "projector b2");
    }
    require_shape(p.router.wr1, cfg.c_in, cfg.router_hidden, "router Wr1");
    require_size(p.router.br1.size(), cfg.router_hidden, "router br1");
    require_shape(p.router.wr2, cfg.router_hidden, cfg.n_projectors, "router Wr2");
    require_size(p.router.br2.size(), cfg.n_projectors, "router br2");
}

namespace detail {

inline void fill_uniform(Matrix& m, Rng& rng)
{
    const double a = std::sqrt(6.0 / static_cast<double>(m.rows + m.cols));
    for (double& v : m.data)
        v = rng.uniform(-a, a);
}

} // namespace detail

/// Xavier-uniform weights (a = sqrt(6 / (fan_in + fan_out))), zero biases.
inline MopParams init_params(const MopConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    MopParams p = zero_params(cfg);
    Rng rng(derive_seed(seed, 0x1417));
    for (auto& proj : p.projectors) {
        detail::fill_uniform(proj.w1, rng);
        detail::fill_uniform(proj.w2, rng);
    }
    detail::fill_uniform(p.router.wr1, rng);
    detail::fill_uniform(p.router.wr2, rng);
    return p;
}

// ---------------------------------------------------------------------------
// Projectors

/// Intermediate values of one two-layer projector evaluated on one row.
struct ProjectorTrace {
    Vector pre;    // x W1 + b1
    Vector output; // gelu(pre) W2 + b2
};

inline void projector_row(std::span<const double> x, const ProjectorParams& p, ProjectorTrace& tr)
{
    tr.pre.resize(p.w1.cols);
    tr.output.resize(p.w2.cols);
    affine_row(x, p.w1, p.b1, tr.pre);
    Vector act(tr.pre.size());
    for (std::size_t i = 0; i < act.size(); ++i)
        act[i] = gelu(tr.pre[i]);
    affine_row(act, p.w2, p.b2, tr.output);
}

inline void check_projector(const ProjectorParams& p)
{
    require_size(p.b1.size(), p.w1.cols, "projector b1");
    if (p.w2.rows != p.w1.cols)
        throw ShapeError("projector W2 rows " + std::to_string(p.w2.rows) + " != hidden " +
                         std::to_string(p.w1.cols));
    require_size(p.b2.size(), p.w2.cols, "projector b2");
}

/// MLP2(gelu(MLP1(I))) applied to every row of I independently.
inline Matrix projector_forward(const Matrix& input, const ProjectorParams& p)
{
    check_projector(p);
    require_cols(input, p.w1.rows, "projector input (C_I)");
    Matrix out(input.rows, p.w2.cols);
    ProjectorTrace tr;
    for (std::size_t t = 0; t < input.rows; ++t) {
        projector_row(input.row(t), p, tr);
        std::copy(tr.output.begin(), tr.output.end(), out.row(t).begin());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Routing

struct RoutingDecision {
    Matrix weights;                                   // L x N, exactly N-K zeros per row
    std::vector<std::vector<std::size_t>> selected;   // per row, K indices by descending logit
    Matrix logits;                                    // L x N router outputs after noise

    bool operator==(const RoutingDecision&) const = default;
};

/// Indices of the k largest values; ties go to the lower index. Result ordered by rank.
inline std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k)
{
    std::vector<std::size_t> idx(values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) {
                          return values[a] > values[b] || (values[a] == values[b] && a < b);
                      });
    idx.resize(k);
    return idx;
}

/// Softmax restricted to `selected`; every other entry of `out` is set to exactly zero.
inline void masked_softmax(std::span<const double> logits, std::span<const std::size_t> selected,
                           std::span<double> out)
{
    std::fill(out.begin(), out.end(), 0.0);
    double mx = -INFINITY;
    for (auto j : selected)
        mx = std::max(mx, logits[j]);
    double z = 0.0;
    for (auto j : selected) {
        out[j] = std::exp(logits[j] - mx);
        z += out[j];
    }
    for (auto j : selected)
        out[j] /= z;
}

/// Seed of the Gaussian noise stream for one token row.
inline std::uint64_t row_noise_seed(std::uint64_t seed, std::size_t row)
{
    return derive_seed(seed, 0xA11CE000ull + row);
}

struct RouterTrace {
    Vector noisy_input; // x + xi
    Vector pre;         // (x + xi) Wr1 + br1
    Vector logits;      // gelu(pre) Wr2 + br2
};

inline void router_row(std::span<const double> x, const RouterParams& r, double sigma, std::uint64_t noise_seed,
                       RouterTrace& tr)
{
    tr.noisy_input.assign(x.begin(), x.end());
    if (sigma > 0.0) {
        Rng rng(noise_seed);
        for (double& v : tr.noisy_input)
            v += sigma * rng.normal();
    }
    tr.pre.resize(r.wr1.cols);
    tr.logits.resize(r.wr2.cols);
    affine_row(tr.noisy_input, r.wr1, r.br1, tr.pre);
    Vector act(tr.pre.size());
    for (std::size_t i = 0; i < act.size(); ++i)
        act[i] = gelu(tr.pre[i]);
    affine_row(act, r.wr2, r.br2, tr.logits);
}

inline void check_router(const RouterParams& r, const MopConfig& cfg)
{
    require_shape(r.wr1, cfg.c_in, cfg.router_hidden, "router Wr1");
    require_size(r.br1.size(), cfg.router_hidden, "router br1");
    require_shape(r.wr2, cfg.router_hidden, cfg.n_projectors, "router Wr2");
    require_size(r.br2.size(), cfg.n_projectors, "router br2");
}

inline void require_finite(const Matrix& m, const char* what)
{
    if (!m.all_finite())
        throw NumericError(std::string(what) + " contains non-finite values");
}

/// Per-token noisy top-K routing: logits = f_con(row + xi), xi ~ N(0, sigma^2) in training mode only,
/// softmax over the K selected logits, zeros elsewhere.
inline RoutingDecision route(const Matrix& input, const RouterParams& r, const MopConfig& cfg, std::uint64_t seed)
{
    cfg.validate();
    check_router(r, cfg);
    require_cols(input, cfg.c_in, "router input (C_I)");
    require_finite(input, "router input");

    RoutingDecision d{Matrix(input.rows, cfg.n_projectors), {}, Matrix(input.rows, cfg.n_projectors)};
    d.selected.reserve(input.rows);
    const double sigma = cfg.effective_sigma();
    RouterTrace tr;
    for (std::size_t t = 0; t < input.rows; ++t) {
        router_row(input.row(t), r, sigma, row_noise_seed(seed, t), tr);
        for (double v : tr.logits)
            if (!std::isfinite(v))
                throw NumericError("router produced a non-finite logit at row " + std::to_string(t));
        std::copy(tr.logits.begin(), tr.logits.end(), d.logits.row(t).begin());
        d.selected.push_back(top_k_indices(tr.logits, cfg.top_k));
        masked_softmax(tr.logits, d.selected.back(), d.weights.row(t));
    }
    return d;
}

// ---------------------------------------------------------------------------
// Layer forward / backward

struct MopOutput {
    Matrix output;
    RoutingDecision routing;
};

namespace detail {

/// Routing whose selection comes from `forced` (if given) while weights are recomputed
/// from the current logits. Used to differentiate with the top-K mask held fixed.
inline RoutingDecision route_with_mask(const Matrix& input, const MopParams& params, const MopConfig& cfg,
                                       std::uint64_t seed, const RoutingDecision* forced)
{
    RoutingDecision d = route(input, params.router, cfg, seed);
    if (forced == nullptr)
        return d;
    if (forced->selected.size() != input.rows || forced->weights.rows != input.rows ||
        forced->weights.cols != cfg.n_projectors)
        throw ShapeError("recorded routing does not match the input (rows " +
                         std::to_string(forced->selected.size()) + " vs " + std::to_string(input.rows) + ")");
    for (std::size_t t = 0; t < input.rows; ++t) {
        const auto& sel = forced->selected[t];
        if (sel.size() != cfg.top_k)
            throw ShapeError("recorded routing row " + std::to_string(t) + " has " + std::to_string(sel.size()) +
                             " selections, expected K=" + std::to_string(cfg.top_k));
        for (auto j : sel)
            if (j >= cfg.n_projectors)
                throw ShapeError("recorded routing selects projector " + std::to_string(j) + " >= N");
        d.selected[t] = sel;
        masked_softmax(d.logits.row(t), sel, d.weights.row(t));
    }
    return d;
}

} // namespace detail

inline MopOutput mop_forward(const Matrix& input, const MopParams& params, const MopConfig& cfg, std::uint64_t seed,
                             const RoutingDecision* fixed_mask = nullptr)
{
    cfg.validate();
    validate_params(params, cfg);
    MopOutput out{Matrix(input.rows, cfg.c_out), detail::route_with_mask(input, params, cfg, seed, fixed_mask)};
    ProjectorTrace tr;
    for (std::size_t t = 0; t < input.rows; ++t) {
        auto dst = out.output.row(t);
        for (auto k : out.routing.selected[t]) {
            projector_row(input.row(t), params.projectors[k], tr);
            const double w = out.routing.weights(t, k);
            for (std::size_t j = 0; j < dst.size(); ++j)
                dst[j] += w * tr.output[j];
        }
    }
    require_finite(out.output, "mop output");
    return out;
}

struct MopGradients {
    MopParams params; // same layout as the parameters
    Matrix input;     // dLoss/dI
};

/// Reverse-mode gradients of <upstream, mop_forward(I)>. The top-K selection is a constant mask
/// (taken from `recorded` if given, otherwise recomputed with the same seed); the softmax over the
/// selected logits, both projector layers and the router MLP are differentiated exactly.
inline MopGradients mop_backward(const Matrix& input, const MopParams& params, const MopConfig& cfg,
                                 std::uint64_t seed, const Matrix& upstream,
                                 const RoutingDecision* recorded = nullptr)
{
    cfg.validate();
    validate_params(params, cfg);
    require_cols(input, cfg.c_in, "mop input (C_I)");
    require_shape(upstream, input.rows, cfg.c_out, "upstream gradient");
    const RoutingDecision routing = detail::route_with_mask(input, params, cfg, seed, recorded);

    MopGradients g{zero_params(cfg), Matrix(input.rows, cfg.c_in)};
    const double sigma = cfg.effective_sigma();
    ProjectorTrace ptr;
    RouterTrace rtr;
    Vector d_weight(cfg.n_projectors);
    Vector d_logits(cfg.n_projectors);

    for (std::size_t t = 0; t < input.rows; ++t) {
        const auto x = input.row(t);
        const auto gout = upstream.row(t);
        auto dx = g.input.row(t);
        const auto& sel = routing.selected[t];

        // Projectors: out = sum_k w_k y_k.
        for (auto k : sel) {
            const auto& p = params.projectors[k];
            auto& gp = g.params.projectors[k];
            projector_row(x, p, ptr);
            const double w = routing.weights(t, k);

            double dw = 0.0;
            for (std::size_t j = 0; j < cfg.c_out; ++j)
                dw += gout[j] * ptr.output[j];
            d_weight[k] = dw;

            Vector dy(cfg.c_out);
            for (std::size_t j = 0; j < cfg.c_out; ++j)
                dy[j] = w * gout[j];
            Vector act(cfg.hidden), d_act(cfg.hidden, 0.0);
            for (std::size_t h = 0; h < cfg.hidden; ++h)
                act[h] = gelu(ptr.pre[h]);
            affine_row_backward(act, p.w2, dy, gp.w2, gp.b2, d_act);
            for (std::size_t h = 0; h < cfg.hidden; ++h)
                d_act[h] *= gelu_derivative(ptr.pre[h]);
            affine_row_backward(x, p.w1, d_act, gp.w1, gp.b1, dx);
        }

        // Softmax over the selected logits: ds_j = w_j (dw_j - sum_k w_k dw_k).
        double mean = 0.0;
        for (auto k : sel)
            mean += routing.weights(t, k) * d_weight[k];
        std::fill(d_logits.begin(), d_logits.end(), 0.0);
        for (auto k : sel)
            d_logits[k] = routing.weights(t, k) * (d_weight[k] - mean);

        // Router MLP; the noise is a constant offset so dI receives the same path gradient.
        router_row(x, params.router, sigma, row_noise_seed(seed, t), rtr);
        Vector ract(cfg.router_hidden), d_ract(cfg.router_hidden, 0.0);
        for (std::size_t h = 0; h < cfg.router_hidden; ++h)
            ract[h] = gelu(rtr.pre[h]);
        affine_row_backward(ract, params.router.wr2, d_logits, g.params.router.wr2, g.params.router.br2, d_ract);
        for (std::size_t h = 0; h < cfg.router_hidden; ++h)
            d_ract[h] *= gelu_derivative(rtr.pre[h]);
        affine_row_backward(rtr.noisy_input, params.router.wr1, d_ract, g.params.router.wr1, g.params.router.br1,
                            dx);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Diagnostics

/// Fraction of all token routings that went to each projector. Sums to 1.
inline std::vector<double> router_utilization(std::span<const RoutingDecision> decisions, std::size_t n_projectors)
{
    std::vector<double> hist(n_projectors, 0.0);
    std::size_t total = 0;
    for (const auto& d : decisions)
        for (const auto& row : d.selected)
            for (auto k : row) {
                if (k >= n_projectors)
                    throw ShapeError("routing selects projector " + std::to_string(k) + " >= N");
                hist[k] += 1.0;
                ++total;
            }
    if (total == 0)
        throw std::invalid_argument("router_utilization needs at least one routed token");
    for (double& h : hist)
        h /= static_cast<double>(total);
    return hist;
}

} // namespace vsa::mop
