#pragma once

// Synthetic alignment tasks for desk-scale MOP experiments.

#include <cstdint>
#include <vector>

#include "vsa/mop/train.hpp"

namespace vsa::mop {

struct TaskShape {
    std::size_t c_in = 8;        // includes the trailing domain-flag column for the two-domain task
    std::size_t c_out = 8;
    std::size_t tokens = 4;      // rows per sample
    std::size_t samples = 256;
};

namespace detail {

inline Matrix random_map(std::size_t rows, std::size_t cols, Rng& rng)
{
    Matrix m(rows, cols);
    const double a = 1.0 / std::sqrt(static_cast<double>(rows));
    for (double& v : m.data)
        v = rng.uniform(-2.0 * a, 2.0 * a);
    return m;
}

} // namespace detail

/// Every sample's target is x A for one fixed random linear map A.
inline std::vector<TrainSample> make_linear_task(const TaskShape& shape, std::uint64_t seed)
{
    Rng rng(derive_seed(seed, 0x11));
    const Matrix a = detail::random_map(shape.c_in, shape.c_out, rng);
    std::vector<TrainSample> data;
    data.reserve(shape.samples);
    const Vector zero(shape.c_out, 0.0);
    for (std::size_t s = 0; s < shape.samples; ++s) {
        TrainSample ts{Matrix(shape.tokens, shape.c_in), Matrix(shape.tokens, shape.c_out)};
        for (double& v : ts.input.data)
            v = rng.uniform(-1.0, 1.0);
        for (std::size_t t = 0; t < shape.tokens; ++t)
            affine_row(ts.input.row(t), a, zero, ts.target.row(t));
        data.push_back(std::move(ts));
    }
    return data;
}

/// Two-domain piecewise-linear task: the last input column is a domain flag (+flag_scale or
/// -flag_scale, one domain per sample) and the target is the feature columns mapped by A or B.
inline std::vector<TrainSample> make_two_domain_task(const TaskShape& shape, std::uint64_t seed,
                                                     double flag_scale = 3.0)
{
    const std::size_t features = shape.c_in - 1;
    Rng rng(derive_seed(seed, 0x22));
    const Matrix maps[2] = {detail::random_map(features, shape.c_out, rng),
                            detail::random_map(features, shape.c_out, rng)};
    const Vector zero(shape.c_out, 0.0);
    std::vector<TrainSample> data;
    data.reserve(shape.samples);
    for (std::size_t s = 0; s < shape.samples; ++s) {
        const std::size_t domain = s % 2;
        TrainSample ts{Matrix(shape.tokens, shape.c_in), Matrix(shape.tokens, shape.c_out)};
        for (std::size_t t = 0; t < shape.tokens; ++t) {
            auto row = ts.input.row(t);
            for (std::size_t j = 0; j < features; ++j)
                row[j] = rng.uniform(-1.0, 1.0);
            row[features] = domain == 0 ? flag_scale : -flag_scale;
            affine_row(row.first(features), maps[domain], zero, ts.target.row(t));
        }
        data.push_back(std::move(ts));
    }
    return data;
}

} // namespace vsa::mop

namespace vsa::mop {

/// Layer configuration used by the projector-count experiments: small dims, hidden width 8,
/// router noise sigma = 1, K = min(top_k, N).
inline MopConfig experiment_config(std::size_t n_projectors, std::size_t top_k = 2)
{
    MopConfig c;
    c.n_projectors = n_projectors;
    c.top_k = std::min(top_k, n_projectors);
    c.noise_sigma = 1.0;
    c.c_in = 8;
    c.hidden = 8;
    c.c_out = 8;
    c.router_hidden = 8;
    return c;
}

inline TrainHyper experiment_hyper(std::uint64_t seed = 1)
{
    return {1e-2, 2000, 8, seed};
}

} // namespace vsa::mop
