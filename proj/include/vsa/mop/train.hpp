#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsa/mop/loss.hpp"
#include "vsa/mop/mop.hpp"

namespace vsa::mop {

struct TrainSample {
    Matrix input;  // L x C_I
    Matrix target; // L x C_Q
};

struct TrainHyper {
    double lr = 1e-2;
    std::size_t steps = 2000;
    std::size_t batch = 16;
    std::uint64_t seed = 0;
};

struct TrainResult {
    MopParams params;
    std::vector<double> loss_curve; // mean batch MSE at each step, before the update
    double final_loss = 0.0;        // mean MSE over the whole dataset, inference mode
};

struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Mean per-sample MSE over a dataset, routed without noise.
inline double dataset_loss(std::span<const TrainSample> data, const MopParams& params, MopConfig cfg)
{
    cfg.mode = Mode::inference;
    double acc = 0.0;
    for (const auto& s : data)
        acc += mse(mop_forward(s.input, params, cfg, 0).output, s.target);
    return acc / static_cast<double>(data.size());
}

namespace detail {

/// Adam over the flattened parameter tensors.
class Adam {
public:
    Adam(const MopParams& shape, double lr) : lr_(lr), m_(zero_like(shape)), v_(zero_like(shape)) {}

    void step(MopParams& params, const MopParams& grad)
    {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
        std::vector<std::span<double>> p, m, v;
        std::vector<std::span<const double>> g;
        for_each_tensor(params, [&](std::span<double> s) { p.push_back(s); });
        for_each_tensor(m_, [&](std::span<double> s) { m.push_back(s); });
        for_each_tensor(v_, [&](std::span<double> s) { v.push_back(s); });
        for_each_tensor(grad, [&](std::span<const double> s) { g.push_back(s); });
        for (std::size_t a = 0; a < p.size(); ++a)
            for (std::size_t i = 0; i < p[a].size(); ++i) {
                m[a][i] = beta1 * m[a][i] + (1.0 - beta1) * g[a][i];
                v[a][i] = beta2 * v[a][i] + (1.0 - beta2) * g[a][i] * g[a][i];
                p[a][i] -= lr_ * (m[a][i] / c1) / (std::sqrt(v[a][i] / c2) + eps);
            }
    }

private:
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    static MopParams zero_like(MopParams p)
    {
        for_each_tensor(p, [](std::span<double> s) { std::fill(s.begin(), s.end(), 0.0); });
        return p;
    }

    double lr_;
    MopParams m_, v_;
    std::uint64_t t_ = 0;
};

inline void accumulate(MopParams& into, const MopParams& g, double scale)
{
    std::vector<std::span<double>> dst;
    for_each_tensor(into, [&](std::span<double> s) { dst.push_back(s); });
    std::size_t a = 0;
    for_each_tensor(g, [&](std::span<const double> s) {
        for (std::size_t i = 0; i < s.size(); ++i)
            dst[a][i] += scale * s[i];
        ++a;
    });
}

} // namespace detail

/// Minimizes mean squared error to the targets with Adam on mini-batches drawn with replacement.
/// Router noise is active (cfg.mode is forced to training); every draw is derived from hyper.seed.
inline TrainResult train_mop(std::span<const TrainSample> dataset, MopConfig cfg, const TrainHyper& hyper)
{
    if (dataset.empty())
        throw std::invalid_argument("train_mop: empty dataset");
    if (hyper.batch == 0 || hyper.steps == 0)
        throw std::invalid_argument("train_mop: batch and steps must be >= 1");
    cfg.validate();
    for (const auto& s : dataset) {
        require_cols(s.input, cfg.c_in, "training input (C_I)");
        require_shape(s.target, s.input.rows, cfg.c_out, "training target");
    }
    cfg.mode = Mode::training;

    TrainResult res{init_params(cfg, hyper.seed), {}, 0.0};
    res.loss_curve.reserve(hyper.steps);
    detail::Adam opt(res.params, hyper.lr);
    Rng sampler(derive_seed(hyper.seed, 0x5A3B));

    for (std::size_t step = 0; step < hyper.steps; ++step) {
        MopParams grad = zero_params(cfg);
        double batch_loss = 0.0;
        for (std::size_t b = 0; b < hyper.batch; ++b) {
            const auto& s = dataset[sampler.below(dataset.size())];
            const std::uint64_t noise_seed = derive_seed(hyper.seed, step * hyper.batch + b + 1);
            const auto fwd = mop_forward(s.input, res.params, cfg, noise_seed);
            Matrix upstream;
            batch_loss += mse(fwd.output, s.target, &upstream);
            const auto g = mop_backward(s.input, res.params, cfg, noise_seed, upstream, &fwd.routing);
            detail::accumulate(grad, g.params, 1.0 / static_cast<double>(hyper.batch));
        }
        batch_loss /= static_cast<double>(hyper.batch);
        if (!std::isfinite(batch_loss))
            throw TrainingDiverged("training diverged at step " + std::to_string(step) +
                                   " (loss is not finite; lr=" + std::to_string(hyper.lr) + ")");
        res.loss_curve.push_back(batch_loss);
        opt.step(res.params, grad);
    }
    res.final_loss = dataset_loss(dataset, res.params, cfg);
    if (!std::isfinite(res.final_loss))
        throw TrainingDiverged("training diverged: final dataset loss is not finite");
    return res;
}

} // namespace vsa::mop
