#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "vsa/mop/matrix.hpp"

namespace vsa::mop {

struct NllLoss {
    double total = 0.0; // -sum_t log p(target_t)
    double mean = 0.0;  // total / T
};

/// Autoregressive negative log-likelihood over T positions; each entry of `token_logits`
/// holds the vocabulary logits predicting the token at that position.
inline NllLoss nll_loss(std::span<const Vector> token_logits, std::span<const std::size_t> targets)
{
    if (token_logits.empty())
        throw std::invalid_argument("nll_loss: empty sequence");
    if (token_logits.size() != targets.size())
        throw std::invalid_argument("nll_loss: " + std::to_string(token_logits.size()) + " logit rows for " +
                                    std::to_string(targets.size()) + " targets");
    NllLoss loss;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        const auto& logits = token_logits[t];
        if (targets[t] >= logits.size())
            throw std::out_of_range("nll_loss: target " + std::to_string(targets[t]) + " at position " +
                                    std::to_string(t) + " outside vocabulary of size " +
                                    std::to_string(logits.size()));
        const double mx = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (double v : logits)
            z += std::exp(v - mx);
        loss.total += (mx + std::log(z)) - logits[targets[t]];
    }
    loss.mean = loss.total / static_cast<double>(targets.size());
    return loss;
}

/// Mean squared error over all entries, and its gradient w.r.t. `prediction`.
inline double mse(const Matrix& prediction, const Matrix& target, Matrix* grad = nullptr)
{
    require_shape(target, prediction.rows, prediction.cols, "mse target");
    const double n = static_cast<double>(prediction.data.size());
    if (grad)
        *grad = Matrix(prediction.rows, prediction.cols);
    double acc = 0.0;
    for (std::size_t i = 0; i < prediction.data.size(); ++i) {
        const double d = prediction.data[i] - target.data[i];
        acc += d * d;
        if (grad)
            grad->data[i] = 2.0 * d / n;
    }
    return acc / n;
}

} // namespace vsa::mop
