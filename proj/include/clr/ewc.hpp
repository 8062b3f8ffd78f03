#pragma once

#include <functional>
#include <span>
#include <vector>

#include "clr/autograd.hpp"
#include "clr/dataset.hpp"
#include "clr/rng.hpp"

namespace clr {

/// Anchor parameters and diagonal Fisher of one completed task.
struct EwcTask {
    std::vector<Tensor> anchor;
    std::vector<Tensor> fisher;
};

struct EwcState {
    double lambda = 100.0;
    std::vector<EwcTask> tasks;
};

enum class FisherEstimator {
    sampled_label,  // one label per item drawn from the model's predictive distribution
    expected_label, // exact expectation over all labels (K backward passes per item)
};

using LogitsFn = std::function<Var(Graph&, Var input)>;

/// theta* = current parameters; Fisher_i = mean over up to n_samples items of
/// (d log p(y_hat | x) / d theta_i)^2. Parameter grads are left zeroed.
EwcTask ewc_consolidate(std::span<Parameter> params, const LogitsFn& logits, const Dataset& data,
                        std::span<const std::size_t> subset, std::size_t n_samples, Rng& rng,
                        FisherEstimator estimator = FisherEstimator::sampled_label);

/// (lambda / 2) sum_tasks sum_i F_i (theta_i - theta*_i)^2, differentiable in the parameters.
Var ewc_penalty(Graph& g, std::span<Parameter> params, const EwcState& state);

} // namespace clr
