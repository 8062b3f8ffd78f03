#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "clr/autograd.hpp"

namespace clr {

/// Cosine annealing from lr0 down to lr_min over total_steps.
struct LrSchedule {
    double lr0 = 0.01;
    std::size_t total_steps = 1;
    double lr_min = 0.0;
};

/// lr_min + (lr0 - lr_min)(1 + cos(pi step / total)) / 2. Steps past the end clamp to lr_min.
double cosine_lr(std::size_t step, const LrSchedule& schedule);

struct OptimizerState {
    std::vector<std::vector<float>> velocity;
    double lr = 0.01;
    double momentum = 0.9;
    std::size_t step_count = 0;
};

OptimizerState make_optimizer_state(std::span<const Parameter> params, double lr, double momentum);

/// Classic momentum: v <- momentum v + g; p <- p - lr v. Gradients are read
/// from each parameter's `grad` and left untouched.
void sgd_momentum_step(std::span<Parameter> params, OptimizerState& state);

} // namespace clr
