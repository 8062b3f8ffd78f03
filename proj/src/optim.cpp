#include "clr/optim.hpp"

#include <cmath>
#include <numbers>

#include "clr/error.hpp"

namespace clr {

double cosine_lr(std::size_t step, const LrSchedule& s) {
    if (s.total_steps == 0) throw ConfigError("cosine_lr: total_steps must be positive");
    if (step >= s.total_steps) return s.lr_min;
    double phase = std::numbers::pi * static_cast<double>(step) / static_cast<double>(s.total_steps);
    return s.lr_min + 0.5 * (s.lr0 - s.lr_min) * (1.0 + std::cos(phase));
}

OptimizerState make_optimizer_state(std::span<const Parameter> params, double lr, double momentum) {
    if (!(lr > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optimizer: momentum must lie in [0,1)");
    OptimizerState st;
    st.lr = lr;
    st.momentum = momentum;
    st.velocity.reserve(params.size());
    for (const auto& p : params) st.velocity.emplace_back(p.value.numel(), 0.0f);
    return st;
}

void sgd_momentum_step(std::span<Parameter> params, OptimizerState& state) {
    if (state.velocity.size() != params.size())
        throw InternalError("sgd: optimizer state tracks " + std::to_string(state.velocity.size()) +
                            " parameters, got " + std::to_string(params.size()));
    const auto lr = static_cast<float>(state.lr);
    const auto mu = static_cast<float>(state.momentum);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i];
        if (!p.requires_grad) continue;
        if (p.grad.size() != p.value.numel())
            throw InternalError("sgd: missing gradient for parameter '" + p.name + "'");
        auto& v = state.velocity[i];
        if (v.size() != p.value.numel())
            throw InternalError("sgd: velocity shape drift for parameter '" + p.name + "'");
        for (std::size_t k = 0; k < v.size(); ++k) {
            v[k] = mu * v[k] + p.grad[k];
            p.value.data[k] -= lr * v[k];
        }
    }
    ++state.step_count;
}

} // namespace clr
