#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "clr/autograd.hpp"

namespace clr {

struct GradCheckEntry {
    std::string name;
    // max_i |analytic_i - numeric_i| / max(max|analytic|, max|numeric|), 0 when both vanish.
    double max_rel_error = 0.0;
    bool within_tolerance = true;
    std::size_t checked = 0;
    std::size_t kinks_skipped = 0; // a relu input changed sign between the two probes
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_error = 0.0;
    bool ok = true;
    std::size_t checked = 0;
    std::size_t kinks_skipped = 0;
};

/// Builds the loss on a fresh graph from the current parameter values.
using LossBuilder = std::function<Var(Graph&)>;

/// Compares reverse-mode gradients against central differences for every
/// element of every parameter. Parameter values are restored afterwards and
/// their grads are left zeroed. With skip_kinks, elements whose probes put any
/// relu input on a different side of zero than the base point are not compared
/// (the difference quotient straddles a kink there).
GradCheckReport gradient_check(std::span<Parameter> params, const LossBuilder& build,
                               double tolerance, float h = 1e-3f, bool skip_kinks = true);

} // namespace clr
