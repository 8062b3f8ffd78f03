#include "clr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace clr {

namespace {

struct Probe {
    double loss;
    std::vector<bool> relu_signs;
};

Probe probe(const LossBuilder& build) {
    Graph g;
    Probe p{build(g).value().item(), {}};
    for (std::size_t id = 0; id < g.size(); ++id)
        if (g.kind(id) == OpKind::relu)
            for (float v : g.value(g.inputs(id)[0]).data) p.relu_signs.push_back(v > 0.0f);
    return p;
}

} // namespace

GradCheckReport gradient_check(std::span<Parameter> params, const LossBuilder& build,
                               double tolerance, float h, bool skip_kinks) {
    for (auto& p : params) p.zero_grad();
    {
        Graph g;
        Var loss = build(g);
        g.backward(loss);
    }
    const auto base = probe(build).relu_signs;
    GradCheckReport report;
    for (auto& p : params) {
        GradCheckEntry entry{p.name, 0.0, true, 0, 0};
        double scale = 0.0, worst = 0.0;
        for (std::size_t i = 0; i < p.value.numel(); ++i) {
            float saved = p.value.data[i];
            p.value.data[i] = saved + h;
            Probe up = probe(build);
            p.value.data[i] = saved - h;
            Probe down = probe(build);
            p.value.data[i] = saved;
            if (skip_kinks && (up.relu_signs != base || down.relu_signs != base)) {
                ++entry.kinks_skipped;
                continue;
            }
            double numeric = (up.loss - down.loss) / (2.0 * static_cast<double>(h));
            double analytic = p.grad[i];
            scale = std::max({scale, std::abs(numeric), std::abs(analytic)});
            worst = std::max(worst, std::abs(numeric - analytic));
            ++entry.checked;
        }
        entry.max_rel_error = scale > 0.0 ? worst / scale : 0.0;
        entry.within_tolerance = entry.max_rel_error < tolerance;
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.ok = report.ok && entry.within_tolerance;
        report.checked += entry.checked;
        report.kinks_skipped += entry.kinks_skipped;
        report.entries.push_back(std::move(entry));
        p.zero_grad();
    }
    return report;
}

} // namespace clr
