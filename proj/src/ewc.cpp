#include "clr/ewc.hpp"

#include <cmath>
#include <numeric>

#include "clr/error.hpp"

namespace clr {

namespace {

std::vector<float> softmax_row(const Tensor& logits) {
    std::vector<float> p(logits.data);
    float m = *std::max_element(p.begin(), p.end());
    float s = 0.0f;
    for (auto& v : p) {
        v = std::exp(v - m);
        s += v;
    }
    for (auto& v : p) v /= s;
    return p;
}

int sample_label(const std::vector<float>& probs, Rng& rng) {
    double u = rng.uniform(), acc = 0.0;
    for (std::size_t k = 0; k < probs.size(); ++k) {
        acc += probs[k];
        if (u < acc) return static_cast<int>(k);
    }
    return static_cast<int>(probs.size() - 1);
}

} // namespace

EwcTask ewc_consolidate(std::span<Parameter> params, const LogitsFn& logits, const Dataset& data,
                        std::span<const std::size_t> subset, std::size_t n_samples, Rng& rng,
                        FisherEstimator estimator) {
    if (subset.empty()) throw ConfigError("ewc: cannot consolidate on an empty task");
    EwcTask task;
    for (const auto& p : params) {
        task.anchor.push_back(p.value);
        task.fisher.emplace_back(p.value.shape);
    }
    std::vector<std::size_t> order(subset.begin(), subset.end());
    const std::size_t n = std::min(std::max<std::size_t>(n_samples, 1), order.size());
    for (std::size_t i = 0; i < n; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);

    auto accumulate = [&](double weight) {
        for (std::size_t k = 0; k < params.size(); ++k) {
            auto& f = task.fisher[k].data;
            const auto& g = params[k].grad;
            for (std::size_t j = 0; j < f.size(); ++j) f[j] += static_cast<float>(weight) * g[j] * g[j];
            params[k].zero_grad();
        }
    };
    for (auto& p : params) p.zero_grad();
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = order[i];
        Tensor x = data.batch(std::span<const std::size_t>(&idx, 1));
        std::vector<float> probs;
        {
            Graph g;
            probs = softmax_row(logits(g, g.constant(x)).value());
        }
        auto backprop = [&](int label) {
            Graph g;
            Var loss = softmax_cross_entropy(logits(g, g.constant(x)), std::span<const int>(&label, 1));
            g.backward(loss);
        };
        if (estimator == FisherEstimator::sampled_label) {
            backprop(sample_label(probs, rng));
            accumulate(1.0);
        } else {
            for (std::size_t k = 0; k < probs.size(); ++k) {
                backprop(static_cast<int>(k));
                accumulate(probs[k]);
            }
        }
    }
    const float inv = 1.0f / static_cast<float>(n);
    for (auto& f : task.fisher)
        for (auto& v : f.data) v *= inv;
    return task;
}

Var ewc_penalty(Graph& g, std::span<Parameter> params, const EwcState& state) {
    if (state.tasks.empty()) return g.constant(Tensor::scalar(0.0f));
    Var total{};
    bool first = true;
    for (const auto& task : state.tasks) {
        if (task.anchor.size() != params.size())
            throw InternalError("ewc: consolidated parameter list does not match the model");
        for (std::size_t k = 0; k < params.size(); ++k) {
            if (task.anchor[k].numel() != params[k].value.numel())
                throw InternalError("ewc: shape drift in parameter '" + params[k].name + "'");
            Var term = weighted_squared_diff(g.parameter(params[k]), task.anchor[k], task.fisher[k]);
            total = first ? term : add(total, term);
            first = false;
        }
    }
    return scale(total, static_cast<float>(state.lambda / 2.0));
}

} // namespace clr
