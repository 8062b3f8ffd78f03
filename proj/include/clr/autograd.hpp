#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "clr/tensor.hpp"

namespace clr {

/// A trainable tensor. `grad` accumulates across backward passes until zero_grad().
struct Parameter {
    std::string name;
    Tensor value;
    std::vector<float> grad;
    bool requires_grad = true;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), grad(value.numel(), 0.0f) {}

    void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

enum class OpKind {
    constant,
    input,
    parameter,
    conv2d,
    dense,
    relu,
    add,
    scale,
    sum,
    global_avg_pool,
    softmax_cross_entropy,
    squared_distance,
    weighted_squared_diff,
};

const char* op_name(OpKind kind);

class Graph;

/// Handle to a node in a Graph.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape; }
    std::span<const float> grad() const;
};

// Append-only tape. Nodes are topologically ordered by construction and
// backward() walks them in exact reverse insertion order.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t self)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    /// Leaf whose gradient is kept in the graph; accumulates across backward calls.
    Var input(Tensor value, bool requires_grad = true);
    /// Leaf bound to an external parameter; backward accumulates into `p.grad`.
    /// `p` must outlive the graph.
    Var parameter(Parameter& p);

    /// Reverse-mode sweep from a scalar. Intermediate gradients are reset on
    /// every call; leaf and parameter gradients accumulate.
    void backward(Var loss);

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    std::span<const float> grad(std::size_t id) const { return nodes_.at(id).grad; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
    std::size_t size() const { return nodes_.size(); }

    // Used by op implementations.
    Var record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn);
    /// Gradient buffer of a node, zero-allocated on first use.
    std::vector<float>& grad_buffer(std::size_t id);

private:
    struct Node {
        OpKind kind;
        std::vector<std::size_t> inputs;
        Tensor value;
        std::vector<float> grad;
        bool requires_grad = false;
        BackwardFn backward;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
};

// ---- differentiable primitives -------------------------------------------

/// input [N,C,H,W] * kernel [F,C,kH,kW] -> [N,F,H',W'], no bias.
Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding);
/// input [N,D] x weight [D,K] + bias [K] -> [N,K].
Var dense(Var input, Var weight, Var bias);
Var relu(Var x);
/// Elementwise sum of two tensors of identical shape.
Var add(Var a, Var b);
Var scale(Var x, float factor);
/// Sum of all elements -> [1].
Var sum(Var x);
/// [N,C,H,W] -> [N,C].
Var global_avg_pool(Var x);
/// Mean over the batch of -log softmax(logits)[label]. Labels must lie in [0,K).
Var softmax_cross_entropy(Var logits, std::span<const int> labels);
/// sum((x - target)^2) -> [1]; target is constant.
Var squared_distance(Var x, const Tensor& target);
/// sum(weight * (x - anchor)^2) -> [1]; anchor and weight are constant.
Var weighted_squared_diff(Var x, const Tensor& anchor, const Tensor& weight);

} // namespace clr
