#include "clr/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "clr/error.hpp"

namespace clr {

const char* op_name(OpKind kind) {
    switch (kind) {
    case OpKind::constant: return "constant";
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::conv2d: return "conv2d";
    case OpKind::dense: return "dense";
    case OpKind::relu: return "relu";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::sum: return "sum";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
    case OpKind::squared_distance: return "squared_distance";
    case OpKind::weighted_squared_diff: return "weighted_squared_diff";
    }
    return "unknown";
}

const Tensor& Var::value() const { return graph->value(id); }
std::span<const float> Var::grad() const { return graph->grad(id); }

Var Graph::constant(Tensor value) {
    Node n{OpKind::constant, {}, std::move(value), {}, false, {}, nullptr};
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Graph::input(Tensor value, bool requires_grad) {
    Node n{OpKind::input, {}, std::move(value), {}, requires_grad, {}, nullptr};
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Graph::parameter(Parameter& p) {
    if (p.grad.size() != p.value.numel()) p.grad.assign(p.value.numel(), 0.0f);
    // The value is copied so the tape stays valid if the optimizer updates p.
    Node n{OpKind::parameter, {}, p.value, {}, p.requires_grad, {}, &p};
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

Var Graph::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn fn) {
    bool needs = false;
    for (auto i : inputs) {
        if (i >= nodes_.size()) throw InternalError("graph input id out of range");
        needs = needs || nodes_[i].requires_grad;
    }
    Node n{kind, std::move(inputs), std::move(value), {}, needs, needs ? std::move(fn) : BackwardFn{},
           nullptr};
    nodes_.push_back(std::move(n));
    return {this, nodes_.size() - 1};
}

std::vector<float>& Graph::grad_buffer(std::size_t id) {
    auto& n = nodes_.at(id);
    if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0f);
    return n.grad;
}

void Graph::backward(Var loss) {
    if (loss.graph != this) throw UsageError("backward: loss belongs to another graph");
    if (value(loss.id).numel() != 1)
        throw UsageError("backward: loss must be a scalar, got shape " + shape_str(value(loss.id).shape));
    for (auto& n : nodes_)
        if (n.kind != OpKind::input) n.grad.clear();
    if (!nodes_[loss.id].requires_grad) return;
    grad_buffer(loss.id)[0] += 1.0f;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.kind == OpKind::parameter) {
            auto& dst = n.param->grad;
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
        } else if (n.backward) {
            n.backward(*this, i);
        }
    }
}

namespace {

void check_same_graph(Var a, Var b, const char* op) {
    if (a.graph != b.graph || a.graph == nullptr)
        throw UsageError(std::string(op) + ": operands belong to different graphs");
}

// Column matrix [C*kH*kW, Ho*Wo] for one sample.
void im2col(const float* in, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo,
            float* cols) {
    const std::size_t P = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ki = 0; ki < kh; ++ki)
            for (std::size_t kj = 0; kj < kw; ++kj) {
                float* row = cols + ((c * kh + ki) * kw + kj) * P;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    auto iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
                    float* dst = row + oy * Wo;
                    if (iy < 0 || iy >= static_cast<long>(H)) {
                        std::fill(dst, dst + Wo, 0.0f);
                        continue;
                    }
                    const float* src = in + (c * H + static_cast<std::size_t>(iy)) * W;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        auto ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<long>(W)) ? 0.0f : src[ix];
                    }
                }
            }
}

// Transposed column matrix [Ho*Wo, C*kH*kW] for one sample.
void im2col_t(const float* in, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
              std::size_t kw, std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo,
              float* cols) {
    const std::size_t CK = C * kh * kw;
    for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
            float* dst = cols + (oy * Wo + ox) * CK;
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t ki = 0; ki < kh; ++ki) {
                    auto iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
                    bool row_ok = iy >= 0 && iy < static_cast<long>(H);
                    for (std::size_t kj = 0; kj < kw; ++kj) {
                        auto ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
                        bool ok = row_ok && ix >= 0 && ix < static_cast<long>(W);
                        *dst++ = ok ? in[(c * H + static_cast<std::size_t>(iy)) * W +
                                         static_cast<std::size_t>(ix)]
                                    : 0.0f;
                    }
                }
        }
}

void col2im_add(const float* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t kh,
                std::size_t kw, std::size_t stride, std::size_t pad, std::size_t Ho, std::size_t Wo,
                float* out) {
    const std::size_t P = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ki = 0; ki < kh; ++ki)
            for (std::size_t kj = 0; kj < kw; ++kj) {
                const float* row = cols + ((c * kh + ki) * kw + kj) * P;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    auto iy = static_cast<long>(oy * stride + ki) - static_cast<long>(pad);
                    if (iy < 0 || iy >= static_cast<long>(H)) continue;
                    float* dst = out + (c * H + static_cast<std::size_t>(iy)) * W;
                    const float* src = row + oy * Wo;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        auto ix = static_cast<long>(ox * stride + kj) - static_cast<long>(pad);
                        if (ix >= 0 && ix < static_cast<long>(W)) dst[ix] += src[ox];
                    }
                }
            }
}

inline void axpy(float a, const float* __restrict x, float* __restrict y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// y += a0 x0 + a1 x1 + a2 x2 + a3 x3
inline void axpy4(const float* a, const float* __restrict x0, const float* __restrict x1,
                  const float* __restrict x2, const float* __restrict x3, float* __restrict y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a[0] * x0[i] + a[1] * x1[i] + a[2] * x2[i] + a[3] * x3[i];
}

// y += sum_r a[r * stride] x_r, where x_r = x + r * n, for r < R.
inline void axpy_rows(const float* a, std::size_t a_stride, const float* x, std::size_t R, float* y, std::size_t n) {
    std::size_t r = 0;
    for (; r + 4 <= R; r += 4) {
        const float c[4] = {a[r * a_stride], a[(r + 1) * a_stride], a[(r + 2) * a_stride], a[(r + 3) * a_stride]};
        axpy4(c, x + r * n, x + (r + 1) * n, x + (r + 2) * n, x + (r + 3) * n, y, n);
    }
    for (; r < R; ++r) axpy(a[r * a_stride], x + r * n, y, n);
}

} // namespace

Var conv2d(Var input, Var kernel, std::size_t stride, std::size_t padding) {
    check_same_graph(input, kernel, "conv2d");
    const Tensor& x = input.value();
    const Tensor& k = kernel.value();
    if (x.rank() != 4 || k.rank() != 4 || x.dim(1) != k.dim(1))
        throw ConfigError("conv2d: input " + shape_str(x.shape) + " incompatible with kernel " +
                          shape_str(k.shape));
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::size_t F = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    if (kh > H + 2 * padding || kw > W + 2 * padding)
        throw ConfigError("conv2d: kernel " + shape_str(k.shape) + " larger than padded input " +
                          shape_str(x.shape));
    const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
    const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;
    const std::size_t P = Ho * Wo, CK = C * kh * kw;
    const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;

    Tensor out({N, F, Ho, Wo});
    std::vector<float> cols(pointwise ? 0 : CK * P);
    for (std::size_t n = 0; n < N; ++n) {
        const float* xin = x.data.data() + n * C * H * W;
        if (!pointwise) im2col(xin, C, H, W, kh, kw, stride, padding, Ho, Wo, cols.data());
        const float* colp = pointwise ? xin : cols.data();
        float* o = out.data.data() + n * F * P;
        for (std::size_t f = 0; f < F; ++f) {
            const float* wrow = k.data.data() + f * CK;
            float* orow = o + f * P;
            axpy_rows(wrow, 1, colp, CK, orow, P);
        }
    }

    auto bw = [xid = input.id, kid = kernel.id, stride, padding](Graph& g, std::size_t self) {
        const Tensor& x = g.value(xid);
        const Tensor& k = g.value(kid);
        const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
        const std::size_t F = k.dim(0), kh = k.dim(2), kw = k.dim(3);
        const std::size_t Ho = (H + 2 * padding - kh) / stride + 1;
        const std::size_t Wo = (W + 2 * padding - kw) / stride + 1;
        const std::size_t P = Ho * Wo, CK = C * kh * kw;
        const float* gout = g.grad(self).data();
        const bool need_w = g.requires_grad(kid);
        const bool need_x = g.requires_grad(xid);
        const bool pointwise = kh == 1 && kw == 1 && stride == 1 && padding == 0;
        float* gw = need_w ? g.grad_buffer(kid).data() : nullptr;
        float* gx = need_x ? g.grad_buffer(xid).data() : nullptr;
        std::vector<float> cols(need_w ? CK * P : 0);
        std::vector<float> dcols(need_x && !pointwise ? CK * P : 0);
        for (std::size_t n = 0; n < N; ++n) {
            const float* go = gout + n * F * P;
            const float* xin = x.data.data() + n * C * H * W;
            if (need_w) {
                im2col_t(xin, C, H, W, kh, kw, stride, padding, Ho, Wo, cols.data());
                for (std::size_t f = 0; f < F; ++f) axpy_rows(go + f * P, 1, cols.data(), P, gw + f * CK, CK);
            }
            if (need_x) {
                float* dst = pointwise ? gx + n * C * H * W : dcols.data();
                if (!pointwise) std::fill(dcols.begin(), dcols.end(), 0.0f);
                for (std::size_t ck = 0; ck < CK; ++ck) axpy_rows(k.data.data() + ck, CK, go, F, dst + ck * P, P);
                if (!pointwise) col2im_add(dcols.data(), C, H, W, kh, kw, stride, padding, Ho, Wo, gx + n * C * H * W);
            }
        }
    };
    return input.graph->record(OpKind::conv2d, {input.id, kernel.id}, std::move(out), bw);
}

Var dense(Var input, Var weight, Var bias) {
    check_same_graph(input, weight, "dense");
    check_same_graph(input, bias, "dense");
    const Tensor& x = input.value();
    const Tensor& w = weight.value();
    const Tensor& b = bias.value();
    if (x.rank() != 2 || w.rank() != 2 || b.rank() != 1 || x.dim(1) != w.dim(0) || w.dim(1) != b.dim(0))
        throw ConfigError("dense: input " + shape_str(x.shape) + " incompatible with weight " +
                          shape_str(w.shape) + " and bias " + shape_str(b.shape));
    const std::size_t N = x.dim(0), D = x.dim(1), K = w.dim(1);
    Tensor out({N, K});
    for (std::size_t n = 0; n < N; ++n) {
        float* o = out.data.data() + n * K;
        std::copy(b.data.begin(), b.data.end(), o);
        for (std::size_t d = 0; d < D; ++d) axpy(x.data[n * D + d], w.data.data() + d * K, o, K);
    }
    auto bw = [xid = input.id, wid = weight.id, bid = bias.id](Graph& g, std::size_t self) {
        const Tensor& x = g.value(xid);
        const Tensor& w = g.value(wid);
        const std::size_t N = x.dim(0), D = x.dim(1), K = w.dim(1);
        const float* go = g.grad(self).data();
        if (g.requires_grad(wid)) {
            float* gw = g.grad_buffer(wid).data();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t d = 0; d < D; ++d) axpy(x.data[n * D + d], go + n * K, gw + d * K, K);
        }
        if (g.requires_grad(bid)) {
            float* gb = g.grad_buffer(bid).data();
            for (std::size_t n = 0; n < N; ++n) axpy(1.0f, go + n * K, gb, K);
        }
        if (g.requires_grad(xid)) {
            float* gx = g.grad_buffer(xid).data();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t d = 0; d < D; ++d) {
                    float acc = 0.0f;
                    const float* wrow = w.data.data() + d * K;
                    for (std::size_t k = 0; k < K; ++k) acc += go[n * K + k] * wrow[k];
                    gx[n * D + d] += acc;
                }
        }
    };
    return input.graph->record(OpKind::dense, {input.id, weight.id, bias.id}, std::move(out), bw);
}

Var relu(Var x) {
    Tensor out = x.value();
    for (auto& v : out.data) v = v > 0.0f ? v : 0.0f;
    auto bw = [xid = x.id](Graph& g, std::size_t self) {
        const auto& y = g.value(self).data;
        auto go = g.grad(self);
        auto& gx = g.grad_buffer(xid);
        for (std::size_t i = 0; i < gx.size(); ++i)
            if (y[i] > 0.0f) gx[i] += go[i];
    };
    return x.graph->record(OpKind::relu, {x.id}, std::move(out), bw);
}

Var add(Var a, Var b) {
    check_same_graph(a, b, "add");
    if (a.shape() != b.shape())
        throw ConfigError("add: shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = a.value();
    const auto& bv = b.value().data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
    auto bw = [aid = a.id, bid = b.id](Graph& g, std::size_t self) {
        auto go = g.grad(self);
        for (auto id : {aid, bid}) {
            if (!g.requires_grad(id)) continue;
            auto& gi = g.grad_buffer(id);
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
        }
    };
    return a.graph->record(OpKind::add, {a.id, b.id}, std::move(out), bw);
}

Var scale(Var x, float factor) {
    Tensor out = x.value();
    for (auto& v : out.data) v *= factor;
    auto bw = [xid = x.id, factor](Graph& g, std::size_t self) {
        auto go = g.grad(self);
        auto& gx = g.grad_buffer(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += factor * go[i];
    };
    return x.graph->record(OpKind::scale, {x.id}, std::move(out), bw);
}

Var sum(Var x) {
    float acc = 0.0f;
    for (float v : x.value().data) acc += v;
    auto bw = [xid = x.id](Graph& g, std::size_t self) {
        float go = g.grad(self)[0];
        for (auto& v : g.grad_buffer(xid)) v += go;
    };
    return x.graph->record(OpKind::sum, {x.id}, Tensor::scalar(acc), bw);
}

Var global_avg_pool(Var x) {
    const Tensor& t = x.value();
    if (t.rank() != 4) throw ConfigError("global_avg_pool: expected rank 4, got " + shape_str(t.shape));
    const std::size_t N = t.dim(0), C = t.dim(1), P = t.dim(2) * t.dim(3);
    Tensor out({N, C});
    const float inv = 1.0f / static_cast<float>(P);
    for (std::size_t nc = 0; nc < N * C; ++nc) {
        float acc = 0.0f;
        const float* src = t.data.data() + nc * P;
        for (std::size_t p = 0; p < P; ++p) acc += src[p];
        out.data[nc] = acc * inv;
    }
    auto bw = [xid = x.id, P, inv](Graph& g, std::size_t self) {
        auto go = g.grad(self);
        auto& gx = g.grad_buffer(xid);
        for (std::size_t nc = 0; nc < go.size(); ++nc) {
            float v = go[nc] * inv;
            float* dst = gx.data() + nc * P;
            for (std::size_t p = 0; p < P; ++p) dst[p] += v;
        }
    };
    return x.graph->record(OpKind::global_avg_pool, {x.id}, std::move(out), bw);
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
    const Tensor& z = logits.value();
    if (z.rank() != 2) throw ConfigError("softmax_cross_entropy: logits must be [N,K], got " + shape_str(z.shape));
    const std::size_t N = z.dim(0), K = z.dim(1);
    if (labels.size() != N)
        throw DataError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(N) + " rows");
    std::vector<float> probs(N * K);
    float total = 0.0f;
    for (std::size_t n = 0; n < N; ++n) {
        int y = labels[n];
        if (y < 0 || static_cast<std::size_t>(y) >= K)
            throw DataError("softmax_cross_entropy: label " + std::to_string(y) + " of sample " +
                            std::to_string(n) + " outside [0," + std::to_string(K) + ")");
        const float* row = z.data.data() + n * K;
        float m = *std::max_element(row, row + K);
        float s = 0.0f;
        for (std::size_t k = 0; k < K; ++k) {
            probs[n * K + k] = std::exp(row[k] - m);
            s += probs[n * K + k];
        }
        for (std::size_t k = 0; k < K; ++k) probs[n * K + k] /= s;
        total += std::log(s) - (row[y] - m);
    }
    std::vector<int> lab(labels.begin(), labels.end());
    auto bw = [zid = logits.id, probs = std::move(probs), lab = std::move(lab), K](Graph& g,
                                                                                 std::size_t self) {
        const std::size_t N = lab.size();
        float go = g.grad(self)[0] / static_cast<float>(N);
        auto& gz = g.grad_buffer(zid);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t k = 0; k < K; ++k) {
                float p = probs[n * K + k] - (static_cast<int>(k) == lab[n] ? 1.0f : 0.0f);
                gz[n * K + k] += go * p;
            }
    };
    return logits.graph->record(OpKind::softmax_cross_entropy, {logits.id},
                                Tensor::scalar(total / static_cast<float>(N)), std::move(bw));
}

Var squared_distance(Var x, const Tensor& target) {
    if (x.shape() != target.shape)
        throw ConfigError("squared_distance: shape " + shape_str(x.shape()) + " vs target " +
                          shape_str(target.shape));
    const auto& xv = x.value().data;
    std::vector<float> diff(xv.size());
    float acc = 0.0f;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        diff[i] = xv[i] - target.data[i];
        acc += diff[i] * diff[i];
    }
    auto bw = [xid = x.id, diff = std::move(diff)](Graph& g, std::size_t self) {
        float go = 2.0f * g.grad(self)[0];
        auto& gx = g.grad_buffer(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go * diff[i];
    };
    return x.graph->record(OpKind::squared_distance, {x.id}, Tensor::scalar(acc), std::move(bw));
}

Var weighted_squared_diff(Var x, const Tensor& anchor, const Tensor& weight) {
    if (x.value().numel() != anchor.numel() || x.value().numel() != weight.numel())
        throw InternalError("weighted_squared_diff: " + shape_str(x.shape()) + " vs anchor " +
                            shape_str(anchor.shape) + " / weight " + shape_str(weight.shape));
    const auto& xv = x.value().data;
    std::vector<float> wd(xv.size());
    float acc = 0.0f;
    for (std::size_t i = 0; i < xv.size(); ++i) {
        float d = xv[i] - anchor.data[i];
        wd[i] = weight.data[i] * d;
        acc += wd[i] * d;
    }
    auto bw = [xid = x.id, wd = std::move(wd)](Graph& g, std::size_t self) {
        float go = 2.0f * g.grad(self)[0];
        auto& gx = g.grad_buffer(xid);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += go * wd[i];
    };
    return x.graph->record(OpKind::weighted_squared_diff, {x.id}, Tensor::scalar(acc), std::move(bw));
}

} // namespace clr
