#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "clr/metrics.hpp"
#include "clr/replay_buffer.hpp"
#include "clr/robustify.hpp"
#include "clr/rng.hpp"

namespace testing {

struct AccProperty {
    std::size_t cases = 0;
    double acc_error = 0.0;  // worst |ACC - reference|
    double mean_error = 0.0; // worst aggregate mean error
    double std_error = 0.0;  // worst aggregate std error
};

// ACC and seed aggregation against long double references on random matrices.
inline AccProperty run_acc_property(std::size_t cases, std::uint64_t seed) {
    using namespace clr;
    Rng rng(seed);
    AccProperty out;
    auto entry = [&] {
        // Half the entries are test-split fractions, half arbitrary reals.
        if (rng.bernoulli(0.5)) {
            const std::uint64_t n = 1 + rng.below(2000);
            return double(rng.below(n + 1)) / double(n);
        }
        return rng.uniform();
    };
    for (std::size_t c = 0; c < cases; ++c) {
        const std::size_t T = 1 + rng.below(12), seeds = 1 + rng.below(7);
        const bool joint = rng.bernoulli(0.2);
        std::vector<RunResult> runs;
        std::vector<long double> refs;
        for (std::size_t s = 0; s < seeds; ++s) {
            std::vector<double> last;
            AccuracyMatrix m(T);
            if (joint) {
                for (std::size_t i = 0; i < T; ++i) last.push_back(entry());
                m = AccuracyMatrix::joint(last);
            } else {
                for (std::size_t t = 0; t < T; ++t) {
                    std::vector<double> row;
                    for (std::size_t i = 0; i <= t; ++i) row.push_back(entry());
                    if (t + 1 == T) last = row;
                    m.set_row(t, row);
                }
            }
            long double ref = 0.0L;
            for (double v : last) ref += v;
            ref /= static_cast<long double>(T);
            refs.push_back(ref);
            const double acc = average_accuracy(m);
            out.acc_error = std::max(out.acc_error, double(std::abs(static_cast<long double>(acc) - ref)));
            runs.push_back({"s", "standard", T, s, m, acc, "", 0.0});
        }
        long double mean = 0.0L;
        for (auto r : refs) mean += r;
        mean /= static_cast<long double>(refs.size());
        long double ss = 0.0L;
        for (auto r : refs) ss += (r - mean) * (r - mean);
        const long double sd = refs.size() > 1 ? std::sqrt(ss / static_cast<long double>(refs.size() - 1)) : 0.0L;
        auto table = aggregate(runs);
        const auto& cell = table.cells.at(0);
        out.mean_error = std::max(out.mean_error, double(std::abs(static_cast<long double>(cell.mean) - mean)));
        out.std_error = std::max(out.std_error, double(std::abs(static_cast<long double>(cell.std) - sd)));
        ++out.cases;
    }
    return out;
}

// Class counts equal min(observed, quota); quotas differ by at most one and
// fill the capacity; classes that reached their quota differ by at most one.
inline std::string buffer_violation(const clr::ReplayBuffer& b) {
    std::size_t total = 0, qsum = 0, qmin = b.capacity(), qmax = 0, full_min = b.capacity(), full_max = 0;
    for (int c : b.classes()) {
        const std::size_t q = b.quota(c), n = b.count(c);
        if (n != std::min<std::uint64_t>(b.observed(c), q)) return "class " + std::to_string(c) + " holds " + std::to_string(n);
        qsum += q;
        qmin = std::min(qmin, q);
        qmax = std::max(qmax, q);
        if (b.observed(c) >= q) {
            full_min = std::min(full_min, n);
            full_max = std::max(full_max, n);
        }
        total += n;
    }
    if (total != b.size() || b.size() > b.capacity()) return "size " + std::to_string(b.size());
    if (!b.classes().empty() && (qsum != b.capacity() || qmax - qmin > 1)) return "quota spread";
    if (full_max >= full_min && full_max - full_min > 1) return "class counts differ by more than one";
    return "";
}

struct BufferProperty {
    std::size_t operations = 0;
    std::size_t violations = 0;
    std::string first;
    std::size_t final_size = 0;
};

inline std::vector<float> id_images(std::size_t n, std::size_t numel, float first_id) {
    std::vector<float> px(n * numel);
    for (std::size_t i = 0; i < n; ++i) px[i * numel] = first_id + static_cast<float>(i);
    return px;
}

// Random batches, new classes arriving over time, invariants checked after every update.
inline BufferProperty run_buffer_property(std::size_t ops, std::size_t capacity, std::uint64_t seed) {
    using namespace clr;
    Rng rng(seed);
    ReplayBuffer b(capacity, 2, seed + 1);
    BufferProperty out;
    int classes = 1;
    float id = 0;
    for (std::size_t op = 0; op < ops; ++op) {
        if (classes < 12 && rng.below(700) == 0) ++classes;
        const std::size_t n = 1 + rng.below(8);
        std::vector<int> labels(n);
        for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
        memory_update(b, id_images(n, 2, id), labels, op / 1000);
        id += static_cast<float>(n);
        ++out.operations;
        auto v = buffer_violation(b);
        if (!v.empty() && out.violations++ == 0) out.first = "after update " + std::to_string(op) + ": " + v;
    }
    out.final_size = b.size();
    return out;
}

struct RetentionProperty {
    std::size_t items = 0;
    std::size_t outside_3sigma = 0;
    double max_z = 0.0;        // worst per-item deviation in units of sigma
    double max_decile_z = 0.0; // worst deviation of an arrival decile
};

// Streams N items of one class into a buffer of `capacity`, `reps` times; each
// item should survive with probability capacity/N.
inline RetentionProperty run_retention(std::size_t reps, std::size_t N, std::size_t capacity, std::uint64_t seed) {
    using namespace clr;
    std::vector<std::size_t> kept(N, 0);
    for (std::size_t r = 0; r < reps; ++r) {
        ReplayBuffer b(capacity, 1, derive_seed(seed, r));
        for (std::size_t i = 0; i < N; i += 50) {
            const std::size_t n = std::min<std::size_t>(50, N - i);
            memory_update(b, id_images(n, 1, float(i)), std::vector<int>(n, 0), 0);
        }
        for (const auto& s : b.slots(0)) ++kept[static_cast<std::size_t>(s.image[0])];
    }
    RetentionProperty out;
    out.items = N;
    const double p = double(capacity) / double(N), sigma = std::sqrt(p * (1 - p) / double(reps));
    for (std::size_t i = 0; i < N; ++i) {
        const double z = std::abs(double(kept[i]) / double(reps) - p) / sigma;
        out.outside_3sigma += z > 3.0;
        out.max_z = std::max(out.max_z, z);
    }
    const std::size_t width = N / 10;
    for (std::size_t d = 0; d < 10; ++d) {
        double f = 0;
        for (std::size_t i = d * width; i < (d + 1) * width; ++i) f += double(kept[i]) / double(reps);
        const double mean = double(width) * p, sd = std::sqrt(double(width) * p * (1 - p) / double(reps));
        out.max_decile_z = std::max(out.max_decile_z, std::abs(f - mean) / sd);
    }
    return out;
}

// Objective sequence non-increasing, endpoints recorded, pixels inside [0,1].
inline bool robust_sample_ok(const clr::RobustSample& s) {
    if (s.error || s.trace.empty() || s.trace.front() != s.initial_objective || s.trace.back() != s.final_objective)
        return false;
    if (!(s.final_objective >= 0.0f) || s.final_objective > s.initial_objective) return false;
    for (std::size_t k = 1; k < s.trace.size(); ++k)
        if (s.trace[k] > s.trace[k - 1]) return false;
    return std::all_of(s.x_cl.begin(), s.x_cl.end(), [](float v) { return v >= 0.0f && v <= 1.0f; });
}

struct GridCase {
    double grid_best = 0.0;  // exhaustive search over {0, 1/64, ..., 1}^4
    double descent = 0.0;    // objective at the optimiser's result, in double
    double reported = 0.0;   // optimiser's own final objective
    bool invariants = false;
};

// One dense layer (a 2x2 convolution over a 1x2x2 image, 3 outputs) as the oracle.
inline GridCase run_tiny_grid_case(clr::Rng& rng, std::uint64_t init_seed) {
    using namespace clr;
    Tensor w({3, 1, 2, 2}), target({1, 1, 2, 2});
    for (auto& v : w.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (auto& v : target.data) v = static_cast<float>(rng.uniform());
    FeatureFn f = [&](Graph& g, Var x) { return conv2d(x, g.constant(w), 1, 0); };

    double tf[3];
    for (int o = 0; o < 3; ++o) {
        tf[o] = 0;
        for (int p = 0; p < 4; ++p) tf[o] += double(w.data[o * 4 + p]) * target.data[p];
    }
    auto objective = [&](const double* x) {
        double s = 0;
        for (int o = 0; o < 3; ++o) {
            double v = -tf[o];
            for (int p = 0; p < 4; ++p) v += double(w.data[o * 4 + p]) * x[p];
            s += v * v;
        }
        return s;
    };
    GridCase out;
    out.grid_best = std::numeric_limits<double>::infinity();
    double x[4];
    for (int a = 0; a <= 64; ++a)
        for (int b = 0; b <= 64; ++b)
            for (int c = 0; c <= 64; ++c)
                for (int e = 0; e <= 64; ++e) {
                    x[0] = a / 64.0, x[1] = b / 64.0, x[2] = c / 64.0, x[3] = e / 64.0;
                    out.grid_best = std::min(out.grid_best, objective(x));
                }

    RobustifyConfig cfg;
    cfg.steps = 2000;
    Rng r(init_seed);
    auto s = robustify_sample(f, target, cfg, 0.0, r);
    double xs[4] = {s.x_cl[0], s.x_cl[1], s.x_cl[2], s.x_cl[3]};
    out.descent = objective(xs);
    out.reported = s.final_objective;
    out.invariants = robust_sample_ok(s);
    return out;
}

} // namespace testing
