#include "clr/task_stream.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "clr/error.hpp"

namespace clr {

std::vector<std::vector<int>> cil_class_partition(std::size_t K, std::size_t T,
                                                  std::optional<std::uint64_t> shuffle_seed) {
    if (K < 2) throw ConfigError("task split: need at least 2 classes");
    if (T == 0 || T > K) throw ConfigError("task split: " + std::to_string(T) + " tasks for " +
                                           std::to_string(K) + " classes");
    std::vector<int> order(K);
    std::iota(order.begin(), order.end(), 0);
    if (shuffle_seed) {
        Rng rng(*shuffle_seed);
        rng.shuffle(order.begin(), order.end());
    }
    std::vector<std::vector<int>> parts;
    if (T == K - 1 && T > 1) {
        parts.push_back({order[0], order[1]});
        for (std::size_t k = 2; k < K; ++k) parts.push_back({order[k]});
        return parts;
    }
    if (K % T != 0)
        throw ConfigError("task split: " + std::to_string(K) + " classes cannot be split evenly into " +
                          std::to_string(T) + " tasks");
    const std::size_t per = K / T;
    for (std::size_t t = 0; t < T; ++t)
        parts.emplace_back(order.begin() + static_cast<long>(t * per), order.begin() + static_cast<long>((t + 1) * per));
    return parts;
}

TaskStream make_cil_splits(std::shared_ptr<const Dataset> train, std::shared_ptr<const Dataset> test,
                           std::size_t T, std::optional<std::uint64_t> shuffle_seed) {
    if (!train || !test) throw UsageError("task split: missing dataset");
    if (train->num_classes() != test->num_classes())
        throw ConfigError("task split: train and test class counts differ");
    const std::size_t K = train->num_classes();
    auto parts = cil_class_partition(K, T, shuffle_seed);
    std::vector<std::size_t> task_of(K);
    for (std::size_t t = 0; t < parts.size(); ++t)
        for (int c : parts[t]) task_of[static_cast<std::size_t>(c)] = t;

    TaskStream s;
    s.train = train;
    s.test = test;
    for (std::size_t t = 0; t < parts.size(); ++t) {
        Task task;
        task.id = t;
        task.classes = parts[t];
        std::sort(task.classes.begin(), task.classes.end());
        s.tasks.push_back(std::move(task));
    }
    for (std::size_t i = 0; i < train->size(); ++i)
        s.tasks[task_of.at(static_cast<std::size_t>(train->labels[i]))].train_indices.push_back(i);
    for (std::size_t i = 0; i < test->size(); ++i)
        s.tasks[task_of.at(static_cast<std::size_t>(test->labels[i]))].test_indices.push_back(i);
    return s;
}

TaskStream TaskStream::with_train(std::shared_ptr<const Dataset> replacement) const {
    if (!replacement || replacement->labels != train->labels)
        throw DataError("task stream: replacement training set must keep labels and order");
    TaskStream s = *this;
    s.train = std::move(replacement);
    return s;
}

void TaskStream::check_invariants() const {
    std::set<int> seen;
    for (const auto& t : tasks)
        for (int c : t.classes)
            if (!seen.insert(c).second) throw InternalError("task stream: class " + std::to_string(c) + " repeats");
    if (seen.size() != train->num_classes()) throw InternalError("task stream: classes not covered");
    auto check = [&](const Dataset& d, auto member) {
        std::vector<int> hits(d.size(), 0);
        for (const auto& t : tasks)
            for (auto i : t.*member) {
                if (!std::binary_search(t.classes.begin(), t.classes.end(), d.labels.at(i)))
                    throw InternalError("task stream: sample " + std::to_string(i) + " in wrong task");
                ++hits[i];
            }
        for (std::size_t i = 0; i < hits.size(); ++i)
            if (hits[i] != 1) throw InternalError("task stream: sample " + std::to_string(i) + " not placed once");
    };
    check(*train, &Task::train_indices);
    check(*test, &Task::test_indices);
}

Tensor augment_batch(const Tensor& batch, const AugmentConfig& cfg, Rng& rng) {
    if (!cfg.enabled) return batch;
    if (cfg.flip_probability < 0.0 || cfg.flip_probability > 1.0)
        throw ConfigError("augment: flip_probability must lie in [0,1]");
    const std::size_t N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
    const std::size_t pad = cfg.crop_padding;
    Tensor out(batch.shape);
    for (std::size_t n = 0; n < N; ++n) {
        const std::size_t oy = pad ? rng.below(2 * pad + 1) : 0;
        const std::size_t ox = pad ? rng.below(2 * pad + 1) : 0;
        const bool flip = cfg.flip_probability > 0.0 && rng.bernoulli(cfg.flip_probability);
        for (std::size_t c = 0; c < C; ++c) {
            const float* src = batch.data.data() + (n * C + c) * H * W;
            float* dst = out.data.data() + (n * C + c) * H * W;
            for (std::size_t y = 0; y < H; ++y) {
                // Row y of the crop is row y + oy - pad of the source (zero outside).
                const long sy = static_cast<long>(y + oy) - static_cast<long>(pad);
                for (std::size_t x = 0; x < W; ++x) {
                    const std::size_t cx = flip ? W - 1 - x : x;
                    const long sx = static_cast<long>(cx + ox) - static_cast<long>(pad);
                    const bool inside = sy >= 0 && sy < static_cast<long>(H) && sx >= 0 && sx < static_cast<long>(W);
                    dst[y * W + x] = inside ? src[static_cast<std::size_t>(sy) * W + static_cast<std::size_t>(sx)] : 0.0f;
                }
            }
        }
    }
    return out;
}

} // namespace clr
