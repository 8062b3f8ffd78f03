#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "clr/dataset.hpp"
#include "clr/rng.hpp"

namespace clr {

struct Task {
    std::size_t id = 0; // zero-based position in the stream
    std::vector<int> classes;
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> test_indices;
};

/// Class-incremental sequence of tasks over a shared train/test pair.
struct TaskStream {
    std::shared_ptr<const Dataset> train;
    std::shared_ptr<const Dataset> test;
    std::vector<Task> tasks;

    std::size_t size() const { return tasks.size(); }
    /// Same tasks with the training images swapped for `replacement`, which must
    /// hold the same labels in the same order (e.g. a robustified copy).
    TaskStream with_train(std::shared_ptr<const Dataset> replacement) const;
    /// Throws InternalError if class sets overlap, miss a class, or samples are misplaced.
    void check_invariants() const;
};

/// Class partition for K classes into T tasks. T == K-1 gives {0,1} then one
/// class per task; otherwise K/T classes per task in ascending order.
std::vector<std::vector<int>> cil_class_partition(std::size_t num_classes, std::size_t num_tasks,
                                                  std::optional<std::uint64_t> shuffle_seed = std::nullopt);

/// Builds the stream. With shuffle_seed set, the class order is permuted before partitioning.
TaskStream make_cil_splits(std::shared_ptr<const Dataset> train, std::shared_ptr<const Dataset> test,
                           std::size_t num_tasks, std::optional<std::uint64_t> shuffle_seed = std::nullopt);

struct AugmentConfig {
    std::size_t crop_padding = 4;
    double flip_probability = 0.5;
    bool enabled = true;
};

/// Per sample: zero-pad, random crop back to H x W, then horizontal flip.
Tensor augment_batch(const Tensor& batch, const AugmentConfig& config, Rng& rng);

} // namespace clr
