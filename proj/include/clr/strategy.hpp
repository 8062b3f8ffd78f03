#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "clr/ewc.hpp"
#include "clr/metrics.hpp"
#include "clr/model.hpp"
#include "clr/optim.hpp"
#include "clr/replay_buffer.hpp"
#include "clr/task_stream.hpp"

namespace clr {

enum class StrategyKind { finetune, replay, ewc, multitask, oracle };

std::string strategy_name(StrategyKind kind);
StrategyKind parse_strategy(const std::string& name);

struct StrategySpec {
    StrategyKind kind = StrategyKind::finetune;
    std::size_t replay_capacity = 1000;
    double ewc_lambda = 100.0;

    /// Replay with a 1000-item buffer.
    static StrategySpec oracle() { return {StrategyKind::oracle, 1000, 0.0}; }
    bool uses_replay() const { return kind == StrategyKind::replay || kind == StrategyKind::oracle; }
    std::size_t buffer_capacity() const { return kind == StrategyKind::oracle ? 1000 : replay_capacity; }
};

struct TrainConfig {
    std::size_t epochs_per_task = 64;
    std::size_t batch_size = 256;
    double lr0 = 0.01;
    double momentum = 0.9;
    double lr_min = 0.0;
    std::uint64_t seed = 0;
    AugmentConfig augment;
    std::size_t fisher_samples = 1000;
    FisherEstimator fisher_estimator = FisherEstimator::sampled_label;

    void validate() const;
};

struct LossRecord {
    std::size_t task = 0;
    std::size_t epoch = 0;
    std::size_t step = 0; // optimizer steps taken in this task so far
    double lr = 0.0;
    double loss = 0.0;    // mean batch loss over the epoch
};

struct StrategyRun {
    std::vector<ModelSnapshot> snapshots; // one per task (multitask: one)
    AccuracyMatrix matrix;
    std::vector<LossRecord> losses;
};

/// Extra differentiable term added to the classification loss (e.g. the EWC penalty).
using PenaltyFn = std::function<Var(Graph&)>;

/// One SGD step on a batch; returns the classification loss (without penalty).
double train_step(Model& model, const Tensor& batch, std::span<const int> labels, OptimizerState& optimizer,
                  const PenaltyFn& penalty = {});

/// Stacks a memory batch under a training batch along the sample axis.
Tensor concat_batch(const Tensor& batch, const MemoryBatch& memory);

/// Retrieves B_M (same size as the batch) from items of tasks before
/// `current_task`, concatenates, augments and takes a single step with one
/// mean-reduced loss over all items.
double replay_concat_step(Model& model, const Tensor& batch, std::span<const int> labels,
                          const ReplayBuffer& buffer, OptimizerState& optimizer, Rng& rng,
                          const AugmentConfig& augment, const PenaltyFn& penalty = {},
                          std::size_t current_task = ReplayBuffer::kAllTasks);

/// Trains the model through the stream task by task, evaluating on all seen
/// tasks after each one. Multitask trains once on the union of all tasks.
StrategyRun run_strategy(const StrategySpec& spec, const TaskStream& stream, Model& model, const TrainConfig& cfg);

void write_loss_log(const std::filesystem::path& path, const std::string& run_id,
                    const std::vector<LossRecord>& losses, bool append = false);

} // namespace clr
