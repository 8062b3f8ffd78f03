#include "clr/strategy.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>

#include "clr/error.hpp"

namespace clr {

std::string strategy_name(StrategyKind kind) {
    switch (kind) {
    case StrategyKind::finetune: return "finetune";
    case StrategyKind::replay: return "replay";
    case StrategyKind::ewc: return "ewc";
    case StrategyKind::multitask: return "multitask";
    case StrategyKind::oracle: return "oracle";
    }
    return "unknown";
}

StrategyKind parse_strategy(const std::string& name) {
    for (auto k : {StrategyKind::finetune, StrategyKind::replay, StrategyKind::ewc, StrategyKind::multitask,
                   StrategyKind::oracle})
        if (strategy_name(k) == name) return k;
    throw ConfigError("unknown strategy '" + name + "'");
}

void TrainConfig::validate() const {
    if (epochs_per_task == 0) throw ConfigError("train: epochs_per_task must be positive");
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (!(lr0 > 0.0)) throw ConfigError("train: lr0 must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train: momentum must lie in [0,1)");
    if (lr_min < 0.0 || lr_min > lr0) throw ConfigError("train: lr_min must lie in [0, lr0]");
    if (augment.flip_probability < 0.0 || augment.flip_probability > 1.0)
        throw ConfigError("train: flip_probability must lie in [0,1]");
    if (fisher_samples == 0) throw ConfigError("train: fisher_samples must be positive");
}

double train_step(Model& model, const Tensor& batch, std::span<const int> labels, OptimizerState& optimizer,
                  const PenaltyFn& penalty) {
    auto& params = model.parameters();
    for (auto& p : params) p.zero_grad();
    Graph g;
    Var ce = softmax_cross_entropy(model.logits(g, g.constant(batch)), labels);
    Var loss = penalty ? add(ce, penalty(g)) : ce;
    g.backward(loss);
    sgd_momentum_step(params, optimizer);
    return ce.value().item();
}

Tensor concat_batch(const Tensor& batch, const MemoryBatch& memory) {
    if (memory.size() == 0) return batch;
    const std::size_t d = batch.numel() / batch.dim(0);
    if (memory.pixels.size() != memory.size() * d) throw InternalError("concat_batch: memory image size mismatch");
    Tensor out({batch.dim(0) + memory.size(), batch.dim(1), batch.dim(2), batch.dim(3)});
    std::copy(batch.data.begin(), batch.data.end(), out.data.begin());
    std::copy(memory.pixels.begin(), memory.pixels.end(), out.data.begin() + static_cast<long>(batch.numel()));
    return out;
}

double replay_concat_step(Model& model, const Tensor& batch, std::span<const int> labels,
                          const ReplayBuffer& buffer, OptimizerState& optimizer, Rng& rng,
                          const AugmentConfig& augment, const PenaltyFn& penalty, std::size_t current_task) {
    MemoryBatch memory = memory_retrieve(buffer, labels.size(), rng, current_task);
    Tensor joint = concat_batch(batch, memory);
    std::vector<int> joint_labels(labels.begin(), labels.end());
    joint_labels.insert(joint_labels.end(), memory.labels.begin(), memory.labels.end());
    return train_step(model, augment_batch(joint, augment, rng), joint_labels, optimizer, penalty);
}

namespace {

struct Trainer {
    const StrategySpec& spec;
    const TaskStream& stream;
    Model& model;
    const TrainConfig& cfg;
    Rng rng;
    std::vector<LossRecord> losses;

    Trainer(const StrategySpec& s, const TaskStream& st, Model& m, const TrainConfig& c)
        : spec(s), stream(st), model(m), cfg(c), rng(derive_seed(c.seed, 1)) {}

    // Trains on one index set with a fresh cosine schedule; the hook runs after every step.
    void train_phase(std::size_t task, std::vector<std::size_t> indices, ReplayBuffer* buffer,
                     const PenaltyFn& penalty) {
        const std::size_t n = indices.size();
        const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
        LrSchedule schedule{cfg.lr0, steps_per_epoch * cfg.epochs_per_task, cfg.lr_min};
        OptimizerState opt = make_optimizer_state(model.parameters(), cfg.lr0, cfg.momentum);
        const Dataset& data = *stream.train;
        std::size_t step = 0;
        for (std::size_t epoch = 0; epoch < cfg.epochs_per_task; ++epoch) {
            rng.shuffle(indices.begin(), indices.end());
            double epoch_loss = 0.0;
            for (std::size_t start = 0; start < n; start += cfg.batch_size) {
                std::span<const std::size_t> chunk(indices.data() + start, std::min(cfg.batch_size, n - start));
                Tensor batch = data.batch(chunk);
                std::vector<int> labels = data.batch_labels(chunk);
                opt.lr = cosine_lr(step, schedule);
                double loss = buffer ? replay_concat_step(model, batch, labels, *buffer, opt, rng, cfg.augment, penalty, task)
                                     : train_step(model, augment_batch(batch, cfg.augment, rng), labels, opt, penalty);
                if (!std::isfinite(loss))
                    throw RunError("training diverged: non-finite loss in task " + std::to_string(task + 1) +
                                   ", epoch " + std::to_string(epoch + 1));
                if (buffer) memory_update(*buffer, batch.data, labels, task);
                epoch_loss += loss;
                ++step;
            }
            losses.push_back({task, epoch, step, opt.lr, epoch_loss / static_cast<double>(steps_per_epoch)});
        }
    }
};

} // namespace

StrategyRun run_strategy(const StrategySpec& spec, const TaskStream& stream, Model& model, const TrainConfig& cfg) {
    cfg.validate();
    if (stream.size() == 0) throw ConfigError("run_strategy: empty task stream");
    for (const auto& t : stream.tasks)
        if (t.train_indices.empty())
            throw ConfigError("run_strategy: task " + std::to_string(t.id + 1) + " has no training samples");

    Trainer trainer(spec, stream, model, cfg);
    StrategyRun run;
    model.set_mode(ModelMode::train);
    const std::size_t T = stream.size();

    if (spec.kind == StrategyKind::multitask) {
        std::vector<std::size_t> all;
        for (const auto& t : stream.tasks) all.insert(all.end(), t.train_indices.begin(), t.train_indices.end());
        trainer.train_phase(T - 1, std::move(all), nullptr, {});
        model.set_mode(ModelMode::eval);
        run.matrix = AccuracyMatrix::joint(evaluate(model, stream, T));
        run.snapshots.push_back(take_snapshot(model, T - 1));
        run.losses = std::move(trainer.losses);
        return run;
    }

    std::unique_ptr<ReplayBuffer> buffer;
    if (spec.uses_replay())
        buffer = std::make_unique<ReplayBuffer>(spec.buffer_capacity(), stream.train->image_numel(),
                                                derive_seed(cfg.seed, 2));
    EwcState ewc{spec.ewc_lambda, {}};
    PenaltyFn penalty;
    if (spec.kind == StrategyKind::ewc)
        penalty = [&](Graph& g) { return ewc_penalty(g, model.parameters(), ewc); };

    run.matrix = AccuracyMatrix(T);
    for (std::size_t t = 0; t < T; ++t) {
        model.set_mode(ModelMode::train);
        trainer.train_phase(t, stream.tasks[t].train_indices, buffer.get(),
                            ewc.tasks.empty() ? PenaltyFn{} : penalty);
        model.set_mode(ModelMode::eval);
        run.matrix.set_row(t, evaluate(model, stream, t + 1));
        run.snapshots.push_back(take_snapshot(model, t));
        if (spec.kind == StrategyKind::ewc) {
            Rng fisher_rng(derive_seed(cfg.seed, 100 + t));
            ewc.tasks.push_back(ewc_consolidate(
                model.parameters(), [&](Graph& g, Var x) { return model.logits(g, x); }, *stream.train,
                stream.tasks[t].train_indices, cfg.fisher_samples, fisher_rng, cfg.fisher_estimator));
        }
    }
    run.losses = std::move(trainer.losses);
    return run;
}

void write_loss_log(const std::filesystem::path& path, const std::string& run_id,
                    const std::vector<LossRecord>& losses, bool append) {
    const bool header = !append || !std::filesystem::exists(path);
    std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
    if (!out) throw IoError("cannot write loss log " + path.string());
    if (header) out << "run_id,task,epoch,step,lr,loss\n";
    out << std::setprecision(9);
    for (const auto& r : losses)
        out << run_id << ',' << r.task + 1 << ',' << r.epoch + 1 << ',' << r.step << ',' << r.lr << ',' << r.loss
            << '\n';
}

} // namespace clr
