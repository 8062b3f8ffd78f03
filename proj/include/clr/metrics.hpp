#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "clr/model.hpp"
#include "clr/task_stream.hpp"
#include "json.hpp"

namespace clr {

// R[t][i]: accuracy on task i's test split after training through task t.
// Sequential strategies fill a lower-triangular matrix one row per task;
// joint training produces a single row covering every task.
class AccuracyMatrix {
public:
    AccuracyMatrix() = default;
    explicit AccuracyMatrix(std::size_t tasks);
    static AccuracyMatrix joint(std::vector<double> final_row);

    std::size_t tasks() const { return tasks_; }
    bool is_joint() const { return joint_; }
    const std::vector<std::vector<double>>& rows() const { return rows_; }

    /// Row for zero-based task t; must hold exactly t+1 entries in [0,1].
    void set_row(std::size_t t, std::vector<double> row);
    bool complete() const;
    const std::vector<double>& final_row() const;

    nlohmann::json to_json() const;
    static AccuracyMatrix from_json(const nlohmann::json& j, std::size_t tasks);

    bool operator==(const AccuracyMatrix&) const = default;

private:
    std::size_t tasks_ = 0;
    bool joint_ = false;
    std::vector<std::vector<double>> rows_;
};

/// ACC = (1/T) sum_i R[T][i], summed left to right.
double average_accuracy(const AccuracyMatrix& matrix);

/// Mean of row t (zero-based) of a sequential matrix: accuracy over the tasks seen so far.
double accuracy_so_far(const AccuracyMatrix& matrix, std::size_t t);

/// Accuracy on the test splits of tasks [0, upto), argmax over all logits with
/// ties going to the lowest class index. No augmentation is applied.
std::vector<double> evaluate(const Model& model, const TaskStream& stream, std::size_t upto,
                             std::size_t batch_size = 256);

/// Same, for any batch -> [n, K] logits map.
using PredictFn = std::function<Tensor(const Tensor& batch)>;
std::vector<double> evaluate(const PredictFn& predict, const TaskStream& stream, std::size_t upto,
                             std::size_t batch_size = 256);

/// Index of the largest logit in each row, lowest index on ties.
std::vector<int> argmax_rows(const Tensor& logits);

struct RunResult {
    std::string strategy;
    std::string variant; // "standard" or "clr"
    std::size_t tasks = 0;
    std::uint64_t seed = 0;
    AccuracyMatrix matrix;
    double acc = 0.0;
    std::string config_hash;
    double wallclock_s = 0.0;

    nlohmann::json to_json() const;
    static RunResult from_json(const nlohmann::json& j);
};

struct TableCell {
    std::string strategy;
    std::string variant;
    std::size_t tasks = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<double> values;
    double mean = 0.0;
    double std = 0.0; // sample standard deviation, 0 for a single seed
};

struct BenchmarkTable {
    std::vector<TableCell> cells;
    const TableCell* find(const std::string& strategy, const std::string& variant, std::size_t tasks) const;
};

struct MeanStd {
    double mean = 0.0;
    double std = 0.0;
};

/// Mean and sample (n-1) standard deviation; std is 0 when n == 1.
MeanStd mean_std(const std::vector<double>& values);

/// Groups runs by (strategy, variant, tasks), keeping first-appearance order.
BenchmarkTable aggregate(const std::vector<RunResult>& results);

} // namespace clr
