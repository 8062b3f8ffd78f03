#include "clr/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "clr/error.hpp"

namespace clr {

AccuracyMatrix::AccuracyMatrix(std::size_t tasks) : tasks_(tasks) {
    if (tasks == 0) throw ConfigError("accuracy matrix: need at least one task");
}

AccuracyMatrix AccuracyMatrix::joint(std::vector<double> final_row) {
    AccuracyMatrix m(final_row.size());
    for (double v : final_row)
        if (!(v >= 0.0 && v <= 1.0)) throw UsageError("accuracy matrix: entry outside [0,1]");
    m.joint_ = true;
    m.rows_.push_back(std::move(final_row));
    return m;
}

void AccuracyMatrix::set_row(std::size_t t, std::vector<double> row) {
    if (joint_) throw UsageError("accuracy matrix: joint matrix has a single row");
    if (t >= tasks_) throw UsageError("accuracy matrix: row " + std::to_string(t) + " beyond task count");
    if (t != rows_.size()) throw UsageError("accuracy matrix: rows must be filled in task order");
    if (row.size() != t + 1)
        throw UsageError("accuracy matrix: row " + std::to_string(t) + " needs " + std::to_string(t + 1) +
                         " entries, got " + std::to_string(row.size()));
    for (double v : row)
        if (!(v >= 0.0 && v <= 1.0)) throw UsageError("accuracy matrix: entry outside [0,1]");
    rows_.push_back(std::move(row));
}

bool AccuracyMatrix::complete() const {
    return tasks_ > 0 && (joint_ ? rows_.size() == 1 : rows_.size() == tasks_);
}

const std::vector<double>& AccuracyMatrix::final_row() const {
    if (!complete()) throw UsageError("accuracy matrix: final row incomplete");
    return rows_.back();
}

nlohmann::json AccuracyMatrix::to_json() const { return rows_; }

AccuracyMatrix AccuracyMatrix::from_json(const nlohmann::json& j, std::size_t tasks) {
    auto rows = j.get<std::vector<std::vector<double>>>();
    if (rows.size() == 1 && rows[0].size() == tasks && tasks > 1) return joint(std::move(rows[0]));
    AccuracyMatrix m(tasks);
    for (std::size_t t = 0; t < rows.size(); ++t) m.set_row(t, std::move(rows[t]));
    return m;
}

double average_accuracy(const AccuracyMatrix& matrix) {
    const auto& row = matrix.final_row();
    if (row.size() != matrix.tasks()) throw UsageError("average_accuracy: final row incomplete");
    double s = 0.0;
    for (double v : row) s += v;
    return s / static_cast<double>(row.size());
}

double accuracy_so_far(const AccuracyMatrix& matrix, std::size_t t) {
    if (matrix.is_joint() || t >= matrix.rows().size())
        throw UsageError("accuracy_so_far: row " + std::to_string(t) + " unavailable");
    double s = 0.0;
    for (double v : matrix.rows()[t]) s += v;
    return s / static_cast<double>(t + 1);
}

std::vector<int> argmax_rows(const Tensor& logits) {
    const std::size_t N = logits.dim(0), K = logits.dim(1);
    std::vector<int> out(N);
    for (std::size_t n = 0; n < N; ++n) {
        const float* row = logits.data.data() + n * K;
        out[n] = static_cast<int>(std::max_element(row, row + K) - row);
    }
    return out;
}

std::vector<double> evaluate(const Model& model, const TaskStream& stream, std::size_t upto,
                             std::size_t batch_size) {
    return evaluate([&](const Tensor& b) { return model.predict(b); }, stream, upto, batch_size);
}

std::vector<double> evaluate(const PredictFn& predict, const TaskStream& stream, std::size_t upto,
                             std::size_t batch_size) {
    if (upto == 0 || upto > stream.size()) throw UsageError("evaluate: task count out of range");
    std::vector<double> row;
    for (std::size_t t = 0; t < upto; ++t) {
        const auto& idx = stream.tasks[t].test_indices;
        if (idx.empty()) throw ConfigError("evaluate: task " + std::to_string(t + 1) + " has an empty test split");
        std::size_t correct = 0;
        for (std::size_t start = 0; start < idx.size(); start += batch_size) {
            std::span<const std::size_t> chunk(idx.data() + start, std::min(batch_size, idx.size() - start));
            auto pred = argmax_rows(predict(stream.test->batch(chunk)));
            for (std::size_t k = 0; k < chunk.size(); ++k)
                if (pred[k] == stream.test->labels[chunk[k]]) ++correct;
        }
        row.push_back(static_cast<double>(correct) / static_cast<double>(idx.size()));
    }
    return row;
}

nlohmann::json RunResult::to_json() const {
    return {{"strategy", strategy}, {"variant", variant},         {"tasks", tasks},
            {"seed", seed},         {"matrix", matrix.to_json()}, {"acc", acc},
            {"config_hash", config_hash}, {"wallclock_s", wallclock_s}};
}

RunResult RunResult::from_json(const nlohmann::json& j) {
    RunResult r;
    try {
        r.strategy = j.at("strategy").get<std::string>();
        r.variant = j.at("variant").get<std::string>();
        r.tasks = j.at("tasks").get<std::size_t>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.matrix = AccuracyMatrix::from_json(j.at("matrix"), r.tasks);
        r.acc = j.at("acc").get<double>();
        r.config_hash = j.at("config_hash").get<std::string>();
        r.wallclock_s = j.at("wallclock_s").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("results: malformed run record: ") + e.what());
    }
    if (!(std::abs(average_accuracy(r.matrix) - r.acc) <= 1e-9))
        throw DataError("results: run " + r.strategy + "/" + r.variant + " seed " + std::to_string(r.seed) +
                        " stores acc " + std::to_string(r.acc) + " but its matrix gives " +
                        std::to_string(average_accuracy(r.matrix)));
    return r;
}

const TableCell* BenchmarkTable::find(const std::string& strategy, const std::string& variant,
                                      std::size_t tasks) const {
    for (const auto& c : cells)
        if (c.strategy == strategy && c.variant == variant && c.tasks == tasks) return &c;
    return nullptr;
}

MeanStd mean_std(const std::vector<double>& values) {
    if (values.empty()) throw UsageError("mean_std: no values");
    double s = 0.0;
    for (double v : values) s += v;
    const double mean = s / static_cast<double>(values.size());
    if (values.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

BenchmarkTable aggregate(const std::vector<RunResult>& results) {
    BenchmarkTable table;
    for (const auto& r : results) {
        if (r.matrix.tasks() != r.tasks)
            throw DataError("aggregate: run " + r.strategy + "/" + r.variant + " seed " + std::to_string(r.seed) +
                            " records " + std::to_string(r.tasks) + " tasks but its matrix has " +
                            std::to_string(r.matrix.tasks()));
        auto it = std::find_if(table.cells.begin(), table.cells.end(), [&](const TableCell& c) {
            return c.strategy == r.strategy && c.variant == r.variant && c.tasks == r.tasks;
        });
        if (it == table.cells.end()) {
            table.cells.push_back({r.strategy, r.variant, r.tasks, {}, {}, 0.0, 0.0});
            it = table.cells.end() - 1;
        }
        it->seeds.push_back(r.seed);
        it->values.push_back(r.acc);
    }
    for (auto& c : table.cells) {
        auto ms = mean_std(c.values);
        c.mean = ms.mean;
        c.std = ms.std;
    }
    return table;
}

} // namespace clr
