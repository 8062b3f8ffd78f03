#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clr/dataset.hpp"
#include "clr/model.hpp"
#include "clr/rng.hpp"
#include "clr/task_stream.hpp"
#include "json.hpp"

namespace clr {

enum class InitMode { uniform_noise, from_target };

std::string init_mode_name(InitMode mode);
InitMode parse_init_mode(const std::string& name);

struct RobustifyConfig {
    std::size_t steps = 500;
    double step_size = 0.1;
    InitMode init_mode = InitMode::uniform_noise;
    std::optional<double> stop_tolerance; // unset: 1e-4 * feature_dim
    std::uint64_t seed = 0;
    std::size_t batch_size = 64;          // samples optimised together; results do not depend on it

    void validate() const;
    double tolerance(std::size_t feature_dim) const;
    nlohmann::json to_json() const;
    static RobustifyConfig from_json(const nlohmann::json& j);
};

struct RobustSample {
    std::vector<float> x_cl;
    int label = 0;
    std::size_t source_index = 0;
    float initial_objective = 0.0f;
    float final_objective = 0.0f;
    std::size_t oracle_task_index = 0;
    std::size_t iterations = 0;   // accepted steps
    std::vector<float> trace;     // objective after every accepted step, starting with the initial one
    std::optional<std::string> error;
};

struct RobustDataset {
    std::array<std::size_t, 3> image_shape{3, 32, 32};
    std::vector<std::string> class_names;
    std::vector<RobustSample> samples;
    std::string oracle_hash;
    std::string source_hash;
    RobustifyConfig config;

    std::size_t size() const { return samples.size(); }
    /// Images re-quantised exactly as the binary export stores them.
    Dataset to_dataset() const;
};

/// Differentiable feature map of a frozen model.
using FeatureFn = std::function<Var(Graph&, Var)>;

FeatureFn frozen_features(const Model& oracle);

/// Descends ||f(x) - f(target)||^2 from the given starting points, one
/// independent problem per row. Each iteration tries x - eta*g clamped to
/// [0,1] with eta = step_size, step_size/2, ... (8 halvings) and accepts the
/// first candidate whose objective does not increase; if none is accepted the
/// sample stops. A non-finite objective stops that sample and records an error.
std::vector<RobustSample> robustify_batch(const FeatureFn& features, const Tensor& targets, const Tensor& starts,
                                          const RobustifyConfig& cfg, double tolerance);

/// Starting point for one sample under cfg.init_mode.
std::vector<float> initial_point(std::span<const float> target, InitMode mode, Rng& rng);

/// Single-sample entry point; throws OptimizationError on a non-finite objective.
RobustSample robustify_sample(const FeatureFn& features, const Tensor& target, const RobustifyConfig& cfg,
                              double tolerance, Rng& rng, std::size_t sample_index = 0);
RobustSample robustify_sample(const Model& oracle, std::span<const float> target, const RobustifyConfig& cfg,
                              Rng& rng, std::size_t sample_index = 0);

/// Robustifies the listed samples of `source`. Sample i uses the RNG stream
/// derive_seed(cfg.seed, i). Fails when more than 0.1% of samples error.
RobustDataset robustify_indices(const Model& oracle, const Dataset& source, std::span<const std::size_t> indices,
                                const RobustifyConfig& cfg, std::size_t oracle_task_index, std::size_t jobs = 1);

RobustDataset build_robust_dataset(const Model& oracle, const Dataset& source, const RobustifyConfig& cfg,
                                   std::size_t jobs = 1);

/// Robustifies the training samples of tasks 1..t+1 with the snapshot taken after task t.
RobustDataset extract_after_task(const ModelSnapshot& oracle, const TaskStream& stream, const RobustifyConfig& cfg,
                                 std::size_t jobs = 1);

/// Training set for the incremental schedule: every sample comes from the
/// extraction made right after its own task.
Dataset incremental_training_set(const std::vector<RobustDataset>& extractions, const TaskStream& stream);

std::string dataset_hash(const Dataset& data);

// Export: <stem>.bin in the record format plus <stem>.json holding provenance
// and per-sample objectives.
void export_robust_dataset(const RobustDataset& data, const std::filesystem::path& directory, const std::string& stem);
nlohmann::json robust_manifest(const RobustDataset& data);
/// Reads an export back; images are the quantised values (traces are not stored).
RobustDataset load_robust_dataset(const std::filesystem::path& directory, const std::string& stem);

} // namespace clr
