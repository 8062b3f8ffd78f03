#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "clr/metrics.hpp"
#include "clr/model.hpp"
#include "clr/robustify.hpp"
#include "clr/strategy.hpp"
#include "json.hpp"

namespace clr {

inline constexpr const char* kCodeVersion = "clrobust-1";

enum class Profile { desk, paper };
enum class ExtractionMode { final_task, incremental };

Profile parse_profile(const std::string& name);
std::string profile_name(Profile p);
std::string extraction_mode_name(ExtractionMode m);

struct DatasetSource {
    enum class Kind { synthetic, cifar10 } kind = Kind::synthetic;
    SyntheticSpec synthetic;
    std::filesystem::path path; // cifar10 binary directory
};

struct ExperimentConfig {
    DatasetSource dataset;
    std::vector<std::size_t> task_counts;
    std::vector<std::string> strategies;
    std::vector<std::uint64_t> seeds;
    ModelConfig model;  // input_shape and num_classes follow the dataset; seed follows the cell
    TrainConfig train;  // seed follows the cell
    std::size_t replay_capacity = 1000;
    double ewc_lambda = 100.0;
    std::optional<std::uint64_t> oracle_seed; // unset: first entry of seeds
    std::optional<std::uint64_t> class_order_seed;
    RobustifyConfig robustify;
    ExtractionMode extraction_mode = ExtractionMode::final_task;
    std::filesystem::path output_dir = "clr-output";
    bool record_wallclock = false;
    std::size_t jobs = 1;

    std::uint64_t effective_oracle_seed() const { return oracle_seed.value_or(seeds.front()); }
};

/// Profile defaults. paper: CIFAR-10 recipe; desk: synthetic fixture and small model.
ExperimentConfig default_config(Profile profile);

/// Reads a JSON config over the profile defaults. Unknown keys, type
/// mismatches and invalid values raise ConfigError naming the key path and line.
ExperimentConfig parse_config_text(std::string_view text, Profile profile, const std::string& source = "<config>");
ExperimentConfig parse_config(const std::filesystem::path& path, Profile profile);

/// Checks everything that can be checked before training, including that every
/// task count partitions the classes.
void validate_config(const ExperimentConfig& cfg);

nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Content-addressed store below <root>; keys include kCodeVersion.
class ArtifactCache {
public:
    explicit ArtifactCache(std::filesystem::path root) : root_(std::move(root)) {}
    static std::string key(const nlohmann::json& subset);
    std::filesystem::path dir(const std::string& kind, const std::string& key) const;
    /// An entry is complete once its "complete" marker exists.
    bool has(const std::string& kind, const std::string& key) const;
    /// Creates a fresh staging directory for an entry.
    std::filesystem::path begin(const std::string& kind, const std::string& key) const;
    /// Publishes a staged entry (rename into place) and returns its final path.
    std::filesystem::path commit(const std::string& kind, const std::string& key,
                                 const std::filesystem::path& staging) const;
    const std::filesystem::path& root() const { return root_; }

private:
    std::filesystem::path root_;
};

struct LoadedData {
    std::shared_ptr<const Dataset> train, test;
};

LoadedData load_data(const ExperimentConfig& cfg);
TaskStream make_stream(const ExperimentConfig& cfg, const LoadedData& data, std::size_t tasks);
ModelConfig model_config_for(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed);

struct OracleArtifacts {
    std::size_t tasks = 0;
    std::string key;
    std::vector<ModelSnapshot> snapshots;
    AccuracyMatrix matrix;
    bool cache_hit = false;
};

struct RobustArtifacts {
    std::size_t tasks = 0;
    std::string key;
    std::filesystem::path directory;
    Dataset training_set; // quantised D_R used for clr cells
    bool cache_hit = false;
};

std::vector<OracleArtifacts> cmd_train_oracle(const ExperimentConfig& cfg, std::ostream& log);
std::vector<RobustArtifacts> cmd_build_robust(const ExperimentConfig& cfg, std::ostream& log);
std::vector<RunResult> cmd_benchmark(const ExperimentConfig& cfg, std::ostream& log);
/// Re-aggregates results.json, rewrites the report files and prints the table.
/// Throws UsageError when there are no runs.
BenchmarkTable cmd_report(const ExperimentConfig& cfg, std::ostream& out);

} // namespace clr
