#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "clr/autograd.hpp"
#include "json.hpp"

namespace clr {

struct ModelConfig {
    std::array<std::size_t, 3> input_shape{3, 32, 32}; // C, H, W
    std::size_t num_classes = 10;
    std::vector<std::size_t> widths{16, 32, 64};
    std::vector<std::size_t> blocks_per_stage{2, 2, 2};
    std::size_t feature_dim = 64;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    bool operator==(const ModelConfig&) const = default;
};

enum class ModelMode { train, eval };

// Residual classifier without normalization layers:
//
//   stem    conv3x3(C -> widths[0]) + relu
//   stage s blocks_per_stage[s] basic blocks of width widths[s]; the first
//           block of every stage after the first uses stride 2
//   block   relu(conv3x3(relu(conv3x3(x, stride))) + skip), where skip is a
//           1x1 strided projection when width or resolution changes
//   pool    global average pooling -> last realised width c
//   embed   dense(c -> feature_dim) + relu, only when feature_dim != c
//   head    dense(feature_dim -> num_classes)
//
// Convolutions carry no bias. A stage with zero blocks is skipped entirely.
class Model {
public:
    explicit Model(ModelConfig config);

    const ModelConfig& config() const { return config_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    std::size_t parameter_count() const;
    Parameter& parameter(const std::string& name);

    ModelMode mode() const { return mode_; }
    void set_mode(ModelMode m) { mode_ = m; }

    /// Trainable forward passes: gradients flow into the parameters.
    Var logits(Graph& g, Var input);
    Var features(Graph& g, Var input);

    /// Frozen forward passes: parameters enter the graph as constants.
    Var logits_frozen(Graph& g, Var input) const;
    Var features_frozen(Graph& g, Var input) const;

    /// Classification layer applied to an embedding.
    Var head(Graph& g, Var features);

    /// Gradient-free logits for evaluation.
    Tensor predict(const Tensor& batch) const;

    /// Checks a batch against the configured input shape (throws DataError).
    void check_batch(const Tensor& batch) const;

private:
    struct Block {
        std::size_t conv1, conv2;
        std::size_t proj; // npos when the skip is the identity
        std::size_t stride;
    };

    template <typename Bind>
    Var forward_features(Graph& g, Var input, Bind bind) const;

    std::size_t add_param(std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out,
                          std::uint64_t& stream);
    std::size_t add_zero_param(std::string name, Shape shape);

    ModelConfig config_;
    std::vector<Parameter> params_;
    ModelMode mode_ = ModelMode::train;
    std::size_t stem_ = 0;
    std::vector<Block> blocks_;
    std::size_t embed_w_ = static_cast<std::size_t>(-1), embed_b_ = static_cast<std::size_t>(-1);
    std::size_t head_w_ = 0, head_b_ = 0;
};

/// Glorot-uniform weights, zero biases, deterministic in config.seed.
Model build_model(const ModelConfig& config);

/// Closed-form parameter count of the architecture above.
std::size_t count_parameters(const ModelConfig& config);

struct ModelSnapshot {
    ModelConfig config;
    std::vector<std::string> names;
    std::vector<std::vector<float>> values;
    std::size_t task_index = 0;
};

ModelSnapshot take_snapshot(const Model& model, std::size_t task_index);
Model restore(const ModelSnapshot& snapshot);

// File layout: "CLRS", u32 version, u32 header length, canonical JSON header
// (config, task index, parameter names and sizes), then little-endian float32
// values of every parameter in declaration order.
void save_snapshot(const ModelSnapshot& snapshot, const std::filesystem::path& path);
ModelSnapshot load_snapshot(const std::filesystem::path& path);
std::vector<char> encode_snapshot(const ModelSnapshot& snapshot);
ModelSnapshot decode_snapshot(const std::vector<char>& bytes);

/// FNV-1a over parameter bytes; used to show a model was left untouched.
std::uint64_t parameter_hash(const Model& model);

} // namespace clr
