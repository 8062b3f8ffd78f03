#include "clr/model.hpp"

#include <cmath>
#include <fstream>

#include "clr/error.hpp"
#include "clr/hash.hpp"
#include "clr/rng.hpp"

namespace clr {

namespace {

constexpr std::size_t npos = static_cast<std::size_t>(-1);
constexpr char kMagic[4] = {'C', 'L', 'R', 'S'};
constexpr std::uint32_t kSnapshotVersion = 1;

} // namespace

void ModelConfig::validate() const {
    if (num_classes < 2) throw ConfigError("model: num_classes must be at least 2");
    if (widths.empty() || widths.size() != blocks_per_stage.size())
        throw ConfigError("model: widths and blocks_per_stage must be non-empty and of equal length");
    for (auto w : widths)
        if (w == 0) throw ConfigError("model: stage widths must be positive");
    if (feature_dim == 0) throw ConfigError("model: feature_dim must be positive");
    for (auto d : input_shape)
        if (d == 0) throw ConfigError("model: input_shape entries must be positive");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"input_shape", input_shape},   {"num_classes", num_classes},
            {"widths", widths},             {"blocks_per_stage", blocks_per_stage},
            {"feature_dim", feature_dim},   {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    try {
        c.input_shape = j.at("input_shape").get<std::array<std::size_t, 3>>();
        c.num_classes = j.at("num_classes").get<std::size_t>();
        c.widths = j.at("widths").get<std::vector<std::size_t>>();
        c.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<std::size_t>>();
        c.feature_dim = j.at("feature_dim").get<std::size_t>();
        c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
}

std::size_t Model::add_param(std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out,
                             std::uint64_t& stream) {
    Tensor t(std::move(shape));
    Rng rng(derive_seed(config_.seed, stream++));
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-limit, limit));
    params_.emplace_back(std::move(name), std::move(t));
    return params_.size() - 1;
}

std::size_t Model::add_zero_param(std::string name, Shape shape) {
    params_.emplace_back(std::move(name), Tensor(std::move(shape)));
    return params_.size() - 1;
}

Model::Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    std::uint64_t stream = 0;
    const std::size_t cin = config_.input_shape[0];
    std::size_t width = config_.widths[0];
    stem_ = add_param("stem.conv", {width, cin, 3, 3}, cin * 9, width * 9, stream);
    for (std::size_t s = 0; s < config_.widths.size(); ++s) {
        const std::size_t out = config_.widths[s];
        for (std::size_t b = 0; b < config_.blocks_per_stage[s]; ++b) {
            const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
            const std::string prefix = "stage" + std::to_string(s) + ".block" + std::to_string(b);
            Block blk{};
            blk.stride = stride;
            blk.conv1 = add_param(prefix + ".conv1", {out, width, 3, 3}, width * 9, out * 9, stream);
            blk.conv2 = add_param(prefix + ".conv2", {out, out, 3, 3}, out * 9, out * 9, stream);
            blk.proj = (stride != 1 || width != out)
                           ? add_param(prefix + ".proj", {out, width, 1, 1}, width, out, stream)
                           : npos;
            blocks_.push_back(blk);
            width = out;
        }
    }
    if (config_.feature_dim != width) {
        embed_w_ = add_param("embed.weight", {width, config_.feature_dim}, width, config_.feature_dim, stream);
        embed_b_ = add_zero_param("embed.bias", {config_.feature_dim});
    }
    head_w_ = add_param("head.weight", {config_.feature_dim, config_.num_classes}, config_.feature_dim,
                        config_.num_classes, stream);
    head_b_ = add_zero_param("head.bias", {config_.num_classes});
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

Parameter& Model::parameter(const std::string& name) {
    for (auto& p : params_)
        if (p.name == name) return p;
    throw UsageError("model has no parameter '" + name + "'");
}

void Model::check_batch(const Tensor& batch) const {
    const auto& s = config_.input_shape;
    if (batch.rank() != 4 || batch.dim(1) != s[0] || batch.dim(2) != s[1] || batch.dim(3) != s[2])
        throw DataError("model: batch shape " + shape_str(batch.shape) + " does not match input [N," +
                        std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) + "]");
}

template <typename Bind>
Var Model::forward_features(Graph& g, Var input, Bind bind) const {
    check_batch(input.value());
    Var centred = add(input, g.constant(Tensor::filled(input.shape(), -0.5f)));
    Var x = relu(conv2d(centred, bind(stem_), 1, 1));
    for (const auto& blk : blocks_) {
        Var h = relu(conv2d(x, bind(blk.conv1), blk.stride, 1));
        h = conv2d(h, bind(blk.conv2), 1, 1);
        Var skip = blk.proj == npos ? x : conv2d(x, bind(blk.proj), blk.stride, 0);
        x = relu(add(h, skip));
    }
    Var f = global_avg_pool(x);
    if (embed_w_ != npos) f = relu(dense(f, bind(embed_w_), bind(embed_b_)));
    return f;
}

Var Model::features(Graph& g, Var input) {
    return forward_features(g, input, [&](std::size_t i) { return g.parameter(params_[i]); });
}

Var Model::head(Graph& g, Var f) {
    return dense(f, g.parameter(params_[head_w_]), g.parameter(params_[head_b_]));
}

Var Model::logits(Graph& g, Var input) { return head(g, features(g, input)); }

Var Model::features_frozen(Graph& g, Var input) const {
    return forward_features(g, input, [&](std::size_t i) { return g.constant(params_[i].value); });
}

Var Model::logits_frozen(Graph& g, Var input) const {
    Var f = features_frozen(g, input);
    return dense(f, g.constant(params_[head_w_].value), g.constant(params_[head_b_].value));
}

Tensor Model::predict(const Tensor& batch) const {
    Graph g;
    return logits_frozen(g, g.constant(batch)).value();
}

Model build_model(const ModelConfig& config) { return Model(config); }

std::size_t count_parameters(const ModelConfig& c) {
    c.validate();
    std::size_t width = c.widths[0];
    std::size_t n = 9 * c.input_shape[0] * width;
    for (std::size_t s = 0; s < c.widths.size(); ++s)
        for (std::size_t b = 0; b < c.blocks_per_stage[s]; ++b) {
            const std::size_t out = c.widths[s];
            const bool proj = (s > 0 && b == 0) || width != out;
            n += 9 * width * out + 9 * out * out + (proj ? width * out : 0);
            width = out;
        }
    if (c.feature_dim != width) n += width * c.feature_dim + c.feature_dim;
    return n + c.feature_dim * c.num_classes + c.num_classes;
}

ModelSnapshot take_snapshot(const Model& model, std::size_t task_index) {
    ModelSnapshot s;
    s.config = model.config();
    s.task_index = task_index;
    for (const auto& p : model.parameters()) {
        s.names.push_back(p.name);
        s.values.push_back(p.value.data);
    }
    return s;
}

Model restore(const ModelSnapshot& snapshot) {
    Model m(snapshot.config);
    auto& params = m.parameters();
    if (params.size() != snapshot.values.size())
        throw DataError("snapshot: parameter count " + std::to_string(snapshot.values.size()) +
                        " does not match architecture (" + std::to_string(params.size()) + ")");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].name != snapshot.names[i] || params[i].value.numel() != snapshot.values[i].size())
            throw DataError("snapshot: parameter '" + snapshot.names[i] + "' does not match architecture");
        params[i].value.data = snapshot.values[i];
    }
    m.set_mode(ModelMode::eval);
    return m;
}

std::vector<char> encode_snapshot(const ModelSnapshot& s) {
    nlohmann::json header;
    header["config"] = s.config.to_json();
    header["task_index"] = s.task_index;
    nlohmann::json params = nlohmann::json::array();
    for (std::size_t i = 0; i < s.names.size(); ++i)
        params.push_back({{"name", s.names[i]}, {"size", s.values[i].size()}});
    header["parameters"] = params;
    const std::string text = header.dump();

    std::vector<char> out(kMagic, kMagic + 4);
    append_pod(out, kSnapshotVersion);
    append_pod(out, static_cast<std::uint32_t>(text.size()));
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& v : s.values) {
        const char* p = reinterpret_cast<const char*>(v.data());
        out.insert(out.end(), p, p + v.size() * sizeof(float));
    }
    return out;
}

ModelSnapshot decode_snapshot(const std::vector<char>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw DataError("snapshot: missing CLRS magic");
    std::uint32_t version = 0, len = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    std::memcpy(&len, bytes.data() + 8, 4);
    if (version != kSnapshotVersion)
        throw DataError("snapshot: unsupported format version " + std::to_string(version));
    if (bytes.size() < 12 + static_cast<std::size_t>(len)) throw DataError("snapshot: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + len);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("snapshot: bad header: ") + e.what());
    }
    ModelSnapshot s;
    s.config = ModelConfig::from_json(header.at("config"));
    s.task_index = header.at("task_index").get<std::size_t>();
    std::size_t offset = 12 + len;
    for (const auto& p : header.at("parameters")) {
        auto n = p.at("size").get<std::size_t>();
        if (offset + n * sizeof(float) > bytes.size())
            throw DataError("snapshot: truncated at parameter '" + p.at("name").get<std::string>() + "'");
        std::vector<float> v(n);
        std::memcpy(v.data(), bytes.data() + offset, n * sizeof(float));
        offset += n * sizeof(float);
        s.names.push_back(p.at("name").get<std::string>());
        s.values.push_back(std::move(v));
    }
    if (offset != bytes.size()) throw DataError("snapshot: trailing bytes after parameters");
    return s;
}

void save_snapshot(const ModelSnapshot& snapshot, const std::filesystem::path& path) {
    auto bytes = encode_snapshot(snapshot);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write snapshot " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing snapshot " + path.string());
}

ModelSnapshot load_snapshot(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open snapshot " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_snapshot(bytes);
}

std::uint64_t parameter_hash(const Model& model) {
    Fnv1a h;
    for (const auto& p : model.parameters()) {
        h.update(p.name);
        h.update(std::span<const float>(p.value.data));
    }
    return h.digest();
}

} // namespace clr
