#include "clr/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "clr/error.hpp"
#include "clr/hash.hpp"
#include "clr/report.hpp"

namespace clr {

Profile parse_profile(const std::string& name) {
    if (name == "desk") return Profile::desk;
    if (name == "paper") return Profile::paper;
    throw ConfigError("unknown profile '" + name + "' (expected desk or paper)");
}

std::string profile_name(Profile p) { return p == Profile::desk ? "desk" : "paper"; }

std::string extraction_mode_name(ExtractionMode m) {
    return m == ExtractionMode::final_task ? "final" : "incremental";
}

ExperimentConfig default_config(Profile profile) {
    ExperimentConfig c;
    c.strategies = {"finetune", "ewc", "replay", "multitask"};
    if (profile == Profile::paper) {
        c.dataset.kind = DatasetSource::Kind::cifar10;
        c.dataset.synthetic.image_shape = {3, 32, 32};
        c.task_counts = {2, 5, 9};
        c.seeds = {0, 1, 2, 3, 4};
        return c;
    }
    c.dataset.kind = DatasetSource::Kind::synthetic;
    c.dataset.synthetic.num_classes = 10;
    c.dataset.synthetic.train_per_class = 1000;
    c.dataset.synthetic.test_per_class = 100;
    c.dataset.synthetic.image_shape = {3, 16, 16};
    c.dataset.synthetic.noise = 0.08;
    c.dataset.synthetic.seed = 7;
    c.task_counts = {2, 5};
    c.seeds = {1, 2, 3};
    c.model.widths = {8, 16};
    c.model.blocks_per_stage = {0, 1};
    c.model.feature_dim = 16;
    c.train.epochs_per_task = 5;
    c.train.batch_size = 32;
    c.train.lr0 = 0.02;
    c.train.augment.crop_padding = 2;
    c.train.fisher_samples = 200;
    c.replay_capacity = 200;
    c.robustify.steps = 100;
    return c;
}

namespace {

// Line of every object key in a JSON text, by dotted path ("train.lr0", "seeds[1]").
class KeyLines {
public:
    explicit KeyLines(std::string_view text) { scan(text); }

    int line(const std::string& path) const {
        std::string p = path;
        for (;;) {
            for (const auto& [k, l] : lines_)
                if (k == p) return l;
            auto cut = p.find_last_of(".[");
            if (cut == std::string::npos) return 0;
            p.resize(cut);
        }
    }

private:
    struct Frame {
        bool object;
        std::string path;
        std::string key;
        std::size_t index = 0;
        bool expect_key = true;
    };

    static std::string child(const Frame& f) {
        if (f.object) return f.path.empty() ? f.key : f.path + "." + f.key;
        return f.path + "[" + std::to_string(f.index) + "]";
    }

    void scan(std::string_view t) {
        std::vector<Frame> stack;
        int line = 1;
        for (std::size_t i = 0; i < t.size(); ++i) {
            const char c = t[i];
            if (c == '\n') {
                ++line;
            } else if (c == '"') {
                std::string s;
                for (++i; i < t.size() && t[i] != '"'; ++i) {
                    if (t[i] == '\\' && i + 1 < t.size()) ++i;
                    s += t[i];
                }
                if (!stack.empty() && stack.back().object && stack.back().expect_key) {
                    stack.back().key = s;
                    stack.back().expect_key = false;
                    lines_.emplace_back(child(stack.back()), line);
                }
            } else if (c == '{' || c == '[') {
                std::string path = stack.empty() ? "" : child(stack.back());
                stack.push_back({c == '{', path, "", 0, true});
            } else if (c == '}' || c == ']') {
                if (!stack.empty()) stack.pop_back();
            } else if (c == ',' && !stack.empty()) {
                if (stack.back().object)
                    stack.back().expect_key = true;
                else
                    ++stack.back().index;
            }
        }
    }

    std::vector<std::pair<std::string, int>> lines_;
};

class Reader {
public:
    Reader(const KeyLines* lines, std::string source) : lines_(lines), source_(std::move(source)) {}

    [[noreturn]] void fail(const std::string& path, const std::string& msg) const {
        std::string where = source_;
        if (lines_) {
            if (int l = lines_->line(path); l > 0) where += ":" + std::to_string(l);
        }
        throw ConfigError(where + ": " + (path.empty() ? "" : "'" + path + "': ") + msg);
    }

    void keys(const nlohmann::json& obj, const std::string& path, std::initializer_list<std::string_view> allowed) const {
        if (!obj.is_object()) fail(path, "expected an object");
        for (const auto& [k, v] : obj.items())
            if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
                fail(join(path, k), "unknown key '" + k + "'");
    }

    static std::string join(const std::string& path, const std::string& key) {
        return path.empty() ? key : path + "." + key;
    }

    double real(const nlohmann::json& v, const std::string& path) const {
        if (!v.is_number()) fail(path, "expected a number, got " + std::string(v.type_name()));
        return v.get<double>();
    }
    std::uint64_t natural(const nlohmann::json& v, const std::string& path) const {
        if (!v.is_number_unsigned()) fail(path, "expected a non-negative integer, got " + v.dump());
        return v.get<std::uint64_t>();
    }
    bool boolean(const nlohmann::json& v, const std::string& path) const {
        if (!v.is_boolean()) fail(path, "expected true or false, got " + v.dump());
        return v.get<bool>();
    }
    std::string string(const nlohmann::json& v, const std::string& path) const {
        if (!v.is_string()) fail(path, "expected a string, got " + v.dump());
        return v.get<std::string>();
    }
    template <typename T, typename F>
    std::vector<T> list(const nlohmann::json& v, const std::string& path, F elem) const {
        if (!v.is_array()) fail(path, "expected an array, got " + std::string(v.type_name()));
        std::vector<T> out;
        for (std::size_t i = 0; i < v.size(); ++i) out.push_back(elem(v[i], path + "[" + std::to_string(i) + "]"));
        return out;
    }
    std::vector<std::size_t> sizes(const nlohmann::json& v, const std::string& path) const {
        return list<std::size_t>(v, path, [&](const nlohmann::json& e, const std::string& p) {
            return static_cast<std::size_t>(natural(e, p));
        });
    }

private:
    const KeyLines* lines_;
    std::string source_;
};

const std::set<std::string> kStrategies{"finetune", "ewc", "replay", "multitask"};

void check_config(const ExperimentConfig& c, const Reader& r) {
    if (c.seeds.empty()) r.fail("seeds", "at least one seed is required");
    if (c.strategies.empty()) r.fail("strategies", "at least one strategy is required");
    for (std::size_t i = 0; i < c.strategies.size(); ++i)
        if (!kStrategies.count(c.strategies[i]))
            r.fail("strategies[" + std::to_string(i) + "]",
                   "unknown strategy '" + c.strategies[i] + "' (expected finetune, ewc, replay or multitask)");
    if (c.task_counts.empty()) r.fail("task_counts", "at least one task count is required");

    const std::size_t K = c.dataset.kind == DatasetSource::Kind::cifar10 ? 10 : c.dataset.synthetic.num_classes;
    if (c.dataset.kind == DatasetSource::Kind::cifar10) {
        if (c.dataset.path.empty()) r.fail("dataset.path", "cifar10 needs the binary dataset directory");
        if (!std::filesystem::is_directory(c.dataset.path))
            r.fail("dataset.path", "directory " + c.dataset.path.string() + " does not exist");
    } else {
        const auto& s = c.dataset.synthetic;
        if (s.num_classes < 2) r.fail("dataset.num_classes", "need at least 2 classes");
        if (s.num_classes > 256) r.fail("dataset.num_classes", "labels must fit a byte");
        if (s.train_per_class == 0) r.fail("dataset.train_per_class", "must be positive");
        if (s.test_per_class == 0) r.fail("dataset.test_per_class", "must be positive");
        for (auto d : s.image_shape)
            if (d == 0) r.fail("dataset.image_shape", "entries must be positive");
        if (!(s.noise >= 0.0)) r.fail("dataset.noise", "must be non-negative");
    }
    for (std::size_t i = 0; i < c.task_counts.size(); ++i) {
        const std::string p = "task_counts[" + std::to_string(i) + "]";
        if (c.task_counts[i] == 0 || c.task_counts[i] > K)
            r.fail(p, std::to_string(c.task_counts[i]) + " tasks cannot be formed from " + std::to_string(K) +
                          " classes");
        try {
            cil_class_partition(K, c.task_counts[i]);
        } catch (const ConfigError& e) {
            r.fail(p, e.what());
        }
    }

    auto wrap = [&](const char* path, auto&& fn) {
        try {
            fn();
        } catch (const ConfigError& e) {
            r.fail(path, e.what());
        }
    };
    wrap("train", [&] { c.train.validate(); });
    wrap("robustify", [&] { c.robustify.validate(); });
    wrap("model", [&] {
        ModelConfig m = c.model;
        m.num_classes = K;
        m.validate();
    });
    if (c.replay_capacity == 0) r.fail("replay.capacity", "must be positive");
    if (!(c.ewc_lambda >= 0.0)) r.fail("ewc.lambda", "must be non-negative");
    if (c.jobs == 0) r.fail("jobs", "must be positive");
    if (c.output_dir.empty()) r.fail("output_dir", "must not be empty");
}

void read_config(const nlohmann::json& j, ExperimentConfig& c, const Reader& r) {
    r.keys(j, "", {"dataset", "task_counts", "strategies", "seeds", "oracle_seed", "class_order_seed", "model",
                   "train", "replay", "ewc", "robustify", "extraction_mode", "output_dir", "record_wallclock",
                   "jobs"});
    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        r.keys(d, "dataset", {"kind", "path", "num_classes", "train_per_class", "test_per_class", "image_shape",
                              "noise", "seed"});
        if (d.contains("kind")) {
            auto kind = r.string(d["kind"], "dataset.kind");
            if (kind == "synthetic") {
                if (c.dataset.kind != DatasetSource::Kind::synthetic) c.dataset.synthetic = SyntheticSpec{};
                c.dataset.kind = DatasetSource::Kind::synthetic;
            } else if (kind == "cifar10") {
                c.dataset.kind = DatasetSource::Kind::cifar10;
            } else {
                r.fail("dataset.kind", "unknown dataset kind '" + kind + "' (expected synthetic or cifar10)");
            }
        }
        const bool synth = c.dataset.kind == DatasetSource::Kind::synthetic;
        for (const char* k : {"num_classes", "train_per_class", "test_per_class", "image_shape", "noise", "seed"})
            if (!synth && d.contains(k))
                r.fail(std::string("dataset.") + k, "only applies to the synthetic dataset");
        if (synth && d.contains("path")) r.fail("dataset.path", "only applies to the cifar10 dataset");
        auto& s = c.dataset.synthetic;
        if (d.contains("path")) c.dataset.path = r.string(d["path"], "dataset.path");
        if (d.contains("num_classes")) s.num_classes = r.natural(d["num_classes"], "dataset.num_classes");
        if (d.contains("train_per_class"))
            s.train_per_class = r.natural(d["train_per_class"], "dataset.train_per_class");
        if (d.contains("test_per_class")) s.test_per_class = r.natural(d["test_per_class"], "dataset.test_per_class");
        if (d.contains("image_shape")) {
            auto v = r.sizes(d["image_shape"], "dataset.image_shape");
            if (v.size() != 3) r.fail("dataset.image_shape", "expected [C, H, W]");
            s.image_shape = {v[0], v[1], v[2]};
        }
        if (d.contains("noise")) s.noise = r.real(d["noise"], "dataset.noise");
        if (d.contains("seed")) s.seed = r.natural(d["seed"], "dataset.seed");
    }
    if (j.contains("task_counts")) c.task_counts = r.sizes(j["task_counts"], "task_counts");
    if (j.contains("strategies"))
        c.strategies = r.list<std::string>(j["strategies"], "strategies",
                                           [&](const nlohmann::json& e, const std::string& p) { return r.string(e, p); });
    if (j.contains("seeds"))
        c.seeds = r.list<std::uint64_t>(j["seeds"], "seeds",
                                        [&](const nlohmann::json& e, const std::string& p) { return r.natural(e, p); });
    for (auto [key, slot] : {std::pair{"oracle_seed", &c.oracle_seed}, std::pair{"class_order_seed", &c.class_order_seed}})
        if (j.contains(key)) {
            if (j[key].is_null())
                slot->reset();
            else
                *slot = r.natural(j[key], key);
        }
    if (j.contains("model")) {
        const auto& m = j["model"];
        r.keys(m, "model", {"widths", "blocks_per_stage", "feature_dim"});
        if (m.contains("widths")) c.model.widths = r.sizes(m["widths"], "model.widths");
        if (m.contains("blocks_per_stage")) c.model.blocks_per_stage = r.sizes(m["blocks_per_stage"], "model.blocks_per_stage");
        if (m.contains("feature_dim")) c.model.feature_dim = r.natural(m["feature_dim"], "model.feature_dim");
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        r.keys(t, "train", {"epochs_per_task", "batch_size", "lr0", "momentum", "lr_min", "augment", "fisher_samples",
                            "fisher_estimator"});
        if (t.contains("epochs_per_task")) c.train.epochs_per_task = r.natural(t["epochs_per_task"], "train.epochs_per_task");
        if (t.contains("batch_size")) c.train.batch_size = r.natural(t["batch_size"], "train.batch_size");
        if (t.contains("lr0")) c.train.lr0 = r.real(t["lr0"], "train.lr0");
        if (t.contains("momentum")) c.train.momentum = r.real(t["momentum"], "train.momentum");
        if (t.contains("lr_min")) c.train.lr_min = r.real(t["lr_min"], "train.lr_min");
        if (t.contains("fisher_samples")) c.train.fisher_samples = r.natural(t["fisher_samples"], "train.fisher_samples");
        if (t.contains("fisher_estimator")) {
            auto e = r.string(t["fisher_estimator"], "train.fisher_estimator");
            if (e == "sampled_label")
                c.train.fisher_estimator = FisherEstimator::sampled_label;
            else if (e == "expected_label")
                c.train.fisher_estimator = FisherEstimator::expected_label;
            else
                r.fail("train.fisher_estimator", "unknown estimator '" + e + "' (expected sampled_label or expected_label)");
        }
        if (t.contains("augment")) {
            const auto& a = t["augment"];
            r.keys(a, "train.augment", {"enabled", "crop_padding", "flip_probability"});
            if (a.contains("enabled")) c.train.augment.enabled = r.boolean(a["enabled"], "train.augment.enabled");
            if (a.contains("crop_padding")) c.train.augment.crop_padding = r.natural(a["crop_padding"], "train.augment.crop_padding");
            if (a.contains("flip_probability"))
                c.train.augment.flip_probability = r.real(a["flip_probability"], "train.augment.flip_probability");
        }
    }
    if (j.contains("replay")) {
        r.keys(j["replay"], "replay", {"capacity"});
        if (j["replay"].contains("capacity")) c.replay_capacity = r.natural(j["replay"]["capacity"], "replay.capacity");
    }
    if (j.contains("ewc")) {
        r.keys(j["ewc"], "ewc", {"lambda"});
        if (j["ewc"].contains("lambda")) c.ewc_lambda = r.real(j["ewc"]["lambda"], "ewc.lambda");
    }
    if (j.contains("robustify")) {
        const auto& g = j["robustify"];
        r.keys(g, "robustify", {"steps", "step_size", "init_mode", "stop_tolerance", "seed", "batch_size"});
        if (g.contains("steps")) c.robustify.steps = r.natural(g["steps"], "robustify.steps");
        if (g.contains("step_size")) c.robustify.step_size = r.real(g["step_size"], "robustify.step_size");
        if (g.contains("init_mode")) {
            auto m = r.string(g["init_mode"], "robustify.init_mode");
            if (m != "uniform_noise" && m != "from_target")
                r.fail("robustify.init_mode", "unknown init_mode '" + m + "' (expected uniform_noise or from_target)");
            c.robustify.init_mode = parse_init_mode(m);
        }
        if (g.contains("stop_tolerance")) {
            if (g["stop_tolerance"].is_null())
                c.robustify.stop_tolerance.reset();
            else
                c.robustify.stop_tolerance = r.real(g["stop_tolerance"], "robustify.stop_tolerance");
        }
        if (g.contains("seed")) c.robustify.seed = r.natural(g["seed"], "robustify.seed");
        if (g.contains("batch_size")) c.robustify.batch_size = r.natural(g["batch_size"], "robustify.batch_size");
    }
    if (j.contains("extraction_mode")) {
        auto m = r.string(j["extraction_mode"], "extraction_mode");
        if (m == "final")
            c.extraction_mode = ExtractionMode::final_task;
        else if (m == "incremental")
            c.extraction_mode = ExtractionMode::incremental;
        else
            r.fail("extraction_mode", "unknown extraction mode '" + m + "' (expected final or incremental)");
    }
    if (j.contains("output_dir")) c.output_dir = r.string(j["output_dir"], "output_dir");
    if (j.contains("record_wallclock")) c.record_wallclock = r.boolean(j["record_wallclock"], "record_wallclock");
    if (j.contains("jobs")) c.jobs = r.natural(j["jobs"], "jobs");
}

} // namespace

ExperimentConfig parse_config_text(std::string_view text, Profile profile, const std::string& source) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(source + ": " + e.what());
    }
    KeyLines lines(text);
    Reader r(&lines, source);
    ExperimentConfig c = default_config(profile);
    read_config(j, c, r);
    check_config(c, r);
    return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path, Profile profile) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), profile, path.string());
}

void validate_config(const ExperimentConfig& cfg) { check_config(cfg, Reader(nullptr, "config")); }

namespace {

nlohmann::json train_json(const TrainConfig& t) {
    return {{"epochs_per_task", t.epochs_per_task},
            {"batch_size", t.batch_size},
            {"lr0", t.lr0},
            {"momentum", t.momentum},
            {"lr_min", t.lr_min},
            {"seed", t.seed},
            {"augment",
             {{"enabled", t.augment.enabled},
              {"crop_padding", t.augment.crop_padding},
              {"flip_probability", t.augment.flip_probability}}},
            {"fisher_samples", t.fisher_samples},
            {"fisher_estimator",
             t.fisher_estimator == FisherEstimator::sampled_label ? "sampled_label" : "expected_label"}};
}

nlohmann::json dataset_json(const DatasetSource& d) {
    if (d.kind == DatasetSource::Kind::cifar10) return {{"kind", "cifar10"}, {"path", d.path.string()}};
    const auto& s = d.synthetic;
    return {{"kind", "synthetic"},
            {"num_classes", s.num_classes},
            {"train_per_class", s.train_per_class},
            {"test_per_class", s.test_per_class},
            {"image_shape", s.image_shape},
            {"noise", s.noise},
            {"seed", s.seed}};
}

nlohmann::json optional_json(const std::optional<std::uint64_t>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

} // namespace

nlohmann::json config_to_json(const ExperimentConfig& c) {
    TrainConfig t = c.train;
    t.seed = 0;
    return {{"dataset", dataset_json(c.dataset)},
            {"task_counts", c.task_counts},
            {"strategies", c.strategies},
            {"seeds", c.seeds},
            {"oracle_seed", optional_json(c.oracle_seed)},
            {"class_order_seed", optional_json(c.class_order_seed)},
            {"model",
             {{"widths", c.model.widths}, {"blocks_per_stage", c.model.blocks_per_stage}, {"feature_dim", c.model.feature_dim}}},
            {"train", [&] {
                 auto j = train_json(t);
                 j.erase("seed");
                 return j;
             }()},
            {"replay", {{"capacity", c.replay_capacity}}},
            {"ewc", {{"lambda", c.ewc_lambda}}},
            {"robustify", [&] {
                 auto j = c.robustify.to_json();
                 return j;
             }()},
            {"extraction_mode", extraction_mode_name(c.extraction_mode)},
            {"output_dir", c.output_dir.string()},
            {"record_wallclock", c.record_wallclock},
            {"jobs", c.jobs}};
}

// ---- cache ------------------------------------------------------------------

std::string ArtifactCache::key(const nlohmann::json& subset) {
    nlohmann::json j = subset;
    j["code_version"] = kCodeVersion;
    return hex64(fnv1a(j.dump()));
}

std::filesystem::path ArtifactCache::dir(const std::string& kind, const std::string& key) const {
    return root_ / kind / key;
}

bool ArtifactCache::has(const std::string& kind, const std::string& key) const {
    return std::filesystem::exists(dir(kind, key) / "complete");
}

std::filesystem::path ArtifactCache::begin(const std::string& kind, const std::string& key) const {
    auto staging = root_ / kind / (key + ".staging");
    std::error_code ec;
    std::filesystem::remove_all(staging, ec);
    std::filesystem::create_directories(staging, ec);
    if (ec) throw IoError("cannot create cache directory " + staging.string() + ": " + ec.message());
    return staging;
}

std::filesystem::path ArtifactCache::commit(const std::string& kind, const std::string& key,
                                            const std::filesystem::path& staging) const {
    write_text_file(staging / "complete", key + "\n");
    auto final_dir = dir(kind, key);
    std::error_code ec;
    std::filesystem::remove_all(final_dir, ec);
    std::filesystem::rename(staging, final_dir, ec);
    if (ec) throw IoError("cannot publish cache entry " + final_dir.string() + ": " + ec.message());
    return final_dir;
}

// ---- pipeline -----------------------------------------------------------------

LoadedData load_data(const ExperimentConfig& cfg) {
    LoadedData d;
    if (cfg.dataset.kind == DatasetSource::Kind::cifar10) {
        auto [tr, te] = load_cifar10_binary(cfg.dataset.path);
        d.train = std::make_shared<Dataset>(std::move(tr));
        d.test = std::make_shared<Dataset>(std::move(te));
    } else {
        auto [tr, te] = gen_synthetic(cfg.dataset.synthetic);
        d.train = std::make_shared<Dataset>(std::move(tr));
        d.test = std::make_shared<Dataset>(std::move(te));
    }
    return d;
}

TaskStream make_stream(const ExperimentConfig& cfg, const LoadedData& data, std::size_t tasks) {
    return make_cil_splits(data.train, data.test, tasks, cfg.class_order_seed);
}

ModelConfig model_config_for(const ExperimentConfig& cfg, const Dataset& data, std::uint64_t seed) {
    ModelConfig m = cfg.model;
    m.input_shape = data.image_shape;
    m.num_classes = data.num_classes();
    m.seed = seed;
    return m;
}

namespace {

StrategySpec strategy_spec(const ExperimentConfig& cfg, const std::string& name) {
    StrategySpec s;
    s.kind = parse_strategy(name);
    s.replay_capacity = cfg.replay_capacity;
    s.ewc_lambda = cfg.ewc_lambda;
    return s;
}

nlohmann::json oracle_subset(const ExperimentConfig& cfg, const Dataset& train, std::size_t tasks) {
    TrainConfig t = cfg.train;
    t.seed = cfg.effective_oracle_seed();
    return {{"artifact", "oracle"},
            {"dataset", dataset_json(cfg.dataset)},
            {"class_order_seed", optional_json(cfg.class_order_seed)},
            {"tasks", tasks},
            {"model", model_config_for(cfg, train, cfg.effective_oracle_seed()).to_json()},
            {"train", train_json(t)},
            {"capacity", StrategySpec::oracle().buffer_capacity()}};
}

nlohmann::json robust_subset(const ExperimentConfig& cfg, const std::string& oracle_key) {
    return {{"artifact", "robust"},
            {"oracle", oracle_key},
            {"robustify", cfg.robustify.to_json()},
            {"extraction_mode", extraction_mode_name(cfg.extraction_mode)}};
}

std::string snapshot_name(std::size_t t) { return "snapshot_after_task_" + std::to_string(t + 1) + ".clrs"; }
std::string extraction_stem(std::size_t t) { return "robust_after_task_" + std::to_string(t + 1); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s.setf(std::ios::fixed);
    s.precision(digits);
    s << v;
    return s.str();
}

OracleArtifacts train_or_load_oracle(const ExperimentConfig& cfg, const LoadedData& data, std::size_t T,
                                     const ArtifactCache& cache, std::ostream& log) {
    OracleArtifacts o;
    o.tasks = T;
    o.key = ArtifactCache::key(oracle_subset(cfg, *data.train, T));
    if (cache.has("oracle", o.key)) {
        const auto dir = cache.dir("oracle", o.key);
        for (std::size_t t = 0; t < T; ++t) o.snapshots.push_back(load_snapshot(dir / snapshot_name(t)));
        auto meta = nlohmann::json::parse(read_text_file(dir / "oracle.json"));
        o.matrix = AccuracyMatrix::from_json(meta.at("matrix"), T);
        o.cache_hit = true;
        log << "oracle T=" << T << ": cache hit " << o.key << ", ACC " << fixed(average_accuracy(o.matrix), 4) << "\n";
        return o;
    }
    const auto t0 = std::chrono::steady_clock::now();
    TaskStream stream = make_stream(cfg, data, T);
    Model model = build_model(model_config_for(cfg, *data.train, cfg.effective_oracle_seed()));
    TrainConfig tc = cfg.train;
    tc.seed = cfg.effective_oracle_seed();
    StrategyRun run = run_strategy(StrategySpec::oracle(), stream, model, tc);
    const auto staging = cache.begin("oracle", o.key);
    for (std::size_t t = 0; t < T; ++t) save_snapshot(run.snapshots[t], staging / snapshot_name(t));
    nlohmann::json meta{{"key", o.key},
                        {"tasks", T},
                        {"matrix", run.matrix.to_json()},
                        {"acc", average_accuracy(run.matrix)},
                        {"config", oracle_subset(cfg, *data.train, T)}};
    write_text_file(staging / "oracle.json", meta.dump(1) + "\n");
    write_loss_log(staging / "losses.csv", "oracle-T" + std::to_string(T), run.losses);
    cache.commit("oracle", o.key, staging);
    o.snapshots = std::move(run.snapshots);
    o.matrix = run.matrix;
    log << "oracle T=" << T << ": trained in " << fixed(seconds_since(t0), 1) << " s, ACC "
        << fixed(average_accuracy(o.matrix), 4) << "\n";
    return o;
}

RobustArtifacts build_or_load_robust(const ExperimentConfig& cfg, const LoadedData& data, const OracleArtifacts& oracle,
                                     const ArtifactCache& cache, std::ostream& log) {
    RobustArtifacts r;
    r.tasks = oracle.tasks;
    r.key = ArtifactCache::key(robust_subset(cfg, oracle.key));
    const std::size_t T = oracle.tasks;
    TaskStream stream = make_stream(cfg, data, T);
    if (!cache.has("robust", r.key)) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto staging = cache.begin("robust", r.key);
        std::size_t first = cfg.extraction_mode == ExtractionMode::final_task ? T - 1 : 0;
        for (std::size_t t = first; t < T; ++t) {
            RobustDataset rd = extract_after_task(oracle.snapshots[t], stream, cfg.robustify, cfg.jobs);
            double init = 0.0, fin = 0.0;
            for (const auto& s : rd.samples) {
                init += s.initial_objective;
                fin += s.final_objective;
            }
            const double n = static_cast<double>(std::max<std::size_t>(1, rd.size()));
            log << "robust T=" << T << " after task " << t + 1 << ": " << rd.size() << " samples, mean objective "
                << fixed(init / n, 4) << " -> " << fixed(fin / n, 4) << "\n";
            export_robust_dataset(rd, staging, extraction_stem(t));
        }
        write_text_file(staging / "robust.json",
                        nlohmann::json{{"key", r.key}, {"config", robust_subset(cfg, oracle.key)}}.dump(1) + "\n");
        cache.commit("robust", r.key, staging);
        log << "robust T=" << T << ": built in " << fixed(seconds_since(t0), 1) << " s\n";
    } else {
        r.cache_hit = true;
        log << "robust T=" << T << ": cache hit " << r.key << "\n";
    }
    r.directory = cache.dir("robust", r.key);
    if (cfg.extraction_mode == ExtractionMode::final_task) {
        r.training_set = load_robust_dataset(r.directory, extraction_stem(T - 1)).to_dataset();
    } else {
        std::vector<RobustDataset> parts;
        for (std::size_t t = 0; t < T; ++t) parts.push_back(load_robust_dataset(r.directory, extraction_stem(t)));
        r.training_set = incremental_training_set(parts, stream);
    }
    if (r.training_set.labels != data.train->labels)
        throw DataError("robust dataset " + r.key + " does not cover the training set in order");
    r.training_set.class_names = data.train->class_names;
    return r;
}

} // namespace

std::vector<OracleArtifacts> cmd_train_oracle(const ExperimentConfig& cfg, std::ostream& log) {
    validate_config(cfg);
    const LoadedData data = load_data(cfg);
    ArtifactCache cache(cfg.output_dir / "cache");
    std::vector<OracleArtifacts> out;
    for (auto T : cfg.task_counts) out.push_back(train_or_load_oracle(cfg, data, T, cache, log));
    return out;
}

std::vector<RobustArtifacts> cmd_build_robust(const ExperimentConfig& cfg, std::ostream& log) {
    validate_config(cfg);
    const LoadedData data = load_data(cfg);
    ArtifactCache cache(cfg.output_dir / "cache");
    std::vector<RobustArtifacts> out;
    for (auto T : cfg.task_counts) {
        auto oracle = train_or_load_oracle(cfg, data, T, cache, log);
        out.push_back(build_or_load_robust(cfg, data, oracle, cache, log));
    }
    return out;
}

namespace {

struct Cell {
    std::size_t tasks;
    std::string strategy;
    std::string variant;
    std::uint64_t seed;
    std::string id() const {
        return strategy + (variant == "clr" ? "-CLR" : "") + " T=" + std::to_string(tasks) + " seed=" +
               std::to_string(seed);
    }
};

nlohmann::json cell_subset(const ExperimentConfig& cfg, const Dataset& train, const Cell& c,
                           const std::string& robust_key) {
    TrainConfig t = cfg.train;
    t.seed = c.seed;
    const auto spec = strategy_spec(cfg, c.strategy);
    return {{"artifact", "run"},
            {"dataset", dataset_json(cfg.dataset)},
            {"class_order_seed", optional_json(cfg.class_order_seed)},
            {"tasks", c.tasks},
            {"strategy", c.strategy},
            {"replay_capacity", spec.uses_replay() ? nlohmann::json(spec.replay_capacity) : nlohmann::json(nullptr)},
            {"ewc_lambda", spec.kind == StrategyKind::ewc ? nlohmann::json(spec.ewc_lambda) : nlohmann::json(nullptr)},
            {"variant", c.variant},
            {"robust", c.variant == "clr" ? nlohmann::json(robust_key) : nlohmann::json(nullptr)},
            {"seed", c.seed},
            {"model", model_config_for(cfg, train, c.seed).to_json()},
            {"train", train_json(t)}};
}

} // namespace

std::vector<RunResult> cmd_benchmark(const ExperimentConfig& cfg, std::ostream& log) {
    validate_config(cfg);
    const LoadedData data = load_data(cfg);
    ArtifactCache cache(cfg.output_dir / "cache");

    std::vector<Cell> cells;
    for (auto T : cfg.task_counts)
        for (const auto& s : cfg.strategies)
            for (const std::string v : {"standard", "clr"})
                for (auto seed : cfg.seeds) cells.push_back({T, s, v, seed});

    std::map<std::size_t, TaskStream> standard, robust;
    std::map<std::size_t, std::string> robust_keys;
    for (auto T : cfg.task_counts) {
        standard.emplace(T, make_stream(cfg, data, T));
        auto oracle = train_or_load_oracle(cfg, data, T, cache, log);
        auto r = build_or_load_robust(cfg, data, oracle, cache, log);
        robust_keys[T] = r.key;
        robust.emplace(T, standard.at(T).with_train(std::make_shared<Dataset>(std::move(r.training_set))));
    }

    std::vector<std::optional<RunResult>> results(cells.size());
    std::vector<std::vector<LossRecord>> losses(cells.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> abort{false};
    std::mutex mu;
    std::optional<std::pair<std::size_t, std::exception_ptr>> failure;

    auto worker = [&] {
        for (std::size_t i; !abort && (i = next.fetch_add(1)) < cells.size();) {
            const Cell& c = cells[i];
            try {
                const std::string hash = ArtifactCache::key(cell_subset(cfg, *data.train, c, robust_keys.at(c.tasks)));
                RunResult r;
                bool hit = false;
                if (cache.has("runs", hash)) {
                    r = RunResult::from_json(nlohmann::json::parse(read_text_file(cache.dir("runs", hash) / "result.json")));
                    hit = true;
                } else {
                    const auto t0 = std::chrono::steady_clock::now();
                    const TaskStream& stream = c.variant == "clr" ? robust.at(c.tasks) : standard.at(c.tasks);
                    Model model = build_model(model_config_for(cfg, *data.train, c.seed));
                    TrainConfig tc = cfg.train;
                    tc.seed = c.seed;
                    StrategyRun run = run_strategy(strategy_spec(cfg, c.strategy), stream, model, tc);
                    const double secs = seconds_since(t0);
                    r = {c.strategy, c.variant, c.tasks, c.seed, run.matrix, average_accuracy(run.matrix), hash,
                         cfg.record_wallclock ? secs : 0.0};
                    losses[i] = std::move(run.losses);
                    const auto staging = cache.begin("runs", hash);
                    write_text_file(staging / "config.json",
                                    cell_subset(cfg, *data.train, c, robust_keys.at(c.tasks)).dump(1) + "\n");
                    write_text_file(staging / "result.json", r.to_json().dump(1) + "\n");
                    cache.commit("runs", hash, staging);
                    std::lock_guard lock(mu);
                    log << c.id() << ": ACC " << fixed(r.acc, 4) << " (" << fixed(secs, 1) << " s)\n";
                }
                if (hit) {
                    std::lock_guard lock(mu);
                    log << c.id() << ": cache hit, ACC " << fixed(r.acc, 4) << "\n";
                }
                results[i] = std::move(r);
            } catch (...) {
                std::lock_guard lock(mu);
                if (!failure || i < failure->first) failure = {i, std::current_exception()};
                abort = true;
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(cfg.jobs, cells.size()));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    }

    std::vector<RunResult> done;
    for (auto& r : results)
        if (r) done.push_back(*r);

    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir / "logs", ec);
    {
        std::ostringstream csv;
        bool any = false;
        for (std::size_t i = 0; i < cells.size(); ++i)
            if (!losses[i].empty()) {
                const auto path = cfg.output_dir / "logs" / "losses.csv";
                write_loss_log(path, cells[i].strategy + "-" + cells[i].variant + "-T" + std::to_string(cells[i].tasks) +
                                         "-s" + std::to_string(cells[i].seed),
                               losses[i], any);
                any = true;
            }
    }

    if (failure) {
        std::string message;
        try {
            std::rethrow_exception(failure->second);
        } catch (const std::exception& e) {
            message = e.what();
        }
        auto j = results_json(done);
        j["incomplete"] = true;
        j["failed_cell"] = {{"cell", cells[failure->first].id()}, {"error", message}};
        write_text_file(cfg.output_dir / "results.json", j.dump(1) + "\n");
        log << "benchmark aborted at " << cells[failure->first].id() << ": " << message << "\n";
        std::rethrow_exception(failure->second);
    }
    write_report(aggregate(done), done, cfg.output_dir);
    return done;
}

BenchmarkTable cmd_report(const ExperimentConfig& cfg, std::ostream& out) {
    const auto path = cfg.output_dir / "results.json";
    if (!std::filesystem::exists(path)) throw UsageError("no runs: " + path.string() + " does not exist");
    auto results = read_results(path);
    if (results.empty()) throw UsageError("no runs recorded in " + path.string());
    BenchmarkTable table = aggregate(results);
    write_report(table, results, cfg.output_dir);
    out << report_markdown(table);
    return table;
}

} // namespace clr
