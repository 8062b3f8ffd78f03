#include "clr/robustify.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <thread>

#include "clr/error.hpp"
#include "clr/hash.hpp"

namespace clr {

std::string init_mode_name(InitMode mode) {
    return mode == InitMode::uniform_noise ? "uniform_noise" : "from_target";
}

InitMode parse_init_mode(const std::string& name) {
    if (name == "uniform_noise") return InitMode::uniform_noise;
    if (name == "from_target") return InitMode::from_target;
    throw ConfigError("unknown init_mode '" + name + "'");
}

void RobustifyConfig::validate() const {
    if (steps == 0) throw ConfigError("robustify: steps must be at least 1");
    if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw ConfigError("robustify: step_size must be non-negative");
    if (stop_tolerance && !(*stop_tolerance >= 0.0)) throw ConfigError("robustify: stop_tolerance must be non-negative");
    if (batch_size == 0) throw ConfigError("robustify: batch_size must be positive");
}

double RobustifyConfig::tolerance(std::size_t feature_dim) const {
    return stop_tolerance ? *stop_tolerance : 1e-4 * static_cast<double>(feature_dim);
}

nlohmann::json RobustifyConfig::to_json() const {
    nlohmann::json j{{"steps", steps},
                     {"step_size", step_size},
                     {"init_mode", init_mode_name(init_mode)},
                     {"seed", seed},
                     {"batch_size", batch_size}};
    j["stop_tolerance"] = stop_tolerance ? nlohmann::json(*stop_tolerance) : nlohmann::json(nullptr);
    return j;
}

RobustifyConfig RobustifyConfig::from_json(const nlohmann::json& j) {
    RobustifyConfig c;
    c.steps = j.at("steps").get<std::size_t>();
    c.step_size = j.at("step_size").get<double>();
    c.init_mode = parse_init_mode(j.at("init_mode").get<std::string>());
    c.seed = j.at("seed").get<std::uint64_t>();
    c.batch_size = j.at("batch_size").get<std::size_t>();
    if (!j.at("stop_tolerance").is_null()) c.stop_tolerance = j.at("stop_tolerance").get<double>();
    c.validate();
    return c;
}

FeatureFn frozen_features(const Model& oracle) {
    return [&oracle](Graph& g, Var x) { return oracle.features_frozen(g, x); };
}

namespace {

struct Evaluation {
    std::vector<float> objective; // per row
    Tensor grad;                  // same shape as the input batch
};

Evaluation evaluate_objective(const FeatureFn& features, const Tensor& x, const Tensor& target_features) {
    Graph g;
    Var in = g.input(x, true);
    Var f = features(g, in);
    if (f.shape() != target_features.shape)
        throw InternalError("robustify: feature shape " + shape_str(f.shape()) + " vs target " +
                            shape_str(target_features.shape));
    const std::size_t N = f.shape()[0], D = f.value().numel() / N;
    Evaluation e;
    e.objective.resize(N);
    for (std::size_t n = 0; n < N; ++n) {
        float acc = 0.0f;
        for (std::size_t d = 0; d < D; ++d) {
            const float diff = f.value().data[n * D + d] - target_features.data[n * D + d];
            acc += diff * diff;
        }
        e.objective[n] = acc;
    }
    g.backward(squared_distance(f, target_features));
    e.grad = Tensor(x.shape);
    auto gr = in.grad();
    if (!gr.empty()) std::copy(gr.begin(), gr.end(), e.grad.data.begin());
    return e;
}

Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
    Shape s = t.shape;
    const std::size_t d = t.numel() / s[0];
    s[0] = rows.size();
    Tensor out(s);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy_n(t.data.begin() + static_cast<long>(rows[i] * d), d, out.data.begin() + static_cast<long>(i * d));
    return out;
}

struct SampleState {
    std::vector<float> x, grad;
    float objective = 0.0f;
    float eta = 0.0f;
    int halvings = 0;
    bool done = false;
};

} // namespace

std::vector<float> initial_point(std::span<const float> target, InitMode mode, Rng& rng) {
    if (mode == InitMode::from_target) return {target.begin(), target.end()};
    std::vector<float> x(target.size());
    for (auto& v : x) v = static_cast<float>(rng.uniform());
    return x;
}

std::vector<RobustSample> robustify_batch(const FeatureFn& features, const Tensor& targets, const Tensor& starts,
                                          const RobustifyConfig& cfg, double tolerance) {
    cfg.validate();
    if (targets.shape != starts.shape || targets.rank() < 2)
        throw UsageError("robustify: targets " + shape_str(targets.shape) + " and starts " + shape_str(starts.shape) +
                         " must share a batched shape");
    const std::size_t N = targets.dim(0), d = targets.numel() / N;
    const auto tol = static_cast<float>(tolerance);
    const auto step0 = static_cast<float>(cfg.step_size);

    Tensor target_features;
    {
        Graph g;
        target_features = features(g, g.constant(targets)).value();
    }

    std::vector<RobustSample> out(N);
    std::vector<SampleState> st(N);
    Evaluation init = evaluate_objective(features, starts, target_features);
    for (std::size_t n = 0; n < N; ++n) {
        auto& s = st[n];
        s.x.assign(starts.data.begin() + static_cast<long>(n * d), starts.data.begin() + static_cast<long>((n + 1) * d));
        s.grad.assign(init.grad.data.begin() + static_cast<long>(n * d),
                      init.grad.data.begin() + static_cast<long>((n + 1) * d));
        s.objective = init.objective[n];
        s.eta = step0;
        out[n].initial_objective = s.objective;
        if (!std::isfinite(s.objective)) {
            out[n].error = "non-finite objective at iteration 0";
            s.done = true;
            continue;
        }
        out[n].trace.push_back(s.objective);
        s.done = s.objective <= tol;
    }

    std::vector<std::size_t> active;
    for (;;) {
        active.clear();
        for (std::size_t n = 0; n < N; ++n)
            if (!st[n].done) active.push_back(n);
        if (active.empty()) break;

        Tensor cand = gather_rows(starts, active);
        for (std::size_t i = 0; i < active.size(); ++i) {
            const auto& s = st[active[i]];
            float* c = cand.data.data() + i * d;
            for (std::size_t k = 0; k < d; ++k) c[k] = std::clamp(s.x[k] - s.eta * s.grad[k], 0.0f, 1.0f);
        }
        Evaluation e = evaluate_objective(features, cand, gather_rows(target_features, active));

        for (std::size_t i = 0; i < active.size(); ++i) {
            const std::size_t n = active[i];
            auto& s = st[n];
            auto& r = out[n];
            const float obj = e.objective[i];
            if (!std::isfinite(obj)) {
                r.error = "non-finite objective at iteration " + std::to_string(r.iterations + 1);
                s.done = true;
            } else if (obj <= s.objective) {
                s.x.assign(cand.data.begin() + static_cast<long>(i * d), cand.data.begin() + static_cast<long>((i + 1) * d));
                s.grad.assign(e.grad.data.begin() + static_cast<long>(i * d),
                              e.grad.data.begin() + static_cast<long>((i + 1) * d));
                s.objective = obj;
                s.eta = step0;
                s.halvings = 0;
                ++r.iterations;
                r.trace.push_back(obj);
                s.done = r.iterations >= cfg.steps || obj <= tol;
            } else if (++s.halvings > 8) {
                s.done = true;
            } else {
                s.eta *= 0.5f;
            }
        }
    }

    for (std::size_t n = 0; n < N; ++n) {
        out[n].x_cl = std::move(st[n].x);
        out[n].final_objective = st[n].objective;
    }
    return out;
}

RobustSample robustify_sample(const FeatureFn& features, const Tensor& target, const RobustifyConfig& cfg,
                              double tolerance, Rng& rng, std::size_t sample_index) {
    Shape batched = target.shape;
    if (batched.empty() || batched[0] != 1) batched.insert(batched.begin(), 1);
    Tensor t(batched, target.data);
    for (float v : t.data)
        if (!(v >= 0.0f && v <= 1.0f)) throw DataError("robustify: target pixel outside [0,1]");
    Tensor start(batched, initial_point(t.data, cfg.init_mode, rng));
    auto r = robustify_batch(features, t, start, cfg, tolerance);
    RobustSample s = std::move(r[0]);
    s.source_index = sample_index;
    if (s.error) throw OptimizationError(sample_index, s.iterations + 1, "sample " + std::to_string(sample_index) + ": " + *s.error);
    return s;
}

RobustSample robustify_sample(const Model& oracle, std::span<const float> target, const RobustifyConfig& cfg, Rng& rng,
                              std::size_t sample_index) {
    const auto& in = oracle.config().input_shape;
    Tensor t({1, in[0], in[1], in[2]}, std::vector<float>(target.begin(), target.end()));
    oracle.check_batch(t);
    return robustify_sample(frozen_features(oracle), t, cfg, cfg.tolerance(oracle.config().feature_dim), rng,
                            sample_index);
}

RobustDataset robustify_indices(const Model& oracle, const Dataset& source, std::span<const std::size_t> indices,
                                const RobustifyConfig& cfg, std::size_t oracle_task_index, std::size_t jobs) {
    cfg.validate();
    const auto& in = oracle.config().input_shape;
    if (in != source.image_shape)
        throw DataError("robustify: oracle input shape does not match the dataset image shape");
    RobustDataset out;
    out.image_shape = source.image_shape;
    out.class_names = source.class_names;
    out.config = cfg;
    out.oracle_hash = hex64(parameter_hash(oracle));
    out.source_hash = dataset_hash(source);
    out.samples.resize(indices.size());

    const FeatureFn features = frozen_features(oracle);
    const double tol = cfg.tolerance(oracle.config().feature_dim);
    const std::size_t chunks = (indices.size() + cfg.batch_size - 1) / cfg.batch_size;
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;

    auto worker = [&] {
        for (std::size_t c; (c = next.fetch_add(1)) < chunks;) {
            try {
                const std::size_t lo = c * cfg.batch_size, hi = std::min(indices.size(), lo + cfg.batch_size);
                auto part = indices.subspan(lo, hi - lo);
                Tensor targets = source.batch(part);
                Tensor starts(targets.shape);
                const std::size_t d = source.image_numel();
                for (std::size_t i = 0; i < part.size(); ++i) {
                    Rng rng(derive_seed(cfg.seed, part[i]));
                    auto x0 = initial_point(source.image(part[i]), cfg.init_mode, rng);
                    std::copy(x0.begin(), x0.end(), starts.data.begin() + static_cast<long>(i * d));
                }
                auto res = robustify_batch(features, targets, starts, cfg, tol);
                for (std::size_t i = 0; i < part.size(); ++i) {
                    res[i].label = source.labels[part[i]];
                    res[i].source_index = part[i];
                    res[i].oracle_task_index = oracle_task_index;
                    out.samples[lo + i] = std::move(res[i]);
                }
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, chunks));
    if (n_threads == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);

    std::size_t errors = 0;
    const RobustSample* first = nullptr;
    for (const auto& s : out.samples)
        if (s.error) {
            ++errors;
            if (!first) first = &s;
        }
    if (errors * 1000 > out.samples.size())
        throw OptimizationError(first->source_index, first->iterations + 1,
                                std::to_string(errors) + " of " + std::to_string(out.samples.size()) +
                                    " samples failed to optimise; first: sample " +
                                    std::to_string(first->source_index) + ", " + *first->error);
    return out;
}

RobustDataset build_robust_dataset(const Model& oracle, const Dataset& source, const RobustifyConfig& cfg,
                                   std::size_t jobs) {
    std::vector<std::size_t> all(source.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return robustify_indices(oracle, source, all, cfg, 0, jobs);
}

RobustDataset extract_after_task(const ModelSnapshot& oracle, const TaskStream& stream, const RobustifyConfig& cfg,
                                 std::size_t jobs) {
    const std::size_t t = oracle.task_index;
    if (t >= stream.size())
        throw UsageError("extract_after_task: snapshot task " + std::to_string(t + 1) + " beyond stream of " +
                         std::to_string(stream.size()));
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k <= t; ++k)
        idx.insert(idx.end(), stream.tasks[k].train_indices.begin(), stream.tasks[k].train_indices.end());
    std::sort(idx.begin(), idx.end());
    Model m = restore(oracle);
    return robustify_indices(m, *stream.train, idx, cfg, t, jobs);
}

Dataset RobustDataset::to_dataset() const {
    Dataset d;
    d.image_shape = image_shape;
    d.class_names = class_names;
    d.split = Split::train;
    const std::size_t n = image_shape[0] * image_shape[1] * image_shape[2];
    d.pixels.reserve(samples.size() * n);
    for (const auto& s : samples) {
        d.labels.push_back(s.label);
        for (float v : s.x_cl) d.pixels.push_back(std::round(255.0f * std::clamp(v, 0.0f, 1.0f)) / 255.0f);
    }
    return d;
}

Dataset incremental_training_set(const std::vector<RobustDataset>& extractions, const TaskStream& stream) {
    if (extractions.size() != stream.size())
        throw UsageError("incremental_training_set: need one extraction per task");
    Dataset out = *stream.train;
    const std::size_t d = out.image_numel();
    for (std::size_t t = 0; t < stream.size(); ++t) {
        Dataset part = extractions[t].to_dataset();
        std::map<std::size_t, std::size_t> pos;
        for (std::size_t i = 0; i < extractions[t].samples.size(); ++i) pos[extractions[t].samples[i].source_index] = i;
        for (auto idx : stream.tasks[t].train_indices) {
            auto it = pos.find(idx);
            if (it == pos.end())
                throw InternalError("incremental_training_set: extraction " + std::to_string(t + 1) +
                                    " misses sample " + std::to_string(idx));
            std::copy_n(part.pixels.begin() + static_cast<long>(it->second * d), d,
                        out.pixels.begin() + static_cast<long>(idx * d));
        }
    }
    return out;
}

std::string dataset_hash(const Dataset& data) {
    Fnv1a h;
    h.update(std::span<const std::size_t>(data.image_shape));
    h.update(std::span<const int>(data.labels));
    h.update(std::span<const float>(data.pixels));
    return hex64(h.digest());
}

nlohmann::json robust_manifest(const RobustDataset& data) {
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : data.samples) {
        nlohmann::json j{{"source_index", s.source_index},
                         {"label", s.label},
                         {"oracle_task_index", s.oracle_task_index},
                         {"initial_objective", s.initial_objective},
                         {"final_objective", s.final_objective},
                         {"iterations", s.iterations}};
        if (s.error) j["error"] = *s.error;
        samples.push_back(std::move(j));
    }
    return {{"format", "clr-robust-dataset"},
            {"version", 1},
            {"image_shape", data.image_shape},
            {"class_names", data.class_names},
            {"oracle_hash", data.oracle_hash},
            {"source_hash", data.source_hash},
            {"config", data.config.to_json()},
            {"samples", samples}};
}

void export_robust_dataset(const RobustDataset& data, const std::filesystem::path& directory, const std::string& stem) {
    std::error_code ec;
    std::filesystem::create_directories(directory, ec);
    write_record_file(data.to_dataset(), directory / (stem + ".bin"));
    std::ofstream out(directory / (stem + ".json"));
    if (!out) throw IoError("cannot write manifest " + (directory / (stem + ".json")).string());
    out << robust_manifest(data).dump(1) << '\n';
    if (!out) throw IoError("failed writing manifest " + (directory / (stem + ".json")).string());
}

RobustDataset load_robust_dataset(const std::filesystem::path& directory, const std::string& stem) {
    const auto manifest_path = directory / (stem + ".json");
    std::ifstream in(manifest_path);
    if (!in) throw IoError("cannot open manifest " + manifest_path.string());
    RobustDataset out;
    try {
        auto j = nlohmann::json::parse(in);
        if (j.at("format") != "clr-robust-dataset" || j.at("version") != 1)
            throw DataError(manifest_path.string() + ": not a version 1 robust dataset manifest");
        out.image_shape = j.at("image_shape").get<std::array<std::size_t, 3>>();
        out.class_names = j.at("class_names").get<std::vector<std::string>>();
        out.oracle_hash = j.at("oracle_hash").get<std::string>();
        out.source_hash = j.at("source_hash").get<std::string>();
        out.config = RobustifyConfig::from_json(j.at("config"));
        RecordFormat fmt{out.image_shape, 255};
        Dataset d = load_record_file(directory / (stem + ".bin"), fmt, out.class_names, Split::train);
        const auto& samples = j.at("samples");
        if (samples.size() != d.size())
            throw DataError(manifest_path.string() + ": manifest lists " + std::to_string(samples.size()) +
                            " samples but the records hold " + std::to_string(d.size()));
        for (std::size_t i = 0; i < d.size(); ++i) {
            const auto& m = samples[i];
            RobustSample s;
            auto img = d.image(i);
            s.x_cl.assign(img.begin(), img.end());
            s.label = m.at("label").get<int>();
            if (s.label != d.labels[i]) throw DataError(manifest_path.string() + ": label mismatch at sample " + std::to_string(i));
            s.source_index = m.at("source_index").get<std::size_t>();
            s.oracle_task_index = m.at("oracle_task_index").get<std::size_t>();
            s.initial_objective = m.at("initial_objective").get<float>();
            s.final_objective = m.at("final_objective").get<float>();
            s.iterations = m.at("iterations").get<std::size_t>();
            if (m.contains("error")) s.error = m.at("error").get<std::string>();
            out.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(manifest_path.string() + ": " + e.what());
    }
    return out;
}

} // namespace clr
