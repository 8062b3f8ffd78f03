// Acceptance run: one PASS/FAIL line per criterion on the pinned desk fixture.
//
//   acceptance [--workdir DIR] [--only 1,7,8]
//
// Exit status is the number of failed criteria (capped at 100).

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "CLI11.hpp"
#include "clr/error.hpp"
#include "clr/experiment.hpp"
#include "clr/report.hpp"
#include "grad_suite.hpp"
#include "properties.hpp"

using namespace clr;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

double since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / double(v.size());
}

// Shared state between criteria that look at the same runs.
struct Context {
    std::filesystem::path workdir;
    ExperimentConfig desk = default_config(Profile::desk);
    LoadedData data;
    std::map<std::size_t, std::vector<StrategyRun>> finetune; // T -> per seed
    double finetune_secs_t5 = 0;
    std::vector<RunResult> pipeline;
    double pipeline_secs = 0;
    bool pipeline_ok = false;
    std::string pipeline_error;

    const LoadedData& loaded() {
        if (!data.train) data = load_data(desk);
        return data;
    }
    StrategyRun run(const std::string& strategy, std::size_t T, std::uint64_t seed) {
        TaskStream st = make_stream(desk, loaded(), T);
        Model m = build_model(model_config_for(desk, *loaded().train, seed));
        TrainConfig tc = desk.train;
        tc.seed = seed;
        StrategySpec spec;
        spec.kind = parse_strategy(strategy);
        spec.replay_capacity = desk.replay_capacity;
        spec.ewc_lambda = desk.ewc_lambda;
        return run_strategy(spec, st, m, tc);
    }
    void ensure_pipeline() {
        if (pipeline_ok || !pipeline_error.empty()) return;
        ExperimentConfig c = desk;
        c.output_dir = workdir / "run1";
        std::ofstream log(workdir / "run1.log");
        const auto t0 = std::chrono::steady_clock::now();
        try {
            pipeline = cmd_benchmark(c, log);
            pipeline_ok = true;
        } catch (const std::exception& e) {
            pipeline_error = e.what();
        }
        pipeline_secs = since(t0);
    }
    std::map<std::string, double> means(std::size_t T) const {
        std::map<std::string, std::vector<double>> v;
        for (const auto& r : pipeline)
            if (r.tasks == T) v[r.strategy + (r.variant == "clr" ? "-CLR" : "")].push_back(r.acc);
        std::map<std::string, double> out;
        for (auto& [k, xs] : v) out[k] = mean_of(xs);
        return out;
    }
};

Outcome c1_gradients(Context&) {
    const auto t0 = std::chrono::steady_clock::now();
    auto cases = testing::run_grad_suite();
    const double secs = since(t0);
    double worst = 0;
    std::string worst_name, failing;
    std::size_t checked = 0, kinks = 0;
    for (const auto& c : cases) {
        checked += c.checked;
        kinks += c.kinks_skipped;
        if (c.max_rel_error >= worst) worst = c.max_rel_error, worst_name = c.name;
        if (!(c.max_rel_error < 1e-3)) failing += " " + c.name;
    }
    Outcome o;
    o.pass = failing.empty() && secs < 30;
    o.detail = std::to_string(cases.size()) + " cases, " + std::to_string(checked) + " elements (" +
               std::to_string(kinks) + " skipped at relu kinks), worst rel error " + num(worst, 6) + " (" +
               worst_name + ")" + (failing.empty() ? "" : ", failing:" + failing) + ", " + num(secs, 1) + " s";
    return o;
}

Outcome c2_finetune(Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o{true, ""};
    for (std::size_t T : {2u, 5u, 9u}) {
        const auto tt = std::chrono::steady_clock::now();
        std::vector<double> accs;
        double min_diag = 1.0;
        for (auto seed : ctx.desk.seeds) {
            auto run = ctx.run("finetune", T, seed);
            for (std::size_t t = 0; t < T; ++t) min_diag = std::min(min_diag, run.matrix.rows()[t][t]);
            accs.push_back(average_accuracy(run.matrix));
            ctx.finetune[T].push_back(std::move(run));
        }
        if (T == 5) ctx.finetune_secs_t5 = since(tt);
        const double acc = mean_of(accs), target = 1.0 / double(T);
        const bool ok = std::abs(acc - target) <= 0.08 && min_diag >= 0.9;
        o.pass = o.pass && ok;
        o.detail += "T=" + std::to_string(T) + " ACC " + num(100 * acc, 2) + " vs " + num(100 * target, 2) +
                    " (min current-task acc " + num(100 * min_diag, 1) + ")" + (ok ? "" : " x") + "; ";
    }
    const double secs = since(t0);
    o.pass = o.pass && secs < 600;
    o.detail += num(secs, 1) + " s";
    return o;
}

Outcome c3_replay(Context& ctx) {
    if (!ctx.finetune.count(5))
        for (auto seed : ctx.desk.seeds) ctx.finetune[5].push_back(ctx.run("finetune", 5, seed));
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<double> ft, rp;
    for (const auto& r : ctx.finetune[5]) ft.push_back(average_accuracy(r.matrix));
    for (auto seed : ctx.desk.seeds) rp.push_back(average_accuracy(ctx.run("replay", 5, seed).matrix));
    const double secs = since(t0) + ctx.finetune_secs_t5;
    const double gap = mean_of(rp) - mean_of(ft);
    return {gap >= 0.20 && secs < 600, "T=5 replay " + num(100 * mean_of(rp), 2) + " vs finetune " +
                                           num(100 * mean_of(ft), 2) + " (gap " + num(100 * gap, 2) +
                                           " points, need 20), " + num(secs, 1) + " s"};
}

Outcome c4_clr_trend(Context& ctx) {
    ctx.ensure_pipeline();
    if (!ctx.pipeline_ok) return {false, "pipeline failed: " + ctx.pipeline_error};
    Outcome o{true, ""};
    for (std::size_t T : {2u, 5u}) {
        auto m = ctx.means(T);
        for (std::string s : {"finetune", "ewc", "replay"}) {
            const bool ok = m.at(s + "-CLR") > m.at(s);
            o.pass = o.pass && ok;
            o.detail += s + " T=" + std::to_string(T) + " " + num(100 * m.at(s), 2) + " -> " +
                        num(100 * m.at(s + "-CLR"), 2) + (ok ? "" : " x") + "; ";
        }
    }
    o.pass = o.pass && ctx.pipeline_secs < 1800;
    o.detail += "pipeline " + num(ctx.pipeline_secs, 1) + " s";
    return o;
}

Outcome c5_multitask(Context& ctx) {
    ctx.ensure_pipeline();
    if (!ctx.pipeline_ok) return {false, "pipeline failed: " + ctx.pipeline_error};
    Outcome o{true, ""};
    for (std::size_t T : {2u, 5u}) {
        auto m = ctx.means(T);
        const double mt = m.at("multitask");
        std::string best;
        double best_v = -1;
        for (const auto& [k, v] : m)
            if (k.rfind("multitask", 0) != 0 && v > best_v) best_v = v, best = k;
        const bool ok = mt >= best_v;
        o.pass = o.pass && ok;
        o.detail += "T=" + std::to_string(T) + " multitask " + num(100 * mt, 2) + " vs best " + best + " " +
                    num(100 * best_v, 2) + (ok ? "" : " x") + "; ";
    }
    return o;
}

Outcome c6_robustify(Context& ctx) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o{true, ""};
    Rng rng(21);
    double worst_gap = -1;
    for (std::uint64_t k = 0; k < 3; ++k) {
        auto g = testing::run_tiny_grid_case(rng, k);
        const bool ok = g.invariants && g.descent <= g.grid_best + 1.0 / 64 && std::abs(g.reported - g.descent) < 1e-5;
        o.pass = o.pass && ok;
        worst_gap = std::max(worst_gap, g.descent - g.grid_best);
    }
    o.detail += "tiny oracle: descent - grid best <= " + num(worst_gap, 8) + " (spacing " + num(1.0 / 64, 6) + "); ";

    // Full traces on 1000 desk samples with the cached final oracle.
    ExperimentConfig c = ctx.desk;
    c.output_dir = ctx.workdir / "run1";
    c.task_counts = {5};
    std::ostringstream log;
    auto oracles = cmd_train_oracle(c, log);
    Model oracle = restore(oracles[0].snapshots.back());
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < ctx.loaded().train->size(); i += 10) idx.push_back(i);
    auto rd = robustify_indices(oracle, *ctx.loaded().train, idx, c.robustify, 4, 1);
    std::size_t bad = 0;
    for (const auto& s : rd.samples) bad += !testing::robust_sample_ok(s);
    o.pass = o.pass && bad == 0;
    o.detail += "desk traces: " + std::to_string(rd.size() - bad) + "/" + std::to_string(rd.size()) + " ok; ";

    // Every exported sample of the pipeline's robust sets: final <= initial, pixels in range.
    std::size_t exported = 0, exported_bad = 0;
    for (std::size_t T : c.task_counts) {
        ExperimentConfig e = ctx.desk;
        e.output_dir = ctx.workdir / "run1";
        e.task_counts = {T};
        for (const auto& r : cmd_build_robust(e, log)) {
            auto back = load_robust_dataset(r.directory, "robust_after_task_" + std::to_string(T));
            for (const auto& s : back.samples) {
                ++exported;
                exported_bad += !(s.final_objective <= s.initial_objective && s.final_objective >= 0) ||
                                !std::all_of(s.x_cl.begin(), s.x_cl.end(), [](float v) { return v >= 0 && v <= 1; });
            }
        }
    }
    o.pass = o.pass && exported_bad == 0 && exported > 0;
    o.detail += "exported D_R: " + std::to_string(exported - exported_bad) + "/" + std::to_string(exported) + " ok; ";
    const double secs = since(t0);
    o.pass = o.pass && secs < 120;
    o.detail += num(secs, 1) + " s";
    return o;
}

Outcome c7_acc(Context&) {
    const auto t0 = std::chrono::steady_clock::now();
    auto p = testing::run_acc_property(1000, 2024);
    const double secs = since(t0);
    const bool ok = p.cases == 1000 && p.acc_error < 1e-9 && p.mean_error < 1e-9 && p.std_error < 1e-9;
    char buf[200];
    std::snprintf(buf, sizeof buf, "%zu cases, max |dACC| %.2e, |dmean| %.2e, |dstd| %.2e, %.2f s", p.cases,
                  p.acc_error, p.mean_error, p.std_error, secs);
    return {ok && secs < 10, buf};
}

Outcome c8_buffer(Context&) {
    const auto t0 = std::chrono::steady_clock::now();
    auto b = testing::run_buffer_property(10000, 37, 8);
    auto r = testing::run_retention(4000, 1000, 10, 9);
    const double secs = since(t0);
    // About 0.27% of items fall outside 3 sigma by chance; allow 1%.
    const bool ok = b.violations == 0 && r.outside_3sigma * 100 <= r.items && r.max_decile_z < 3 && r.max_z < 5;
    return {ok && secs < 60,
            std::to_string(b.operations) + " updates, " + std::to_string(b.violations) + " invariant violations" +
                (b.first.empty() ? "" : " (" + b.first + ")") + "; retention: " + std::to_string(r.outside_3sigma) +
                "/" + std::to_string(r.items) + " items outside 3 sigma, max z " + num(r.max_z, 2) +
                ", worst decile z " + num(r.max_decile_z, 2) + "; " + num(secs, 1) + " s"};
}

Outcome c9_determinism(Context& ctx) {
    ctx.ensure_pipeline();
    if (!ctx.pipeline_ok) return {false, "pipeline failed: " + ctx.pipeline_error};
    ExperimentConfig c = ctx.desk;
    c.output_dir = ctx.workdir / "run2";
    std::ofstream log(ctx.workdir / "run2.log");
    const auto t0 = std::chrono::steady_clock::now();
    try {
        cmd_benchmark(c, log);
    } catch (const std::exception& e) {
        return {false, std::string("second run failed: ") + e.what()};
    }
    const double secs = since(t0);
    std::size_t compared = 1, differing = 0;
    if (read_text_file(ctx.workdir / "run1" / "results.json") != read_text_file(c.output_dir / "results.json"))
        ++differing;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(ctx.workdir / "run1" / "cache" / "robust")) {
        if (!entry.is_regular_file()) continue;
        auto rel = std::filesystem::relative(entry.path(), ctx.workdir / "run1");
        ++compared;
        if (!std::filesystem::exists(c.output_dir / rel) ||
            read_text_file(entry.path()) != read_text_file(c.output_dir / rel))
            ++differing;
    }
    const bool ok = differing == 0 && compared > 1 && secs < 2 * ctx.pipeline_secs;
    return {ok, std::to_string(compared) + " files compared (results.json and the D_R exports), " +
                    std::to_string(differing) + " differ; rerun " + num(secs, 1) + " s vs limit " +
                    num(2 * ctx.pipeline_secs, 1) + " s"};
}

int run_cli(const std::string& args) {
    const int status = std::system((std::string(CLR_CLI_PATH) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome c10_formats(Context& ctx) {
    const auto dir = ctx.workdir / "formats";
    std::filesystem::create_directories(dir / "cifar");
    Rng rng(10);
    auto records = [&](std::size_t n) {
        std::string b;
        for (std::size_t r = 0; r < n; ++r) {
            b.push_back(char(rng.below(10)));
            for (std::size_t k = 0; k < 3072; ++k) b.push_back(char(rng.below(256)));
        }
        return b;
    };
    std::size_t checks = 0, failed = 0;
    auto expect = [&](bool ok) { ++checks, failed += !ok; };

    std::string all;
    for (int i = 1; i <= 5; ++i) {
        auto part = records(3);
        all += part;
        write_text_file(dir / "cifar" / ("data_batch_" + std::to_string(i) + ".bin"), part);
    }
    const auto test_bytes = records(4);
    write_text_file(dir / "cifar" / "test_batch.bin", test_bytes);
    auto [train, test] = load_cifar10_binary(dir / "cifar");
    auto enc = encode_records(train);
    expect(std::string(enc.begin(), enc.end()) == all);
    write_record_file(test, dir / "test_copy.bin");
    expect(read_text_file(dir / "test_copy.bin") == test_bytes);

    auto error_of = [](const std::function<void()>& fn) -> std::string {
        try {
            fn();
        } catch (const DataError& e) {
            return std::string("data:") + e.what();
        } catch (const std::exception& e) {
            return std::string("other:") + e.what();
        }
        return "";
    };
    auto truncated = all.substr(0, 2 * 3073 + 17);
    Dataset d;
    auto msg = error_of([&] {
        decode_records(std::span(reinterpret_cast<const unsigned char*>(truncated.data()), truncated.size()),
                       RecordFormat{}, d);
    });
    expect(msg.rfind("data:", 0) == 0 && msg.find("byte offset 6146") != std::string::npos);
    auto bad_label = all;
    bad_label[3073] = char(12);
    msg = error_of([&] {
        Dataset e;
        decode_records(std::span(reinterpret_cast<const unsigned char*>(bad_label.data()), bad_label.size()),
                       RecordFormat{}, e);
    });
    expect(msg.rfind("data:", 0) == 0 && msg.find("record 1") != std::string::npos);

    // The command line maps both to exit code 3; a bad config key to 2.
    write_text_file(dir / "cifar" / "data_batch_2.bin", truncated);
    write_text_file(dir / "cifar.json", "{\"dataset\": {\"kind\": \"cifar10\", \"path\": \"" +
                                            (dir / "cifar").string() + "\"}, \"task_counts\": [2]}");
    expect(run_cli("train-oracle --config " + (dir / "cifar.json").string() + " --output " + (dir / "out").string()) == 3);
    write_text_file(dir / "cifar" / "data_batch_2.bin", bad_label.substr(0, 3 * 3073));
    expect(run_cli("train-oracle --config " + (dir / "cifar.json").string() + " --output " + (dir / "out").string()) == 3);
    write_text_file(dir / "typo.json", "{\"train\": {\"momentumm\": 0.9}}");
    expect(run_cli("benchmark --config " + (dir / "typo.json").string()) == 2);

    // Robust set export: records re-read byte-exactly.
    RobustDataset rd;
    rd.image_shape = {3, 32, 32};
    rd.class_names = cifar10_class_names();
    for (std::size_t i = 0; i < 5; ++i) {
        RobustSample s;
        s.label = int(i);
        s.source_index = i;
        s.trace = {1.0f};
        s.initial_objective = s.final_objective = 1.0f;
        for (std::size_t k = 0; k < 3072; ++k) s.x_cl.push_back(float(rng.uniform()));
        rd.samples.push_back(s);
    }
    export_robust_dataset(rd, dir, "dr");
    auto first = read_text_file(dir / "dr.bin");
    export_robust_dataset(load_robust_dataset(dir, "dr"), dir, "dr2");
    expect(read_text_file(dir / "dr2.bin") == first);

    return {failed == 0, std::to_string(checks - failed) + "/" + std::to_string(checks) +
                             " fixture checks (round-trips, truncated and bad-label records, CLI exit codes)"};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria on the desk fixture"};
    std::string workdir = (std::filesystem::temp_directory_path() / "clr-acceptance").string();
    std::vector<int> only;
    app.add_option("--workdir", workdir, "Scratch directory (cleared first)");
    app.add_option("--only", only, "Criteria to run")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    Context ctx;
    ctx.workdir = workdir;
    std::error_code ec;
    std::filesystem::remove_all(ctx.workdir, ec);
    std::filesystem::create_directories(ctx.workdir);

    const std::vector<std::pair<std::string, std::function<Outcome(Context&)>>> criteria{
        {"gradient correctness", c1_gradients},
        {"finetune forgetting near 100/T", c2_finetune},
        {"replay beats finetune by 20 points", c3_replay},
        {"CLR beats standard data", c4_clr_trend},
        {"multitask upper bound", c5_multitask},
        {"robust optimiser validity", c6_robustify},
        {"ACC and aggregation exactness", c7_acc},
        {"replay buffer statistics", c8_buffer},
        {"pipeline determinism", c9_determinism},
        {"format fidelity", c10_formats},
    };
    // Cheap criteria first; the pipeline runs once for 4, 5, 6 and 9.
    const std::vector<int> order{1, 7, 8, 10, 2, 3, 4, 5, 6, 9};
    std::set<int> selected(only.begin(), only.end());
    int failed = 0, ran = 0;
    for (int k : order) {
        if (!selected.empty() && !selected.count(k)) continue;
        Outcome o;
        try {
            o = criteria[std::size_t(k - 1)].second(ctx);
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        ++ran;
        failed += !o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << k << "] " << criteria[std::size_t(k - 1)].first << ": "
                  << o.detail << std::endl;
    }
    std::cout << ran - failed << "/" << ran << " criteria passed" << std::endl;
    return std::min(failed, 100);
}
