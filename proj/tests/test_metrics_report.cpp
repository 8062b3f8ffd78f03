#include <cmath>
#include <fstream>

#include "clr/error.hpp"
#include "clr/metrics.hpp"
#include "clr/report.hpp"
#include "doctest.h"
#include "properties.hpp"
#include "support.hpp"

using namespace clr;

namespace {

AccuracyMatrix lower(std::vector<std::vector<double>> rows) {
    AccuracyMatrix m(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) m.set_row(t, rows[t]);
    return m;
}

RunResult run(std::string strategy, std::string variant, std::uint64_t seed, AccuracyMatrix m) {
    RunResult r{std::move(strategy), std::move(variant), m.tasks(), seed, m, 0.0, "abc", 0.0};
    r.acc = average_accuracy(r.matrix);
    return r;
}

// Test images carry their own index in pixel 0 so predictions can be scripted.
TaskStream indexed_stream(std::vector<int> train_labels, std::vector<int> test_labels, std::size_t classes,
                          std::size_t tasks) {
    auto make = [&](const std::vector<int>& labels) {
        Dataset d;
        d.image_shape = {1, 1, 1};
        for (std::size_t c = 0; c < classes; ++c) d.class_names.push_back(std::to_string(c));
        d.labels = labels;
        for (std::size_t i = 0; i < labels.size(); ++i) d.pixels.push_back(float(i) / 1000.0f);
        return std::make_shared<Dataset>(d);
    };
    return make_cil_splits(make(train_labels), make(test_labels), tasks);
}

PredictFn scripted(std::vector<int> predictions, std::size_t classes) {
    return [=](const Tensor& batch) {
        Tensor logits({batch.dim(0), classes});
        for (std::size_t n = 0; n < batch.dim(0); ++n) {
            auto i = static_cast<std::size_t>(std::lround(batch.data[n] * 1000.0f));
            logits.data[n * classes + static_cast<std::size_t>(predictions.at(i))] = 1.0f;
        }
        return logits;
    };
}

} // namespace

TEST_CASE("average accuracy") {
    CHECK(average_accuracy(lower({{0.37}})) == 0.37);
    CHECK(average_accuracy(lower({{0.9}, {0.5, 0.8}})) == doctest::Approx(0.65).epsilon(1e-15));
    CHECK(average_accuracy(AccuracyMatrix::joint({0.948})) == 0.948);
    CHECK(average_accuracy(AccuracyMatrix::joint({0.94, 0.956})) == doctest::Approx(0.948).epsilon(1e-15));

    AccuracyMatrix partial(3);
    partial.set_row(0, {1.0});
    CHECK_THROWS_AS(average_accuracy(partial), UsageError);
    CHECK_THROWS_AS(partial.set_row(2, {1, 1, 1}), UsageError);
    CHECK_THROWS_AS(partial.set_row(1, {1.0}), UsageError);
    CHECK_THROWS_AS(partial.set_row(1, {1.0, 1.2}), UsageError);
}

TEST_CASE("aggregate") {
    std::vector<RunResult> rs;
    for (double v : {0.7, 0.8, 0.9}) rs.push_back(run("replay", "standard", rs.size(), AccuracyMatrix::joint({v})));
    rs.push_back(run("replay", "clr", 0, AccuracyMatrix::joint({0.6})));
    auto t = aggregate(rs);
    REQUIRE(t.cells.size() == 2);
    CHECK(t.cells[0].mean == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(t.cells[0].std == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(t.cells[0].seeds == std::vector<std::uint64_t>{0, 1, 2});
    CHECK(t.cells[1].mean == 0.6);
    CHECK(t.cells[1].std == 0.0);
    CHECK(t.find("replay", "clr", 1) == &t.cells[1]);
    CHECK(t.find("replay", "clr", 2) == nullptr);

    // Means stay inside the contributing values.
    for (const auto& c : t.cells) {
        CHECK(c.mean >= *std::min_element(c.values.begin(), c.values.end()));
        CHECK(c.mean <= *std::max_element(c.values.begin(), c.values.end()));
    }

    RunResult bad = rs[0];
    bad.tasks = 2;
    CHECK_THROWS_AS(aggregate({bad}), DataError);
}

TEST_CASE("ACC and aggregation against long double references") {
    auto p = testing::run_acc_property(1000, 77);
    CHECK(p.cases == 1000);
    CHECK(p.acc_error < 1e-12);
    CHECK(p.mean_error < 1e-12);
    CHECK(p.std_error < 1e-12);
}

TEST_CASE("evaluate: perfect, constant and scripted predictors") {
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) labels.push_back(i % 10);
    TaskStream st = indexed_stream(labels, labels, 10, 5);
    std::vector<int> truth(labels.begin(), labels.end());
    CHECK(evaluate(scripted(truth, 10), st, 5) == std::vector<double>(5, 1.0));

    auto constant = [](const Tensor& b) { return Tensor({b.dim(0), 10}); };
    CHECK(evaluate(constant, st, 5) == std::vector<double>{0.5, 0.0, 0.0, 0.0, 0.0});
    CHECK(evaluate(constant, st, 2, 3) == std::vector<double>{0.5, 0.0});

    // Labels 0 1 2 3 split into {0,1} and {2,3}; predicted 0 2 2 1.
    TaskStream four = indexed_stream({0, 1, 2, 3}, {0, 1, 2, 3}, 4, 2);
    CHECK(evaluate(scripted({0, 2, 2, 1}, 4), four, 2) == std::vector<double>{0.5, 0.5});
    CHECK(evaluate(scripted({0, 1, 3, 3}, 4), four, 2) == std::vector<double>{1.0, 0.5});
    CHECK(evaluate(scripted({1, 1, 0, 0}, 4), four, 1) == std::vector<double>{0.5});

    CHECK_THROWS_AS(evaluate(constant, four, 3), UsageError);
    TaskStream empty = indexed_stream({0, 1, 2, 3}, {0, 1, 2, 3}, 4, 2);
    empty.tasks[1].test_indices.clear();
    CHECK_THROWS_AS(evaluate(constant, empty, 2), ConfigError);
}

TEST_CASE("argmax ties go to the lowest index") {
    Tensor z({3, 4}, {1, 1, 1, 1, 0, 2, 2, 0, -1, -1, -1, 0});
    CHECK(argmax_rows(z) == std::vector<int>{0, 1, 3});
}

TEST_CASE("run records check their stored ACC") {
    auto r = run("ewc", "standard", 3, lower({{1.0}, {0.25, 0.75}}));
    auto back = RunResult::from_json(r.to_json());
    CHECK(back.acc == r.acc);
    CHECK(back.matrix == r.matrix);
    auto j = r.to_json();
    j["acc"] = 0.6;
    CHECK_THROWS_AS(RunResult::from_json(j), DataError);
    j = r.to_json();
    j.erase("seed");
    CHECK_THROWS_AS(RunResult::from_json(j), DataError);
}

TEST_CASE("write_report: empty results") {
    testing::TempDir tmp("report-empty");
    write_report(aggregate({}), {}, tmp.path);
    CHECK(read_text_file(tmp.path / "table.csv") == "strategy,variant,tasks,seeds,mean_acc,std_acc\n");
    CHECK(read_text_file(tmp.path / "curves.csv") == "strategy,variant,tasks,task,seeds,mean_acc,std_acc\n");
    CHECK(read_results(tmp.path / "results.json").empty());
    CHECK(read_text_file(tmp.path / "report.md").find("No runs recorded") != std::string::npos);
}

TEST_CASE("write_report: one run") {
    testing::TempDir tmp("report-one");
    std::vector<RunResult> rs{run("finetune", "standard", 1, lower({{1.0}, {0.0, 0.9}, {0.0, 0.0, 0.95}}))};
    write_report(aggregate(rs), rs, tmp.path);
    auto table = read_text_file(tmp.path / "table.csv");
    CHECK(std::count(table.begin(), table.end(), '\n') == 2);
    CHECK(table.find("finetune,standard,3,1,") != std::string::npos);
    auto curves = read_text_file(tmp.path / "curves.csv");
    CHECK(std::count(curves.begin(), curves.end(), '\n') == 4);
    auto pts = accuracy_curves(rs);
    REQUIRE(pts.size() == 3);
    CHECK(pts[0].mean == 1.0);
    CHECK(pts[1].mean == 0.45);
    CHECK(pts[2].mean == doctest::Approx(0.95 / 3).epsilon(1e-15));
}

TEST_CASE("curves never look ahead") {
    auto a = run("replay", "standard", 0, lower({{0.9}, {0.4, 0.8}, {0.3, 0.3, 0.7}}));
    auto b = run("replay", "standard", 0, lower({{0.9}, {0.4, 0.8}, {0.1, 0.2, 0.3}}));
    auto ca = accuracy_curves({a}), cb = accuracy_curves({b});
    CHECK(ca[0].mean == cb[0].mean);
    CHECK(ca[1].mean == cb[1].mean);
    CHECK(ca[2].mean != cb[2].mean);

    // Joint rows contribute prefixes of their single row.
    auto j = run("multitask", "standard", 0, AccuracyMatrix::joint({1.0, 0.5, 0.0}));
    auto cj = accuracy_curves({j});
    CHECK(cj[0].mean == 1.0);
    CHECK(cj[1].mean == 0.75);
    CHECK(cj[2].mean == 0.5);
}

TEST_CASE("report round-trip and markdown") {
    testing::TempDir tmp("report-rt");
    Rng rng(12);
    std::vector<RunResult> rs;
    for (std::string s : {"finetune", "replay"})
        for (std::string v : {"standard", "clr"})
            for (std::size_t T : {2u, 5u})
                for (std::uint64_t seed = 1; seed <= 3; ++seed) {
                    AccuracyMatrix m(T);
                    for (std::size_t t = 0; t < T; ++t) {
                        std::vector<double> row;
                        for (std::size_t i = 0; i <= t; ++i) row.push_back(rng.uniform());
                        m.set_row(t, row);
                    }
                    rs.push_back(run(s, v, seed, m));
                }
    write_report(aggregate(rs), rs, tmp.path);
    auto back = read_results(tmp.path / "results.json");
    REQUIRE(back.size() == rs.size());
    CHECK(table_csv(aggregate(back)) == read_text_file(tmp.path / "table.csv"));
    CHECK(curves_csv(accuracy_curves(back)) == read_text_file(tmp.path / "curves.csv"));
    CHECK(results_json(back).dump(1) + "\n" == read_text_file(tmp.path / "results.json"));
    auto table = aggregate(back);
    CHECK(table.cells.size() == 8);

    auto md = report_markdown(table);
    CHECK(md.find("| finetune-CLR |") != std::string::npos);
    CHECK(md.find("T=2") != std::string::npos);
    std::vector<RunResult> pair{run("ewc", "standard", 1, AccuracyMatrix::joint({0.5})),
                                run("ewc", "clr", 1, AccuracyMatrix::joint({0.6}))};
    CHECK(report_markdown(aggregate(pair)).find("**60.00 ± 0.00**") != std::string::npos);
    pair[1] = run("ewc", "clr", 1, AccuracyMatrix::joint({0.4}));
    CHECK(report_markdown(aggregate(pair)).find("**") == std::string::npos);
}

TEST_CASE("report errors") {
    testing::TempDir tmp("report-err");
    CHECK_THROWS_AS(read_results(tmp.path / "missing.json"), IoError);
    std::ofstream(tmp.path / "bad.json") << "{\"version\": 1, \"runs\": [{}]}";
    CHECK_THROWS_AS(read_results(tmp.path / "bad.json"), DataError);
    std::ofstream(tmp.path / "v2.json") << "{\"version\": 2, \"runs\": []}";
    CHECK_THROWS_AS(read_results(tmp.path / "v2.json"), DataError);
    std::ofstream(tmp.path / "file") << "x";
    CHECK_THROWS_AS(write_report(aggregate({}), {}, tmp.path / "file" / "sub"), IoError);
}
