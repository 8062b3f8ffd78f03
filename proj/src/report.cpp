#include "clr/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "clr/error.hpp"

namespace clr {

std::string fmt_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

namespace {

std::string percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
    return buf;
}

} // namespace

std::vector<CurvePoint> accuracy_curves(const std::vector<RunResult>& results) {
    struct Group {
        std::string strategy, variant;
        std::size_t tasks;
        std::vector<std::vector<double>> per_task; // [t] -> values over seeds
    };
    std::vector<Group> groups;
    for (const auto& r : results) {
        auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
            return g.strategy == r.strategy && g.variant == r.variant && g.tasks == r.tasks;
        });
        if (it == groups.end()) {
            groups.push_back({r.strategy, r.variant, r.tasks, std::vector<std::vector<double>>(r.tasks)});
            it = groups.end() - 1;
        }
        for (std::size_t t = 0; t < r.tasks; ++t) {
            double v = 0.0;
            if (r.matrix.is_joint()) {
                const auto& row = r.matrix.final_row();
                double s = 0.0;
                for (std::size_t i = 0; i <= t; ++i) s += row[i];
                v = s / static_cast<double>(t + 1);
            } else {
                v = accuracy_so_far(r.matrix, t);
            }
            it->per_task[t].push_back(v);
        }
    }
    std::vector<CurvePoint> out;
    for (const auto& g : groups)
        for (std::size_t t = 0; t < g.tasks; ++t) {
            auto ms = mean_std(g.per_task[t]);
            out.push_back({g.strategy, g.variant, g.tasks, t + 1, g.per_task[t].size(), ms.mean, ms.std});
        }
    return out;
}

nlohmann::json results_json(const std::vector<RunResult>& results) {
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : results) runs.push_back(r.to_json());
    return {{"version", kResultsVersion}, {"runs", runs}};
}

std::vector<RunResult> parse_results(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("version") || !j.contains("runs"))
        throw DataError("results: expected an object with 'version' and 'runs'");
    if (j.at("version") != kResultsVersion)
        throw DataError("results: unsupported version " + j.at("version").dump());
    std::vector<RunResult> out;
    for (const auto& r : j.at("runs")) out.push_back(RunResult::from_json(r));
    return out;
}

std::vector<RunResult> read_results(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return parse_results(j);
}

std::string table_csv(const BenchmarkTable& table) {
    std::string out = "strategy,variant,tasks,seeds,mean_acc,std_acc\n";
    for (const auto& c : table.cells)
        out += c.strategy + ',' + c.variant + ',' + std::to_string(c.tasks) + ',' + std::to_string(c.seeds.size()) +
               ',' + fmt_real(c.mean) + ',' + fmt_real(c.std) + '\n';
    return out;
}

std::string curves_csv(const std::vector<CurvePoint>& curves) {
    std::string out = "strategy,variant,tasks,task,seeds,mean_acc,std_acc\n";
    for (const auto& p : curves)
        out += p.strategy + ',' + p.variant + ',' + std::to_string(p.tasks) + ',' + std::to_string(p.task) + ',' +
               std::to_string(p.seeds) + ',' + fmt_real(p.mean) + ',' + fmt_real(p.std) + '\n';
    return out;
}

std::string report_markdown(const BenchmarkTable& table) {
    std::vector<std::string> strategies;
    std::set<std::size_t> task_counts;
    for (const auto& c : table.cells) {
        if (std::find(strategies.begin(), strategies.end(), c.strategy) == strategies.end())
            strategies.push_back(c.strategy);
        task_counts.insert(c.tasks);
    }
    std::ostringstream md;
    md << "# Benchmark results\n\n"
       << "Average accuracy (%) after the last task: mean ± sample standard deviation over seeds.\n"
       << "All runs are evaluated on the standard test split. A CLR entry is bold when its mean\n"
       << "exceeds the same strategy trained on the standard data.\n\n";
    if (table.cells.empty()) {
        md << "No runs recorded.\n";
        return md.str();
    }
    md << "| Strategy |";
    for (auto t : task_counts) md << " T=" << t << " |";
    md << "\n|---|";
    for (std::size_t i = 0; i < task_counts.size(); ++i) md << "---|";
    md << '\n';
    for (const auto& s : strategies)
        for (const std::string variant : {"standard", "clr"}) {
            bool any = false;
            for (auto t : task_counts) any = any || table.find(s, variant, t);
            if (!any) continue;
            md << "| " << s << (variant == "clr" ? "-CLR" : "") << " |";
            for (auto t : task_counts) {
                const TableCell* c = table.find(s, variant, t);
                if (!c) {
                    md << " - |";
                    continue;
                }
                std::string cell = percent(c->mean) + " ± " + percent(c->std);
                const TableCell* base = variant == "clr" ? table.find(s, "standard", t) : nullptr;
                if (base && c->mean > base->mean) cell = "**" + cell + "**";
                md << ' ' << cell << " |";
            }
            md << '\n';
        }
    return md.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write " + path.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw IoError("failed writing " + path.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_report(const BenchmarkTable& table, const std::vector<RunResult>& results,
                  const std::filesystem::path& directory) {
    std::error_code ec;
    std::filesystem::create_directories(directory, ec);
    if (ec || !std::filesystem::is_directory(directory))
        throw IoError("cannot create report directory " + directory.string());
    write_text_file(directory / "results.json", results_json(results).dump(1) + "\n");
    write_text_file(directory / "table.csv", table_csv(table));
    write_text_file(directory / "curves.csv", curves_csv(accuracy_curves(results)));
    write_text_file(directory / "report.md", report_markdown(table));
}

} // namespace clr
