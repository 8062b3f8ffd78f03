#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "clr/metrics.hpp"

namespace clr {

inline constexpr int kResultsVersion = 1;

struct CurvePoint {
    std::string strategy;
    std::string variant;
    std::size_t tasks = 0;
    std::size_t task = 0; // 1-based
    std::size_t seeds = 0;
    double mean = 0.0;
    double std = 0.0;
};

/// ACC-so-far after each task, aggregated over seeds per (strategy, variant,
/// tasks). Row t only reads matrix rows up to t. A joint (multitask) matrix
/// contributes the mean of the first t entries of its single row.
std::vector<CurvePoint> accuracy_curves(const std::vector<RunResult>& results);

nlohmann::json results_json(const std::vector<RunResult>& results);
std::vector<RunResult> parse_results(const nlohmann::json& j);
/// Throws IoError when the file is missing, DataError when it is malformed.
std::vector<RunResult> read_results(const std::filesystem::path& path);

std::string table_csv(const BenchmarkTable& table);
std::string curves_csv(const std::vector<CurvePoint>& curves);
std::string report_markdown(const BenchmarkTable& table);

/// Writes results.json, table.csv, curves.csv and report.md into `directory`.
void write_report(const BenchmarkTable& table, const std::vector<RunResult>& results,
                  const std::filesystem::path& directory);

/// Writes through a temporary file and a rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

/// "%.17g" rendering shared by every CSV writer.
std::string fmt_real(double v);

} // namespace clr
