#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "clr/error.hpp"
#include "clr/experiment.hpp"
#include "clr/report.hpp"

namespace {

struct Options {
    std::string config;
    std::string output;
    std::string profile = "desk";
    std::size_t jobs = 0;
    std::string seed_override;
};

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> seeds;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) throw clr::ConfigError("--seed-override: empty entry in '" + text + "'");
        std::size_t used = 0;
        std::uint64_t v = 0;
        try {
            if (item.find('-') != std::string::npos) throw std::invalid_argument("negative");
            v = std::stoull(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw clr::ConfigError("--seed-override: '" + item + "' is not a non-negative integer");
        seeds.push_back(v);
    }
    if (seeds.empty()) throw clr::ConfigError("--seed-override: no seeds given");
    return seeds;
}

clr::ExperimentConfig resolve(const Options& o) {
    const auto profile = clr::parse_profile(o.profile);
    clr::ExperimentConfig cfg = o.config.empty() ? clr::default_config(profile) : clr::parse_config(o.config, profile);
    if (!o.output.empty()) cfg.output_dir = o.output;
    if (o.jobs) cfg.jobs = o.jobs;
    if (!o.seed_override.empty()) cfg.seeds = parse_seed_list(o.seed_override);
    clr::validate_config(cfg);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Continual-learning benchmark with robustified datasets"};
    app.require_subcommand(1);
    Options opt;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", opt.config, "JSON config file (over the profile defaults)");
        sub->add_option("--output", opt.output, "Output directory");
        sub->add_option("--profile", opt.profile, "Default profile")->check(CLI::IsMember({"desk", "paper"}));
        sub->add_option("--jobs", opt.jobs, "Parallel workers")->check(CLI::PositiveNumber);
        sub->add_option("--seed-override", opt.seed_override, "Comma-separated seed list");
    };
    auto* train = app.add_subcommand("train-oracle", "Train the replay oracle for every task count");
    auto* robust = app.add_subcommand("build-robust", "Build the robustified training set");
    auto* bench = app.add_subcommand("benchmark", "Run every strategy on standard and robust data");
    auto* report = app.add_subcommand("report", "Re-render the report from results.json");
    for (auto* s : {train, robust, bench, report}) add_common(s);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const auto cfg = resolve(opt);
        if (train->parsed()) {
            for (const auto& o : clr::cmd_train_oracle(cfg, std::cerr))
                std::cout << "T=" << o.tasks << " oracle " << o.key << " ACC " << clr::average_accuracy(o.matrix) << "\n";
        } else if (robust->parsed()) {
            for (const auto& r : clr::cmd_build_robust(cfg, std::cerr))
                std::cout << "T=" << r.tasks << " robust dataset " << r.directory.string() << "\n";
        } else if (bench->parsed()) {
            auto results = clr::cmd_benchmark(cfg, std::cerr);
            std::cout << clr::report_markdown(clr::aggregate(results));
        } else {
            clr::cmd_report(cfg, std::cout);
        }
    } catch (const clr::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return clr::exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
