#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "feddes/errors.hpp"
#include "feddes/experiment.hpp"
#include "feddes/util.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

feddes::ExperimentConfig load_config(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(feddes::read_file(path));
    } catch (const std::exception& e) {
        throw feddes::ConfigError("cannot parse config " + path + ": " + e.what());
    }
    return feddes::ExperimentConfig::from_json(j);
}

void apply_overrides(feddes::ExperimentConfig& cfg, long long seed, const std::string& out,
                     std::size_t workers, bool verbose) {
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    if (!out.empty()) cfg.output_dir = out;
    if (workers > 0) cfg.workers = workers;
    if (verbose) cfg.dump_decisions = true;
}

void print_report(const feddes::FederationReport& r) {
    std::printf("metric: %s\n", r.metric_name.c_str());
    for (const auto& m : r.methods) {
        std::printf("  %-8s mean=%.4f std=%.4f", m.name.c_str(), m.mean, m.stddev);
        if (m.name != "local") std::printf(" win_rate=%.1f%%", m.win_rate_vs_local);
        std::printf("\n");
    }
    std::printf("  ensemble: mean_size=%.3f mean_ess=%.3f ratio=%.3f fallback=%zu/%zu\n",
                r.ensemble.mean_size, r.ensemble.mean_ess, r.ensemble.ess_size_ratio,
                r.ensemble.fallback_decisions, r.ensemble.total_decisions);
    std::printf("  selection-score correlation: rho=%.4f%s\n", r.correlation.overall.rho,
                r.correlation.overall.degenerate ? " (degenerate)" : "");
}

std::vector<std::uint64_t> parse_seeds(const std::string& spec, std::size_t count,
                                       std::uint64_t base) {
    std::vector<std::uint64_t> seeds;
    if (!spec.empty()) {
        std::size_t pos = 0;
        while (pos < spec.size()) {
            std::size_t comma = spec.find(',', pos);
            if (comma == std::string::npos) comma = spec.size();
            seeds.push_back(std::stoull(spec.substr(pos, comma - pos)));
            pos = comma + 1;
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) seeds.push_back(base + i);
    }
    if (seeds.empty()) throw feddes::ConfigError("sweep: no seeds given");
    return seeds;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"feddes: decentralized per-sample dynamic ensemble selection simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir, seeds_spec;
    long long seed = -1;
    std::size_t workers = 0, num_seeds = 5;
    std::uint64_t base_seed = 1;
    bool verbose = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("-c,--config", config_path, "experiment config (JSON)")->required();
        cmd->add_option("-s,--seed", seed, "override config seed");
        cmd->add_option("-o,--out", out_dir, "override output directory");
        cmd->add_option("-w,--workers", workers, "worker threads for per-client stages");
        cmd->add_flag("-v,--verbose", verbose, "also dump per-decision scores to decisions.csv");
    };

    CLI::App* run = app.add_subcommand("run", "run the full pipeline once");
    add_common(run);

    CLI::App* sweep = app.add_subcommand("sweep", "run over several seeds and aggregate");
    add_common(sweep);
    sweep->add_option("--seeds", seeds_spec, "comma-separated seed list");
    sweep->add_option("--num-seeds", num_seeds, "number of consecutive seeds (default 5)");
    sweep->add_option("--base-seed", base_seed, "first seed when --seeds not given");

    CLI::App* report = app.add_subcommand("report", "re-emit reports from cached stage outputs");
    add_common(report);

    CLI11_PARSE(app, argc, argv);

    try {
        feddes::ExperimentConfig cfg = load_config(config_path);
        apply_overrides(cfg, seed, out_dir, workers, verbose);

        if (run->parsed() || report->parsed()) {
            auto result = feddes::run_experiment(cfg);
            print_report(result.report);
            std::printf("reports written to %s\n", cfg.output_dir.c_str());
        } else {
            auto seeds = parse_seeds(seeds_spec, num_seeds, base_seed);
            auto result = feddes::run_sweep(cfg, seeds);
            std::printf("sweep over %zu seeds complete\n", seeds.size());
            for (const auto& [name, m] : result.aggregate.at("methods").items())
                std::printf("  %-8s mean=%.4f (+-%.4f) win_rate=%.1f%%\n", name.c_str(),
                            m.at("mean_of_means").get<double>(),
                            m.at("std_of_means").get<double>(),
                            m.at("mean_win_rate").get<double>());
            std::printf("aggregate written to %s\n", cfg.output_dir.c_str());
        }
        return kExitOk;
    } catch (const feddes::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "stage failure: %s\n", e.what());
        return kExitStage;
    }
}
