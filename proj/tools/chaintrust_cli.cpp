#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "chaintrust/chaintrust.hpp"

namespace fs = std::filesystem;
using namespace chaintrust;

namespace {

// Runs every repetition once, writing per-repetition artifacts as it goes.
MetricsReport run_with_artifacts(const ScenarioConfig& cfg, const fs::path& out) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) raise(ErrorCode::IoError, "cannot create " + out.string());

    MetricsReport report;
    report.scenario = cfg.name;
    report.policy = to_string(cfg.policy.kind);
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
        SimConfig sim = cfg.sim;
        sim.seed = cfg.sim.seed + static_cast<std::uint64_t>(rep);
        SimTrace trace = run(sim, cfg.policy);
        write_run_artifacts(trace, out / ("rep" + std::to_string(rep)));
        RunMetrics m = metrics_from_trace(trace);
        m.rep = rep;
        report.rows.push_back(m);
    }
    for (const auto& row : report.rows)
        for (const auto& [_, field] : detail::metric_columns()) report.mean.*field += row.*field;
    for (const auto& [_, field] : detail::metric_columns())
        report.mean.*field /= static_cast<double>(report.rows.size());
    report.mean.rep = 0;
    return report;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            std::optional<std::string> policy, const std::string& out_dir) {
    ScenarioConfig cfg = load_scenario(config_path);
    if (seed) cfg.sim.seed = *seed;
    if (policy) cfg.policy.kind = policy_from_string(*policy);
    cfg.validate();

    MetricsReport report = run_with_artifacts(cfg, out_dir);
    emit_csv(report, fs::path(out_dir) / "metrics.csv");

    std::cout << "scenario " << cfg.name << " policy " << report.policy << " repetitions "
              << cfg.repetitions << "\n";
    std::cout << "  idle_utilization            " << report.mean.idle_utilization << "\n";
    std::cout << "  avg_hist_evals_per_device   " << report.mean.avg_hist_evals_per_device << "\n";
    std::cout << "  avg_resource_evals_per_task " << report.mean.avg_resource_evals_per_task
              << "\n";
    std::cout << "  matching_rate               " << report.mean.matching_rate << "\n";
    std::cout << "outputs in " << out_dir << " (metrics.csv, rep*/trace.jsonl, rep*/devices/)"
              << "\n";
    return 0;
}

int cmd_compare(const std::vector<std::string>& config_paths, const std::string& out_dir) {
    std::vector<MetricsReport> reports;
    for (const auto& path : config_paths) {
        ScenarioConfig cfg = load_scenario(path);
        reports.push_back(run_scenario(cfg));
    }
    std::cout << comparison_table(reports);
    if (!out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) raise(ErrorCode::IoError, "cannot create " + out_dir);
        for (const auto& r : reports)
            emit_csv(r, fs::path(out_dir) / (r.scenario + "_" + r.policy + ".csv"));
        std::cout << "per-scenario CSVs in " << out_dir << "\n";
    }
    return 0;
}

int cmd_inspect(const std::string& trace_path, const std::string& device) {
    std::ifstream in(trace_path);
    if (!in) raise(ErrorCode::IoError, "cannot open trace " + trace_path);

    std::size_t shown = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
        if (j.is_discarded()) raise(ErrorCode::IoError, "malformed trace line in " + trace_path);
        if (j.value("kind", "") == "snapshot" && j.value("device", "") == device) {
            std::cout << "snapshot at t=" << j.at("time").get<double>() << "\n";
            std::cout << j.at("detail").dump(2) << "\n";
            ++shown;
        } else if (j.value("type", "") == "final_snapshot" && j.value("device", "") == device) {
            std::cout << "final snapshot\n";
            std::cout << j.at("hypergraph").dump(2) << "\n";
            ++shown;
        }
    }
    if (shown == 0)
        std::cout << "no hypergraph snapshots for device " << device << " in " << trace_path
                  << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semantic chain-of-trust simulator"};
    app.require_subcommand(1);

    std::string config_path, out_dir = "out";
    std::optional<std::uint64_t> seed;
    std::optional<std::string> policy;
    auto* run_cmd = app.add_subcommand("run", "run a scenario and write metrics + traces");
    run_cmd->add_option("--config", config_path, "scenario config file (JSON)")->required();
    run_cmd->add_option("--seed", seed, "override the base seed");
    run_cmd->add_option("--policy", policy,
                        "override the policy (SemanticChain, StatisticalIdle, "
                        "EvaluateAllCluster, RandomTrustedPick)");
    run_cmd->add_option("--out", out_dir, "output directory (default: out)");

    std::vector<std::string> config_paths;
    std::string compare_out;
    auto* compare_cmd =
        app.add_subcommand("compare", "run several configs and print a comparison table");
    compare_cmd->add_option("--configs", config_paths, "scenario config files")
        ->required()
        ->expected(-1);
    compare_cmd->add_option("--out", compare_out, "directory for per-scenario CSVs");

    std::string trace_path, device;
    auto* inspect_cmd =
        app.add_subcommand("inspect", "dump a device's hypergraph snapshots from a trace");
    inspect_cmd->add_option("--trace", trace_path, "trace.jsonl produced by run")->required();
    inspect_cmd->add_option("--device", device, "device id, e.g. b_03")->required();

    try {
        app.parse(argc, argv);
        if (run_cmd->parsed()) return cmd_run(config_path, seed, policy, out_dir);
        if (compare_cmd->parsed()) return cmd_compare(config_paths, compare_out);
        if (inspect_cmd->parsed()) return cmd_inspect(trace_path, device);
        return 1;
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;  // usage problems are config errors
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == ErrorCode::ConfigInvalid ? 1 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
