#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "chaintrust/harness.hpp"

using namespace chaintrust;

namespace {

ScenarioConfig quick_scenario(PolicyKind kind, int reps = 1) {
    ScenarioConfig cfg = default_scenario();
    cfg.policy.kind = kind;
    cfg.repetitions = reps;
    return cfg;
}

template <typename F>
ErrorCode code_of(F&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected a chaintrust::Error");
    return ErrorCode::ConfigInvalid;
}

}  // namespace

TEST_CASE("semantic chain fills nearly every idle slot", "[harness]") {
    MetricsReport semantic = run_scenario(quick_scenario(PolicyKind::SemanticChain));
    REQUIRE(semantic.rows.size() == 1);
    REQUIRE(semantic.mean.idle_utilization >= 0.99);

    MetricsReport naive = run_scenario(quick_scenario(PolicyKind::StatisticalIdle));
    REQUIRE(naive.mean.idle_utilization < semantic.mean.idle_utilization);
    REQUIRE(naive.mean.busy_false_triggers > 0);  // dips fool the single-sample rule
}

TEST_CASE("no idle slots means utilization one by convention", "[harness]") {
    ScenarioConfig cfg = quick_scenario(PolicyKind::SemanticChain);
    cfg.sim.idle_fraction = 0;
    cfg.sim.task_rate_per_hour = 0;
    MetricsReport report = run_scenario(cfg);
    REQUIRE(report.mean.idle_slots == 0);
    REQUIRE(report.mean.idle_utilization == 1.0);
    REQUIRE(report.mean.triggered_evals == 0);
}

TEST_CASE("matching rate is exact for the oracle-filtered policy", "[harness]") {
    ScenarioConfig cfg = quick_scenario(PolicyKind::SemanticChain);
    SimTrace trace = run(cfg.sim, cfg.policy);
    REQUIRE(matching_rate(trace) == 1.0);
}

TEST_CASE("random trusted picks miss on an infeasible pool", "[harness]") {
    // three of ten devices cannot meet the deadline and picks ignore idleness,
    // so well over 30% of snapshots are infeasible
    ScenarioConfig cfg = quick_scenario(PolicyKind::RandomTrustedPick);
    SimTrace trace = run(cfg.sim, cfg.policy);
    const double rate = matching_rate(trace);
    REQUIRE(rate < 1.0);
    REQUIRE(rate > 0.0);
}

TEST_CASE("an all-feasible pool scores one under any policy", "[harness]") {
    ScenarioConfig cfg = quick_scenario(PolicyKind::RandomTrustedPick);
    // strong resources everywhere, snapshots always advertise idle
    ResourceProfile strong;
    strong.idle_from_schedule = false;
    strong.idle_prob = 1.0;
    cfg.sim.profiles = {strong};
    cfg.sim.profile_assignment.clear();
    cfg.sim.quality_assignment.clear();
    cfg.sim.qualities = {DeviceQuality{}};
    REQUIRE(matching_rate(run(cfg.sim, cfg.policy)) == 1.0);

    cfg.policy.kind = PolicyKind::SemanticChain;
    REQUIRE(matching_rate(run(cfg.sim, cfg.policy)) == 1.0);
}

TEST_CASE("matching rate without any selected collaborator is NoTasks", "[harness]") {
    ScenarioConfig cfg = quick_scenario(PolicyKind::SemanticChain);
    cfg.sim.task_rate_per_hour = 0;
    SimTrace trace = run(cfg.sim, cfg.policy);
    REQUIRE(code_of([&] { matching_rate(trace); }) == ErrorCode::NoTasks);
    RunMetrics m = metrics_from_trace(trace);
    REQUIRE(m.has_tasks == 0.0);
    REQUIRE(m.avg_resource_evals_per_task == 0.0);
}

TEST_CASE("paired seeds show fewer evaluations than the clustering baseline", "[harness]") {
    ScenarioConfig semantic = quick_scenario(PolicyKind::SemanticChain);
    ScenarioConfig cluster = quick_scenario(PolicyKind::EvaluateAllCluster);

    SimTrace st = run(semantic.sim, semantic.policy);
    SimTrace ct = run(cluster.sim, cluster.policy);
    EvaluationCounts s = evaluation_counts(st);
    EvaluationCounts c = evaluation_counts(ct);

    REQUIRE(s.avg_hist_evals_per_device <= 0.6 * c.avg_hist_evals_per_device);
    REQUIRE(s.avg_resource_evals_per_task < c.avg_resource_evals_per_task);

    // the semantic policy never queries more devices than its trusted group
    RunMetrics sm = metrics_from_trace(st);
    REQUIRE(sm.avg_resource_evals_per_task <= semantic.sim.n_devices - 1);
}

TEST_CASE("csv output reparses to the same report and is byte-stable", "[harness]") {
    MetricsReport report = run_scenario(quick_scenario(PolicyKind::SemanticChain, 2));
    const std::string csv = csv_string(report);

    std::istringstream in(csv);
    MetricsReport parsed = parse_csv(in);
    REQUIRE(parsed.scenario == report.scenario);
    REQUIRE(parsed.policy == report.policy);
    REQUIRE(parsed.rows.size() == report.rows.size());
    for (std::size_t i = 0; i < report.rows.size(); ++i)
        for (const auto& [_, field] : detail::metric_columns())
            REQUIRE(parsed.rows[i].*field == report.rows[i].*field);
    for (const auto& [_, field] : detail::metric_columns())
        REQUIRE(parsed.mean.*field == report.mean.*field);

    // re-emission reproduces the bytes; reruns reproduce the bytes
    REQUIRE(csv_string(parsed) == csv);
    REQUIRE(csv_string(run_scenario(quick_scenario(PolicyKind::SemanticChain, 2))) == csv);
}

TEST_CASE("an empty report emits a header-only file", "[harness]") {
    MetricsReport empty;
    empty.scenario = "none";
    empty.policy = "SemanticChain";
    const std::string csv = csv_string(empty);
    REQUIRE(csv.find('\n') == csv.size() - 1);  // exactly one line
}

TEST_CASE("scenario configs load from json with defaults", "[harness]") {
    json j = {
        {"name", "mini"},
        {"policy", "StatisticalIdle"},
        {"repetitions", 2},
        {"sim",
         {{"seed", 9},
          {"n_devices", 4},
          {"horizon_s", 300.0},
          {"idle_fraction", 0.25},
          {"task_rate_per_hour", 0.0},
          {"profiles", json::array({{{"cpu_freq_hz", {30e9, 40e9}}}})},
          {"profile_assignment", {0, 0, 0, 0}}}},
        {"eval", {{"trust_threshold", 0.7}}},
        {"perception", {{"tau_now", 0.3}}},
        {"pipeline", {{"batch", 2}}},
    };
    ScenarioConfig cfg = scenario_from_json(j);
    cfg.validate();
    REQUIRE(cfg.name == "mini");
    REQUIRE(cfg.policy.kind == PolicyKind::StatisticalIdle);
    REQUIRE(cfg.repetitions == 2);
    REQUIRE(cfg.sim.seed == 9);
    REQUIRE(cfg.sim.n_devices == 4);
    REQUIRE(cfg.sim.profiles.size() == 1);
    REQUIRE(cfg.sim.profiles[0].cpu_freq_hz.lo == 30e9);
    REQUIRE(cfg.policy.eval.trust_threshold == 0.7);
    REQUIRE(cfg.policy.perception.tau_now == 0.3);
    REQUIRE(cfg.policy.pipeline.batch == 2);
    // untouched fields keep their defaults
    REQUIRE(cfg.sim.slot_length_s == 30.0);
    REQUIRE(cfg.policy.eval.min_stability == 0.9);
}

TEST_CASE("invalid scenario configs are rejected", "[harness]") {
    ScenarioConfig cfg = default_scenario();
    cfg.repetitions = 0;
    REQUIRE(code_of([&] { cfg.validate(); }) == ErrorCode::ConfigInvalid);

    json j = {{"sim", {{"n_devices", 3}, {"profile_assignment", {0, 0}}}}};
    REQUIRE(code_of([&] { scenario_from_json(j).validate(); }) == ErrorCode::ConfigInvalid);
}

TEST_CASE("run artifacts land on disk and reload", "[harness]") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "chaintrust_harness_test";
    fs::remove_all(dir);

    ScenarioConfig cfg = quick_scenario(PolicyKind::SemanticChain);
    cfg.sim.n_devices = 3;
    cfg.sim.horizon_s = 300;
    cfg.sim.profile_assignment = {0, 1, 0};
    cfg.sim.quality_assignment = {0, 0, 1};
    SimTrace trace = run(cfg.sim, cfg.policy);
    write_run_artifacts(trace, dir);

    REQUIRE(fs::exists(dir / "trace.jsonl"));
    REQUIRE(fs::exists(dir / "devices" / "b_01" / "records.jsonl"));
    REQUIRE(fs::exists(dir / "devices" / "b_03" / "hypergraph.json"));

    std::ifstream snap(dir / "devices" / "b_01" / "hypergraph.json");
    json parsed = json::parse(snap);
    REQUIRE(parsed.at("owner") == "b_01");
    REQUIRE(parsed.at("type") == "local");
    fs::remove_all(dir);
}

TEST_CASE("switching policy leaves trace-generation streams untouched", "[harness]") {
    ScenarioConfig semantic = quick_scenario(PolicyKind::SemanticChain);
    ScenarioConfig naive = quick_scenario(PolicyKind::StatisticalIdle);
    SimTrace st = run(semantic.sim, semantic.policy);
    SimTrace nt = run(naive.sim, naive.policy);

    auto slot_bits = [](const SimTrace& t) {
        std::map<std::pair<std::string, int>, bool> bits;
        for (const auto& e : t.events)
            if (e.kind == TraceKind::Slot)
                bits[{e.device.value, e.detail.at("slot").get<int>()}] =
                    e.detail.at("truly_idle").get<bool>();
        return bits;
    };
    REQUIRE(slot_bits(st) == slot_bits(nt));  // identical schedules

    auto task_ids = [](const SimTrace& t) {
        std::set<std::string> ids;
        for (const auto& e : t.events)
            if (e.kind == TraceKind::Task) ids.insert(e.detail.at("task").get<std::string>());
        return ids;
    };
    REQUIRE(task_ids(st) == task_ids(nt));  // identical task arrivals

    // under any policy, cycles start only from idle verdicts
    for (const auto& e : nt.events)
        if (e.kind == TraceKind::Slot && e.detail.at("triggered").get<int>() > 0)
            REQUIRE(e.detail.at("verdict_idle").get<bool>());
}

TEST_CASE("reported idle utilization equals a direct trace recount", "[harness]") {
    ScenarioConfig cfg = quick_scenario(PolicyKind::SemanticChain);
    SimTrace trace = run(cfg.sim, cfg.policy);
    RunMetrics m = metrics_from_trace(trace);

    double idle = 0, with_eval = 0;
    for (const auto& e : trace.events) {
        if (e.kind != TraceKind::Slot) continue;
        if (!e.detail.at("truly_idle").get<bool>()) continue;
        idle += 1;
        if (e.detail.at("triggered").get<int>() > 0) with_eval += 1;
    }
    REQUIRE(m.idle_slots == idle);
    REQUIRE(m.idle_utilization == with_eval / idle);
}

TEST_CASE("comparison table lines up scenario means", "[harness]") {
    MetricsReport a = run_scenario(quick_scenario(PolicyKind::SemanticChain));
    MetricsReport b = run_scenario(quick_scenario(PolicyKind::EvaluateAllCluster));
    const std::string table = comparison_table({a, b});
    REQUIRE(table.find("idle_utilization") != std::string::npos);
    REQUIRE(table.find("default/SemanticChain") != std::string::npos);
    REQUIRE(table.find("default/EvaluateAllCluster") != std::string::npos);
}
