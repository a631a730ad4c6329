#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chaintrust/core.hpp"
#include "chaintrust/semantics.hpp"
#include "chaintrust/simnet.hpp"

namespace chaintrust {

// ---------------------------------------------------------------------------
// Scenario configuration
// ---------------------------------------------------------------------------

struct ScenarioConfig {
    std::string name = "scenario";
    SimConfig sim;
    PolicySpec policy;
    int repetitions = 1;

    void validate() const {
        if (repetitions < 1) raise(ErrorCode::ConfigInvalid, "repetitions must be >= 1");
        sim.validate();
        policy.eval.validate();
    }
};

// Desk-scale reproduction of the reference experiment: ten devices, one hour
// of 30 s slots, the 100 MB face-recognition-sized task. Three devices
// behave badly (low accuracy, unsatisfied feedback), three advertise CPUs
// too weak for the task's deadline; the rest are strong and well-behaved.
inline ScenarioConfig default_scenario() {
    ScenarioConfig cfg;
    cfg.name = "default";
    cfg.repetitions = 5;

    cfg.sim.seed = 1;
    cfg.sim.n_devices = 10;
    cfg.sim.slot_length_s = 30;
    cfg.sim.horizon_s = 3600;
    cfg.sim.link_latency_s = 0.1;
    cfg.sim.idle_fraction = 0.5;
    cfg.sim.task_rate_per_hour = 6;
    cfg.sim.task_template = TaskSpec{"c", 100, 2339, 60};

    ResourceProfile strong;  // always meets the deadline when idle
    ResourceProfile weak;
    weak.cpu_freq_hz = {2e9, 20e9};  // never meets the deadline
    cfg.sim.profiles = {strong, weak};
    cfg.sim.profile_assignment = {0, 0, 0, 0, 1, 1, 1, 0, 0, 0};

    DeviceQuality good;
    DeviceQuality bad;
    bad.accuracy0 = 0.45;
    bad.speed0 = 0.8;
    bad.response0 = 1.5;
    bad.jitter = 0.02;
    cfg.sim.qualities = {good, bad};
    cfg.sim.quality_assignment = {0, 0, 0, 0, 0, 0, 0, 1, 1, 1};
    return cfg;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// All numeric fields are doubles so per-repetition rows and the aggregate
// mean row share one shape and survive CSV round trips exactly.
struct RunMetrics {
    double rep = 0;
    double seed = 0;
    double idle_slots = 0;            // ground-truth idle (device, slot) pairs
    double triggered_evals = 0;       // evaluations started in idle slots
    double idle_slots_with_eval = 0;  // idle slots that saw at least one evaluation
    double idle_utilization = 0;      // idle_slots_with_eval / idle_slots, 0/0 -> 1
    double hist_evals_total = 0;
    double avg_hist_evals_per_device = 0;
    double tasks_total = 0;
    double tasks_with_candidates = 0;
    double resource_queries_total = 0;
    double avg_resource_evals_per_task = 0;
    double selected_total = 0;
    double selected_feasible = 0;
    double matching_rate = 0;
    double has_tasks = 0;  // 0/1: any task selected at least one collaborator
    double busy_false_triggers = 0;
};

struct MetricsReport {
    std::string scenario;
    std::string policy;
    std::vector<RunMetrics> rows;
    RunMetrics mean;
};

namespace detail {

inline const std::vector<std::pair<std::string, double RunMetrics::*>>& metric_columns() {
    static const std::vector<std::pair<std::string, double RunMetrics::*>> cols = {
        {"rep", &RunMetrics::rep},
        {"seed", &RunMetrics::seed},
        {"idle_slots", &RunMetrics::idle_slots},
        {"triggered_evals", &RunMetrics::triggered_evals},
        {"idle_slots_with_eval", &RunMetrics::idle_slots_with_eval},
        {"idle_utilization", &RunMetrics::idle_utilization},
        {"hist_evals_total", &RunMetrics::hist_evals_total},
        {"avg_hist_evals_per_device", &RunMetrics::avg_hist_evals_per_device},
        {"tasks_total", &RunMetrics::tasks_total},
        {"tasks_with_candidates", &RunMetrics::tasks_with_candidates},
        {"resource_queries_total", &RunMetrics::resource_queries_total},
        {"avg_resource_evals_per_task", &RunMetrics::avg_resource_evals_per_task},
        {"selected_total", &RunMetrics::selected_total},
        {"selected_feasible", &RunMetrics::selected_feasible},
        {"matching_rate", &RunMetrics::matching_rate},
        {"has_tasks", &RunMetrics::has_tasks},
        {"busy_false_triggers", &RunMetrics::busy_false_triggers},
    };
    return cols;
}

// Shortest decimal form that round-trips the exact double.
inline std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

}  // namespace detail

// Recomputes every metric from the raw trace. The feasibility of selected
// collaborators is re-derived post hoc from the recorded snapshots.
inline RunMetrics metrics_from_trace(const SimTrace& trace) {
    RunMetrics m;
    m.seed = static_cast<double>(trace.config.seed);
    for (const auto& e : trace.events) {
        switch (e.kind) {
            case TraceKind::Slot: {
                const bool truly_idle = e.detail.at("truly_idle").get<bool>();
                const double triggered = e.detail.at("triggered").get<double>();
                if (truly_idle) {
                    m.idle_slots += 1;
                    m.triggered_evals += triggered;
                    if (triggered > 0) m.idle_slots_with_eval += 1;
                } else if (triggered > 0) {
                    m.busy_false_triggers += 1;
                }
                break;
            }
            case TraceKind::Cycle:
                if (e.detail.at("outcome").get<std::string>() != "none_due")
                    m.hist_evals_total += 1;
                break;
            case TraceKind::Task: {
                m.tasks_total += 1;
                const auto& queried = e.detail.at("queried");
                const auto& selected = e.detail.at("selected");
                m.resource_queries_total += static_cast<double>(queried.size());
                if (!selected.empty()) m.tasks_with_candidates += 1;

                const TaskSpec spec = TaskSpec::from_json(e.detail.at("spec"));
                std::map<std::string, ResourceSnapshot> snaps;
                for (const auto& s : e.detail.at("snapshots")) {
                    ResourceSnapshot snap = ResourceSnapshot::from_json(s);
                    snaps[snap.subject.value] = snap;
                }
                for (const auto& sel : selected) {
                    m.selected_total += 1;
                    auto it = snaps.find(sel.get<std::string>());
                    if (it != snaps.end() &&
                        check_resource_match(spec, it->second, trace.policy.eval).matched)
                        m.selected_feasible += 1;
                }
                break;
            }
            default: break;
        }
    }
    m.idle_utilization = m.idle_slots > 0 ? m.idle_slots_with_eval / m.idle_slots : 1.0;
    m.avg_hist_evals_per_device = m.hist_evals_total / trace.config.n_devices;
    m.avg_resource_evals_per_task =
        m.tasks_total > 0 ? m.resource_queries_total / m.tasks_total : 0.0;
    m.has_tasks = m.selected_total > 0 ? 1.0 : 0.0;
    m.matching_rate = m.selected_total > 0 ? m.selected_feasible / m.selected_total : 0.0;
    return m;
}

// Fraction of selected collaborators whose recorded snapshot passes the
// feasibility oracle. Requires at least one task with a selection.
inline double matching_rate(const SimTrace& trace) {
    const RunMetrics m = metrics_from_trace(trace);
    if (m.selected_total == 0)
        raise(ErrorCode::NoTasks, "no task selected any collaborator");
    return m.matching_rate;
}

struct EvaluationCounts {
    double avg_hist_evals_per_device = 0;
    double avg_resource_evals_per_task = 0;
};

inline EvaluationCounts evaluation_counts(const SimTrace& trace) {
    const RunMetrics m = metrics_from_trace(trace);
    return {m.avg_hist_evals_per_device, m.avg_resource_evals_per_task};
}

// ---------------------------------------------------------------------------
// Scenario runner
// ---------------------------------------------------------------------------

// Repetition r runs with seed = sim.seed + r, so two scenarios that share a
// base seed are paired run by run.
inline MetricsReport run_scenario(const ScenarioConfig& cfg) {
    cfg.validate();
    MetricsReport report;
    report.scenario = cfg.name;
    report.policy = to_string(cfg.policy.kind);
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
        SimConfig sim = cfg.sim;
        sim.seed = cfg.sim.seed + static_cast<std::uint64_t>(rep);
        SimTrace trace = run(sim, cfg.policy);
        RunMetrics m = metrics_from_trace(trace);
        m.rep = rep;
        report.rows.push_back(m);
    }
    RunMetrics& mean = report.mean;
    for (const auto& row : report.rows)
        for (const auto& [_, field] : detail::metric_columns()) mean.*field += row.*field;
    if (!report.rows.empty())
        for (const auto& [_, field] : detail::metric_columns())
            mean.*field /= static_cast<double>(report.rows.size());
    mean.rep = 0;  // the aggregate row carries no repetition index
    return report;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

inline void emit_csv(const MetricsReport& report, std::ostream& out) {
    const auto& cols = detail::metric_columns();
    out << "scenario,policy";
    for (const auto& [name, _] : cols) out << ',' << name;
    out << '\n';
    auto row = [&](const RunMetrics& m, const std::string& label) {
        out << report.scenario << ',' << report.policy;
        for (const auto& [name, field] : cols) {
            out << ',';
            if (name == "rep" && !label.empty())
                out << label;
            else
                out << detail::format_double(m.*field);
        }
        out << '\n';
    };
    for (const auto& m : report.rows) row(m, "");
    if (!report.rows.empty()) row(report.mean, "mean");
}

inline void emit_csv(const MetricsReport& report, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorCode::IoError, "cannot write " + path.string());
    emit_csv(report, out);
    if (!out) raise(ErrorCode::IoError, "write failed for " + path.string());
}

inline std::string csv_string(const MetricsReport& report) {
    std::ostringstream out;
    emit_csv(report, out);
    return out.str();
}

inline MetricsReport parse_csv(std::istream& in) {
    const auto& cols = detail::metric_columns();
    std::string line;
    if (!std::getline(in, line)) raise(ErrorCode::IoError, "empty metrics file");
    MetricsReport report;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != cols.size() + 2)
            raise(ErrorCode::IoError, "malformed metrics row: " + line);
        if (first) {
            report.scenario = cells[0];
            report.policy = cells[1];
            first = false;
        }
        RunMetrics m;
        bool mean_row = cells[2] == "mean";
        for (std::size_t i = mean_row ? 1 : 0; i < cols.size(); ++i) {
            const std::string& text = cells[i + 2];
            double v = 0;
            auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc() || p != text.data() + text.size())
                raise(ErrorCode::IoError, "bad number in metrics row: " + text);
            m.*(cols[i].second) = v;
        }
        if (mean_row)
            report.mean = m;
        else
            report.rows.push_back(m);
    }
    return report;
}

inline MetricsReport parse_csv_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) raise(ErrorCode::IoError, "cannot read " + path.string());
    return parse_csv(in);
}

// ---------------------------------------------------------------------------
// Config file I/O (JSON sections mirroring the struct fields)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    return it == j.end() ? fallback : it->get<T>();
}

inline Range range_from_json(const json& j, Range fallback) {
    if (j.is_null()) return fallback;
    if (!j.is_array() || j.size() != 2)
        raise(ErrorCode::ConfigInvalid, "a range must be a [lo, hi] pair");
    return Range{j[0].get<double>(), j[1].get<double>()};
}

inline ResourceProfile profile_from_json(const json& j) {
    ResourceProfile p;
    p.idle_from_schedule = get_or(j, "idle_from_schedule", p.idle_from_schedule);
    p.idle_prob = get_or(j, "idle_prob", p.idle_prob);
    p.cpu_freq_hz = range_from_json(j.value("cpu_freq_hz", json()), p.cpu_freq_hz);
    p.cpu_fraction = range_from_json(j.value("cpu_fraction", json()), p.cpu_fraction);
    p.storage_mb = range_from_json(j.value("storage_mb", json()), p.storage_mb);
    p.bandwidth_mbps = range_from_json(j.value("bandwidth_mbps", json()), p.bandwidth_mbps);
    p.stability = range_from_json(j.value("stability", json()), p.stability);
    p.available_time_s = range_from_json(j.value("available_time_s", json()), p.available_time_s);
    return p;
}

inline DeviceQuality quality_from_json(const json& j) {
    DeviceQuality q;
    q.accuracy0 = get_or(j, "accuracy0", q.accuracy0);
    q.accuracy_slope = get_or(j, "accuracy_slope", q.accuracy_slope);
    q.speed0 = get_or(j, "speed0", q.speed0);
    q.speed_slope = get_or(j, "speed_slope", q.speed_slope);
    q.response0 = get_or(j, "response0", q.response0);
    q.response_slope = get_or(j, "response_slope", q.response_slope);
    q.jitter = get_or(j, "jitter", q.jitter);
    return q;
}

}  // namespace detail

// Absent keys keep the plain struct defaults; see configs/ for full files.
inline ScenarioConfig scenario_from_json(const json& j) {
    ScenarioConfig cfg;
    cfg.name = detail::get_or<std::string>(j, "name", cfg.name);
    cfg.repetitions = detail::get_or(j, "repetitions", cfg.repetitions);
    if (j.contains("policy")) cfg.policy.kind = policy_from_string(j.at("policy"));

    if (j.contains("sim")) {
        const json& s = j.at("sim");
        SimConfig& sim = cfg.sim;
        sim.seed = detail::get_or<std::uint64_t>(s, "seed", sim.seed);
        sim.n_devices = detail::get_or(s, "n_devices", sim.n_devices);
        sim.slot_length_s = detail::get_or(s, "slot_length_s", sim.slot_length_s);
        sim.horizon_s = detail::get_or(s, "horizon_s", sim.horizon_s);
        sim.link_latency_s = detail::get_or(s, "link_latency_s", sim.link_latency_s);
        sim.idle_fraction = detail::get_or(s, "idle_fraction", sim.idle_fraction);
        sim.task_rate_per_hour = detail::get_or(s, "task_rate_per_hour", sim.task_rate_per_hour);
        sim.bootstrap_trusted = detail::get_or(s, "bootstrap_trusted", sim.bootstrap_trusted);
        sim.cluster_count = detail::get_or(s, "cluster_count", sim.cluster_count);
        sim.feedback_accuracy_floor =
            detail::get_or(s, "feedback_accuracy_floor", sim.feedback_accuracy_floor);
        if (s.contains("task_template")) sim.task_template = TaskSpec::from_json(s.at("task_template"));
        if (s.contains("trace_model")) {
            const json& t = s.at("trace_model");
            TraceModel& tm = sim.trace_model;
            tm.samples_per_slot = detail::get_or(t, "samples_per_slot", tm.samples_per_slot);
            tm.idle_util = detail::range_from_json(t.value("idle_util", json()), tm.idle_util);
            tm.busy_util = detail::range_from_json(t.value("busy_util", json()), tm.busy_util);
            tm.spike_util = detail::range_from_json(t.value("spike_util", json()), tm.spike_util);
            tm.spike_prob = detail::get_or(t, "spike_prob", tm.spike_prob);
            tm.dip_prob = detail::get_or(t, "dip_prob", tm.dip_prob);
        }
        if (s.contains("profiles")) {
            sim.profiles.clear();
            for (const auto& p : s.at("profiles")) sim.profiles.push_back(detail::profile_from_json(p));
        }
        if (s.contains("profile_assignment"))
            sim.profile_assignment = s.at("profile_assignment").get<std::vector<int>>();
        if (s.contains("qualities")) {
            sim.qualities.clear();
            for (const auto& q : s.at("qualities")) sim.qualities.push_back(detail::quality_from_json(q));
        }
        if (s.contains("quality_assignment"))
            sim.quality_assignment = s.at("quality_assignment").get<std::vector<int>>();
    }

    if (j.contains("eval")) {
        const json& e = j.at("eval");
        EvalConfig& ev = cfg.policy.eval;
        ev.trust_threshold = detail::get_or(e, "trust_threshold", ev.trust_threshold);
        ev.decline_epsilon = detail::get_or(e, "decline_epsilon", ev.decline_epsilon);
        if (e.contains("factor_weights")) {
            auto w = e.at("factor_weights").get<std::vector<double>>();
            if (w.size() != 4) raise(ErrorCode::ConfigInvalid, "factor_weights needs 4 entries");
            std::copy(w.begin(), w.end(), ev.factor_weights.begin());
        }
        ev.recency_half_life_s = detail::get_or(e, "recency_half_life_s", ev.recency_half_life_s);
        ev.response_time_cap_s = detail::get_or(e, "response_time_cap_s", ev.response_time_cap_s);
        ev.exec_speed_cap_mbps = detail::get_or(e, "exec_speed_cap_mbps", ev.exec_speed_cap_mbps);
        ev.min_stability = detail::get_or(e, "min_stability", ev.min_stability);
    }

    if (j.contains("perception")) {
        const json& p = j.at("perception");
        cfg.policy.perception.tau_now = detail::get_or(p, "tau_now", cfg.policy.perception.tau_now);
        cfg.policy.perception.tau_hist =
            detail::get_or(p, "tau_hist", cfg.policy.perception.tau_hist);
    }

    if (j.contains("pipeline")) {
        const json& p = j.at("pipeline");
        PipelineConfig& pl = cfg.policy.pipeline;
        pl.w_stale = detail::get_or(p, "w_stale", pl.w_stale);
        pl.w_trend = detail::get_or(p, "w_trend", pl.w_trend);
        pl.w_freq = detail::get_or(p, "w_freq", pl.w_freq);
        pl.staleness_cap_s = detail::get_or(p, "staleness_cap_s", pl.staleness_cap_s);
        pl.batch = detail::get_or(p, "batch", pl.batch);
    }
    return cfg;
}

inline ScenarioConfig load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) raise(ErrorCode::ConfigInvalid, "cannot open config " + path.string());
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        raise(ErrorCode::ConfigInvalid, "config parse error in " + path.string() + ": " + e.what());
    }
    try {
        ScenarioConfig cfg = scenario_from_json(j);
        cfg.validate();
        return cfg;
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        raise(ErrorCode::ConfigInvalid, "invalid config " + path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Run artifacts
// ---------------------------------------------------------------------------

// Writes the trace log plus per-device record stores and hypergraph
// snapshots under `dir` (one line per record, stable field names).
inline void write_run_artifacts(const SimTrace& trace, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) raise(ErrorCode::IoError, "cannot create " + dir.string());

    std::ofstream tr(dir / "trace.jsonl", std::ios::binary | std::ios::trunc);
    if (!tr) raise(ErrorCode::IoError, "cannot write trace log");
    trace.write_jsonl(tr);

    for (const auto& [id, store] : trace.final_stores) {
        const auto device_dir = dir / "devices" / id.value;
        std::filesystem::create_directories(device_dir, ec);
        if (ec) raise(ErrorCode::IoError, "cannot create " + device_dir.string());
        std::ofstream records(device_dir / "records.jsonl", std::ios::binary | std::ios::trunc);
        for (const auto& r : store) records << r.to_json().dump() << '\n';
        std::ofstream snapshot(device_dir / "hypergraph.json", std::ios::binary | std::ios::trunc);
        snapshot << trace.final_snapshots.at(id).dump(2) << '\n';
    }
}

// Side-by-side comparison of several scenario reports (mean rows).
inline std::string comparison_table(const std::vector<MetricsReport>& reports) {
    std::ostringstream out;
    const std::vector<std::pair<std::string, double RunMetrics::*>> rows = {
        {"idle_utilization", &RunMetrics::idle_utilization},
        {"triggered_evals", &RunMetrics::triggered_evals},
        {"avg_hist_evals_per_device", &RunMetrics::avg_hist_evals_per_device},
        {"avg_resource_evals_per_task", &RunMetrics::avg_resource_evals_per_task},
        {"matching_rate", &RunMetrics::matching_rate},
        {"tasks_total", &RunMetrics::tasks_total},
    };
    std::size_t width = 18;
    for (const auto& r : reports) width = std::max(width, r.scenario.size() + r.policy.size() + 3);
    out << std::left << std::setw(30) << "metric";
    for (const auto& r : reports)
        out << std::setw(static_cast<int>(width)) << (r.scenario + "/" + r.policy);
    out << '\n';
    out << std::string(30 + width * reports.size(), '-') << '\n';
    for (const auto& [label, field] : rows) {
        out << std::left << std::setw(30) << label;
        for (const auto& r : reports) {
            std::ostringstream cell;
            cell << std::setprecision(6) << r.mean.*field;
            out << std::setw(static_cast<int>(width)) << cell.str();
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace chaintrust
