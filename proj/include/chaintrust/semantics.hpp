#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "chaintrust/core.hpp"
#include "chaintrust/hypergraph.hpp"

namespace chaintrust {

enum class Feedback { Satisfied, Unsatisfied };

inline const char* to_string(Feedback f) {
    return f == Feedback::Satisfied ? "satisfied" : "unsatisfied";
}

// One historical observation of a collaborator's task execution, recorded
// locally by the task owner upon completion.
struct PerformanceRecord {
    DeviceId observer;
    DeviceId subject;
    Timestamp time = 0;
    double response_time = 0;  // seconds
    double exec_speed = 0;     // MB/s
    double accuracy = 0;       // fraction in [0,1]
    Feedback feedback = Feedback::Unsatisfied;

    json to_json() const {
        return json{{"device", subject.value},
                    {"time", time},
                    {"response time", response_time},
                    {"execution speed", exec_speed},
                    {"accuracy", accuracy},
                    {"feedback", to_string(feedback)},
                    {"observer", observer.value}};
    }

    static PerformanceRecord from_json(const json& j) {
        PerformanceRecord r;
        r.subject = DeviceId(j.at("device").get<std::string>());
        r.time = j.at("time").get<double>();
        r.response_time = j.at("response time").get<double>();
        r.exec_speed = j.at("execution speed").get<double>();
        r.accuracy = j.at("accuracy").get<double>();
        r.feedback = j.at("feedback").get<std::string>() == "satisfied" ? Feedback::Satisfied
                                                                        : Feedback::Unsatisfied;
        r.observer = DeviceId(j.at("observer").get<std::string>());
        return r;
    }
};

struct TaskSpec {
    std::string task_id;
    double size_mb = 0;             // megabytes, 10^6 bytes
    double processing_density = 0;  // cycles/bit
    double deadline_s = 0;          // maximum completion tolerance

    json to_json() const {
        return json{{"task", task_id},
                    {"size", size_mb},
                    {"processing density", processing_density},
                    {"deadline", deadline_s}};
    }

    static TaskSpec from_json(const json& j) {
        return TaskSpec{j.at("task").get<std::string>(), j.at("size").get<double>(),
                        j.at("processing density").get<double>(), j.at("deadline").get<double>()};
    }
};

// A collaborator's instantaneous resource offer.
struct ResourceSnapshot {
    DeviceId subject;
    bool idle = false;
    double available_time_s = 0;
    double cpu_freq_hz = 0;
    double cpu_fraction = 0;  // available fraction in (0,1]
    double storage_mb = 0;
    double bandwidth_mbps = 0;  // megabits/second
    double stability = 0;       // link stability in [0,1]

    json to_json() const {
        return json{{"device", subject.value},
                    {"idle", idle},
                    {"available time", available_time_s},
                    {"cpu frequency", cpu_freq_hz},
                    {"cpu fraction", cpu_fraction},
                    {"storage", storage_mb},
                    {"bandwidth", bandwidth_mbps},
                    {"stability", stability}};
    }

    static ResourceSnapshot from_json(const json& j) {
        ResourceSnapshot s;
        s.subject = DeviceId(j.at("device").get<std::string>());
        s.idle = j.at("idle").get<bool>();
        s.available_time_s = j.at("available time").get<double>();
        s.cpu_freq_hz = j.at("cpu frequency").get<double>();
        s.cpu_fraction = j.at("cpu fraction").get<double>();
        s.storage_mb = j.at("storage").get<double>();
        s.bandwidth_mbps = j.at("bandwidth").get<double>();
        s.stability = j.at("stability").get<double>();
        return s;
    }
};

enum class Factor { Accuracy = 0, ExecSpeed = 1, ResponseTime = 2, Feedback = 3 };

inline const char* to_string(Factor f) {
    switch (f) {
        case Factor::Accuracy: return "accuracy";
        case Factor::ExecSpeed: return "execution speed";
        case Factor::ResponseTime: return "response time";
        case Factor::Feedback: return "feedback";
    }
    return "?";
}

struct TrendEstimate {
    Factor factor = Factor::Accuracy;
    double slope = 0;  // per-second rate of the normalized factor
    TrustTrend direction = TrustTrend::Stable;
};

struct EvalConfig {
    double trust_threshold = 0.6;
    double decline_epsilon = 1e-4;
    // weight order: accuracy, execution speed, response time, feedback
    std::array<double, 4> factor_weights{0.25, 0.25, 0.25, 0.25};
    double recency_half_life_s = 3600;
    double response_time_cap_s = 2;
    double exec_speed_cap_mbps = 4;
    double min_stability = 0.9;

    void validate() const {
        if (!(trust_threshold > 0 && trust_threshold < 1))
            raise(ErrorCode::ConfigInvalid, "trust_threshold must be in (0,1)");
        if (!(decline_epsilon > 0)) raise(ErrorCode::ConfigInvalid, "decline_epsilon must be > 0");
        double sum = 0;
        for (double w : factor_weights) {
            if (w < 0) raise(ErrorCode::ConfigInvalid, "factor weights must be non-negative");
            sum += w;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            raise(ErrorCode::ConfigInvalid, "factor weights must sum to 1");
        if (!(recency_half_life_s > 0) || !(response_time_cap_s > 0) ||
            !(exec_speed_cap_mbps > 0))
            raise(ErrorCode::ConfigInvalid, "caps and half-life must be positive");
        if (min_stability < 0 || min_stability > 1)
            raise(ErrorCode::ConfigInvalid, "min_stability must be in [0,1]");
    }
};

using FactorVector = std::array<double, 4>;

// Maps a record onto four factor scores in [0,1], higher is better. The
// response-time factor is inverted here so one sign rule covers all trends.
inline FactorVector normalize_record(const PerformanceRecord& r, const EvalConfig& cfg) {
    FactorVector v;
    v[0] = std::clamp(r.accuracy, 0.0, 1.0);
    v[1] = std::clamp(r.exec_speed / cfg.exec_speed_cap_mbps, 0.0, 1.0);
    v[2] = std::max(0.0, 1.0 - r.response_time / cfg.response_time_cap_s);
    v[3] = r.feedback == Feedback::Satisfied ? 1.0 : 0.0;
    return v;
}

namespace detail {

inline void require_single_subject(std::span<const PerformanceRecord> records) {
    for (const auto& r : records) {
        if (r.subject != records.front().subject)
            raise(ErrorCode::SubjectMismatch, "history mixes subjects " +
                                                  records.front().subject.value + " and " +
                                                  r.subject.value);
    }
}

}  // namespace detail

// Recency-weighted, factor-weighted mean of the normalized history:
//   trust = sum_r w(r) * (weights . normalize(r)) / sum_r w(r),
//   w(r)  = 2^(-(now - r.time) / half_life).
inline double score_history(std::span<const PerformanceRecord> records, Timestamp now,
                            const EvalConfig& cfg) {
    cfg.validate();
    if (records.empty()) raise(ErrorCode::EmptyHistory, "cannot score an empty history");
    detail::require_single_subject(records);
    double weighted = 0, total = 0;
    for (const auto& r : records) {
        const double w = std::exp2(-(now - r.time) / cfg.recency_half_life_s);
        const FactorVector f = normalize_record(r, cfg);
        double value = 0;
        for (std::size_t i = 0; i < f.size(); ++i) value += cfg.factor_weights[i] * f[i];
        weighted += w * value;
        total += w;
    }
    return weighted / total;
}

// Ordinary least-squares slope of one normalized factor against time.
inline TrendEstimate estimate_trend(std::span<const PerformanceRecord> records, Factor factor,
                                    const EvalConfig& cfg) {
    if (records.size() < 2)
        raise(ErrorCode::InsufficientHistory, "trend needs at least two records");
    bool distinct = false;
    for (const auto& r : records)
        if (r.time != records.front().time) distinct = true;
    if (!distinct) raise(ErrorCode::DegenerateTime, "trend needs distinct timestamps");

    double mean_t = 0, mean_y = 0;
    const auto idx = static_cast<std::size_t>(factor);
    for (const auto& r : records) {
        mean_t += r.time;
        mean_y += normalize_record(r, cfg)[idx];
    }
    mean_t /= static_cast<double>(records.size());
    mean_y /= static_cast<double>(records.size());

    double cov = 0, var = 0;
    for (const auto& r : records) {
        const double dt = r.time - mean_t;
        cov += dt * (normalize_record(r, cfg)[idx] - mean_y);
        var += dt * dt;
    }
    const double slope = cov / var;
    return TrendEstimate{factor, slope,
                         slope < -cfg.decline_epsilon ? TrustTrend::Declining
                                                      : TrustTrend::Stable};
}

// Canonical merge of local and received histories: concatenate, order by a
// total key, then drop duplicates of the same (observer, time). The result
// does not depend on how the union was split or ordered.
inline std::vector<PerformanceRecord> merge_histories(std::vector<PerformanceRecord> local,
                                                      std::vector<PerformanceRecord> received) {
    std::vector<PerformanceRecord> all = std::move(local);
    all.insert(all.end(), received.begin(), received.end());
    auto key = [](const PerformanceRecord& r) {
        return std::tuple(r.time, r.observer.value, r.response_time, r.exec_speed, r.accuracy,
                          r.feedback == Feedback::Satisfied);
    };
    std::sort(all.begin(), all.end(),
              [&](const PerformanceRecord& a, const PerformanceRecord& b) { return key(a) < key(b); });
    auto last = std::unique(all.begin(), all.end(),
                            [](const PerformanceRecord& a, const PerformanceRecord& b) {
                                return a.observer == b.observer && a.time == b.time;
                            });
    all.erase(last, all.end());
    return all;
}

namespace detail {

inline double slope_or_zero(std::span<const PerformanceRecord> records, Factor factor,
                            const EvalConfig& cfg) {
    if (records.size() < 2) return 0;
    bool distinct = false;
    for (const auto& r : records)
        if (r.time != records.front().time) distinct = true;
    if (!distinct) return 0;
    return estimate_trend(records, factor, cfg).slope;
}

}  // namespace detail

// Historical trust inference: merges local and received records, scores the
// history against the trust threshold, and aggregates per-factor temporal
// slopes (same factor weights) into the trend verdict. Histories too short
// for a slope count as stable.
inline TrustAnnotation infer_trust_semantics(const std::vector<PerformanceRecord>& local,
                                             const std::vector<PerformanceRecord>& received,
                                             Timestamp now, const EvalConfig& cfg) {
    const std::vector<PerformanceRecord> merged = merge_histories(local, received);
    if (merged.empty()) raise(ErrorCode::EmptyHistory, "no records to infer from");
    detail::require_single_subject(merged);

    const double score = score_history(merged, now, cfg);
    double weighted_slope = 0;
    for (std::size_t i = 0; i < 4; ++i)
        weighted_slope +=
            cfg.factor_weights[i] * detail::slope_or_zero(merged, static_cast<Factor>(i), cfg);

    TrustAnnotation a;
    a.subject = merged.front().subject;
    a.eval_time = now;
    a.status = score >= cfg.trust_threshold ? TrustStatus::Trusted : TrustStatus::Untrusted;
    a.trend = weighted_slope < -cfg.decline_epsilon ? TrustTrend::Declining : TrustTrend::Stable;
    return a;
}

struct TaskRequirements {
    double total_cycles = 0;
    double total_megabits = 0;
};

// Megabyte = 10^6 bytes, megabit = 10^6 bits; processing density is per bit.
inline TaskRequirements analyze_task(const TaskSpec& task) {
    if (!(task.size_mb > 0) || !(task.processing_density > 0) || !(task.deadline_s > 0))
        raise(ErrorCode::ConfigInvalid, "task fields must be strictly positive");
    TaskRequirements req;
    req.total_megabits = task.size_mb * 8.0;
    req.total_cycles = task.size_mb * 8.0e6 * task.processing_density;
    return req;
}

enum class MatchReason { Matched, NotIdle, InsufficientStorage, UnstableLink, DeadlineExceeded };

inline const char* to_string(MatchReason r) {
    switch (r) {
        case MatchReason::Matched: return "matched";
        case MatchReason::NotIdle: return "not_idle";
        case MatchReason::InsufficientStorage: return "insufficient_storage";
        case MatchReason::UnstableLink: return "unstable_link";
        case MatchReason::DeadlineExceeded: return "deadline_exceeded";
    }
    return "?";
}

struct MatchVerdict {
    bool matched = false;
    double t_comm_s = 0;
    double t_comp_s = 0;
    MatchReason reason = MatchReason::Matched;
};

// Task-resource feasibility: transfer plus compute must finish within both
// the deadline and the collaborator's advertised availability.
inline MatchVerdict check_resource_match(const TaskSpec& task, const ResourceSnapshot& snap,
                                         const EvalConfig& cfg) {
    const TaskRequirements req = analyze_task(task);
    MatchVerdict v;
    v.t_comm_s = req.total_megabits / snap.bandwidth_mbps;
    v.t_comp_s = req.total_cycles / (snap.cpu_freq_hz * snap.cpu_fraction);
    if (!snap.idle)
        v.reason = MatchReason::NotIdle;
    else if (snap.storage_mb < task.size_mb)
        v.reason = MatchReason::InsufficientStorage;
    else if (snap.stability < cfg.min_stability)
        v.reason = MatchReason::UnstableLink;
    else if (v.t_comm_s + v.t_comp_s > std::min(task.deadline_s, snap.available_time_s))
        v.reason = MatchReason::DeadlineExceeded;
    else
        v.reason = MatchReason::Matched;
    v.matched = v.reason == MatchReason::Matched;
    return v;
}

inline std::set<DeviceId> evaluate_resources(const TaskSpec& task,
                                             std::span<const ResourceSnapshot> snaps,
                                             const EvalConfig& cfg) {
    std::set<DeviceId> matched;
    for (const auto& s : snaps)
        if (check_resource_match(task, s, cfg).matched) matched.insert(s.subject);
    return matched;
}

// Pluggable inference contract. The deterministic rule engine is the default
// implementation; a remote adapter may substitute it as long as it produces
// the same structured verdicts (see remote.hpp).
class InferenceEngine {
  public:
    virtual ~InferenceEngine() = default;

    virtual TrustAnnotation infer_trust(const DeviceId& subject,
                                        const std::vector<PerformanceRecord>& local,
                                        const std::vector<PerformanceRecord>& received,
                                        Timestamp now, const EvalConfig& cfg) = 0;

    virtual std::set<DeviceId> infer_matching(const TaskSpec& task,
                                              const std::vector<ResourceSnapshot>& snaps,
                                              const EvalConfig& cfg) = 0;
};

class RuleEngine final : public InferenceEngine {
  public:
    TrustAnnotation infer_trust(const DeviceId& subject,
                                const std::vector<PerformanceRecord>& local,
                                const std::vector<PerformanceRecord>& received, Timestamp now,
                                const EvalConfig& cfg) override {
        TrustAnnotation a = infer_trust_semantics(local, received, now, cfg);
        if (a.subject != subject)
            raise(ErrorCode::SubjectMismatch,
                  "history is about " + a.subject.value + ", not " + subject.value);
        return a;
    }

    std::set<DeviceId> infer_matching(const TaskSpec& task,
                                      const std::vector<ResourceSnapshot>& snaps,
                                      const EvalConfig& cfg) override {
        return evaluate_resources(task, snaps, cfg);
    }
};

}  // namespace chaintrust
