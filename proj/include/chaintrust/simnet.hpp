#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <queue>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "chaintrust/agents.hpp"
#include "chaintrust/core.hpp"
#include "chaintrust/hypergraph.hpp"
#include "chaintrust/rng.hpp"
#include "chaintrust/semantics.hpp"

namespace chaintrust {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct Range {
    double lo = 0;
    double hi = 0;

    double sample(RngStream& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
    double mid() const { return 0.5 * (lo + hi); }
};

// Two-state CPU trace: per-slot busy/idle schedule, with per-sample noise.
// Idle slots occasionally spike (a background blip that fools single-sample
// perception) and busy slots occasionally dip.
struct TraceModel {
    int samples_per_slot = 5;
    Range idle_util{0.02, 0.12};
    Range busy_util{0.5, 1.0};
    Range spike_util{0.45, 0.75};
    double spike_prob = 0.04;
    double dip_prob = 0.1;

    double idle_mean() const {
        return (1 - spike_prob) * idle_util.mid() + spike_prob * spike_util.mid();
    }
    double busy_mean() const {
        return (1 - dip_prob) * busy_util.mid() + dip_prob * idle_util.mid();
    }
};

// Generator parameters for a device's resource snapshots. With
// idle_from_schedule the advertised idle bit mirrors the ground-truth
// schedule at sampling time, otherwise it is an independent coin.
struct ResourceProfile {
    bool idle_from_schedule = true;
    double idle_prob = 1.0;
    Range cpu_freq_hz{40e9, 50e9};
    Range cpu_fraction{0.9, 1.0};
    Range storage_mb{300, 800};
    Range bandwidth_mbps{200, 200};
    Range stability{0.92, 1.0};
    Range available_time_s{80, 200};
};

// Ground-truth execution quality used to synthesize performance records, so
// genuinely degrading devices can be scripted for trend tests.
struct DeviceQuality {
    double accuracy0 = 0.97;
    double accuracy_slope = 0;  // per second
    double speed0 = 2.0;        // MB/s
    double speed_slope = 0;
    double response0 = 0.5;  // seconds
    double response_slope = 0;
    double jitter = 0.01;  // relative noise amplitude
};

struct SimConfig {
    std::uint64_t seed = 1;
    int n_devices = 10;
    double slot_length_s = 30;
    double horizon_s = 3600;
    double link_latency_s = 0.1;
    double idle_fraction = 0.5;      // probability a slot is idle
    double task_rate_per_hour = 6;   // per device
    TaskSpec task_template{"c", 100, 2339, 60};
    TraceModel trace_model;
    std::vector<ResourceProfile> profiles{ResourceProfile{}};
    std::vector<int> profile_assignment;  // device -> profiles index, empty = all 0
    std::vector<DeviceQuality> qualities{DeviceQuality{}};
    std::vector<int> quality_assignment;
    std::vector<std::vector<bool>> schedule_override;  // per-device busy bits
    bool bootstrap_trusted = true;  // seed every peer as trusted/stable at t=0
    int cluster_count = 1;          // clusters for the EvaluateAllCluster baseline
    double feedback_accuracy_floor = 0.9;

    int n_slots() const { return static_cast<int>(std::llround(horizon_s / slot_length_s)); }

    void validate() const {
        if (n_devices < 1) raise(ErrorCode::ConfigInvalid, "n_devices must be >= 1");
        if (!(slot_length_s > 0)) raise(ErrorCode::ConfigInvalid, "slot_length must be > 0");
        if (!(horizon_s > 0)) raise(ErrorCode::ConfigInvalid, "horizon must be > 0");
        if (std::abs(horizon_s - n_slots() * slot_length_s) > 1e-9)
            raise(ErrorCode::ConfigInvalid, "horizon must be a multiple of slot_length");
        if (link_latency_s < 0) raise(ErrorCode::ConfigInvalid, "link_latency must be >= 0");
        if (2 * link_latency_s >= slot_length_s)
            raise(ErrorCode::ConfigInvalid, "a query/reply round trip must fit in one slot");
        if (idle_fraction < 0 || idle_fraction > 1)
            raise(ErrorCode::ConfigInvalid, "idle_fraction must be in [0,1]");
        if (task_rate_per_hour < 0) raise(ErrorCode::ConfigInvalid, "task_rate must be >= 0");
        if (trace_model.samples_per_slot < 1)
            raise(ErrorCode::ConfigInvalid, "samples_per_slot must be >= 1");
        if (profiles.empty()) raise(ErrorCode::ConfigInvalid, "at least one resource profile");
        if (qualities.empty()) raise(ErrorCode::ConfigInvalid, "at least one device quality");
        for (int p : profile_assignment)
            if (p < 0 || p >= static_cast<int>(profiles.size()))
                raise(ErrorCode::ConfigInvalid, "profile_assignment index out of range");
        for (int q : quality_assignment)
            if (q < 0 || q >= static_cast<int>(qualities.size()))
                raise(ErrorCode::ConfigInvalid, "quality_assignment index out of range");
        if (!profile_assignment.empty() &&
            profile_assignment.size() != static_cast<std::size_t>(n_devices))
            raise(ErrorCode::ConfigInvalid, "profile_assignment must list every device");
        if (!quality_assignment.empty() &&
            quality_assignment.size() != static_cast<std::size_t>(n_devices))
            raise(ErrorCode::ConfigInvalid, "quality_assignment must list every device");
        if (!schedule_override.empty()) {
            if (schedule_override.size() != static_cast<std::size_t>(n_devices))
                raise(ErrorCode::ConfigInvalid, "schedule_override must list every device");
            for (const auto& s : schedule_override)
                if (s.size() != static_cast<std::size_t>(n_slots()))
                    raise(ErrorCode::ConfigInvalid, "schedule_override must cover every slot");
        }
        if (cluster_count < 1) raise(ErrorCode::ConfigInvalid, "cluster_count must be >= 1");
        if (feedback_accuracy_floor < 0 || feedback_accuracy_floor > 1)
            raise(ErrorCode::ConfigInvalid, "feedback_accuracy_floor must be in [0,1]");
        analyze_task(task_template);  // rejects non-positive task fields
    }
};

// The per-device pipeline flavour driven by the simulator.
struct PolicySpec {
    PolicyKind kind = PolicyKind::SemanticChain;
    EvalConfig eval;
    PerceptionConfig perception;
    PipelineConfig pipeline;
};

// ---------------------------------------------------------------------------
// Trace
// ---------------------------------------------------------------------------

enum class TraceKind { Slot, Msg, Cycle, Task, Record, Snapshot };

inline const char* to_string(TraceKind k) {
    switch (k) {
        case TraceKind::Slot: return "slot";
        case TraceKind::Msg: return "msg";
        case TraceKind::Cycle: return "cycle";
        case TraceKind::Task: return "task";
        case TraceKind::Record: return "record";
        case TraceKind::Snapshot: return "snapshot";
    }
    return "?";
}

struct TraceEvent {
    std::uint64_t seq = 0;
    Timestamp time = 0;
    TraceKind kind = TraceKind::Slot;
    DeviceId device;
    json detail;

    json to_json() const {
        return json{{"seq", seq},
                    {"time", time},
                    {"kind", to_string(kind)},
                    {"device", device.value},
                    {"detail", detail}};
    }
};

struct SimTrace {
    SimConfig config;
    PolicySpec policy;
    std::vector<TraceEvent> events;
    std::map<DeviceId, json> final_snapshots;
    std::map<DeviceId, std::vector<PerformanceRecord>> final_stores;

    json header() const {
        return json{{"type", "header"},
                    {"seed", config.seed},
                    {"policy", to_string(policy.kind)},
                    {"n_devices", config.n_devices},
                    {"slot_length", config.slot_length_s},
                    {"horizon", config.horizon_s},
                    {"link_latency", config.link_latency_s}};
    }

    void write_jsonl(std::ostream& out) const {
        out << header().dump() << '\n';
        for (const auto& e : events) out << e.to_json().dump() << '\n';
        for (const auto& [id, snapshot] : final_snapshots) {
            out << json{{"type", "final_snapshot"}, {"device", id.value}, {"hypergraph", snapshot}}
                       .dump()
                << '\n';
        }
    }

    std::string to_jsonl() const {
        std::ostringstream out;
        write_jsonl(out);
        return out.str();
    }
};

// ---------------------------------------------------------------------------
// Device state and the stateless generators over it
// ---------------------------------------------------------------------------

struct DeviceState {
    DeviceId id;
    int index = 0;
    std::vector<bool> busy;          // ground-truth schedule per slot
    std::vector<double> pattern;     // learned per-slot mean utilization
    std::vector<PerformanceRecord> store;  // append-only, time-sorted
    ResourceProfile profile;
    DeviceQuality quality;
    std::unique_ptr<DevicePipeline> pipeline;
};

// Exactly the stored records about `subject` newer than `since`. An empty
// result means the device withholds any reply.
inline std::vector<PerformanceRecord> respond_history(const DeviceState& device,
                                                      const HisQueryPayload& query) {
    std::vector<PerformanceRecord> out;
    for (const auto& r : device.store)
        if (r.subject == query.subject && r.time > query.since) out.push_back(r);
    return out;
}

// Appends one observed outcome to the owner's store, keeping it time-sorted.
inline void record_outcome(DeviceState& owner, PerformanceRecord record) {
    if (!owner.store.empty() && record.time < owner.store.back().time)
        raise(ErrorCode::ConfigInvalid, "record store appends must not regress in time");
    owner.store.push_back(std::move(record));
}

// Draws the device's instantaneous resource offer. Pure function of
// (seed, device, at): repeated samples at one instant agree, and no policy
// can perturb another's stream.
inline ResourceSnapshot sample_snapshot(const SimConfig& cfg, const DeviceState& device,
                                        Timestamp at) {
    RngStream rng(cfg.seed, "resources", static_cast<std::uint64_t>(device.index), bits_of(at));
    ResourceSnapshot s;
    s.subject = device.id;
    s.available_time_s = device.profile.available_time_s.sample(rng);
    s.cpu_freq_hz = device.profile.cpu_freq_hz.sample(rng);
    s.cpu_fraction = device.profile.cpu_fraction.sample(rng);
    s.storage_mb = device.profile.storage_mb.sample(rng);
    s.bandwidth_mbps = device.profile.bandwidth_mbps.sample(rng);
    s.stability = device.profile.stability.sample(rng);
    if (device.profile.idle_from_schedule && !device.busy.empty()) {
        const auto slot = std::clamp<long long>(
            static_cast<long long>(at / cfg.slot_length_s), 0,
            static_cast<long long>(device.busy.size()) - 1);
        s.idle = !device.busy[static_cast<std::size_t>(slot)];
    } else {
        s.idle = rng.bernoulli(device.profile.idle_prob);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

class Simulator final : public Transport {
  public:
    Simulator(SimConfig config, PolicySpec policy)
        : cfg_(std::move(config)), policy_(std::move(policy)) {
        cfg_.validate();
        policy_.eval.validate();
        build_devices();
    }

    SimTrace run() {
        schedule_initial_events();
        while (!queue_.empty()) {
            Event ev = queue_.top();
            queue_.pop();
            if (ev.time >= cfg_.horizon_s + 1e-12) continue;  // the simulation ends at horizon
            now_ = ev.time;
            std::visit([&](const auto& body) { handle(body); }, ev.body);
        }
        SimTrace trace;
        trace.config = cfg_;
        trace.policy = policy_;
        trace.events = std::move(trace_);
        for (const auto& d : devices_) {
            trace.final_snapshots[d.id] = d.pipeline->graph().to_json();
            trace.final_stores[d.id] = d.store;
        }
        return trace;
    }

    // Transport: called from inside pipelines while an event is processing.
    void broadcast(const Envelope& env) override {
        const DeviceId from = device_of(env.sender);
        for (const auto& d : devices_) {
            if (d.id == from) continue;
            push(now_ + cfg_.link_latency_s, MsgDeliverEv{d.index, from, env});
        }
    }

    void unicast(const DeviceId& to, const Envelope& env) override {
        const DeviceId from = device_of(env.sender);
        auto it = index_.find(to);
        if (it == index_.end()) raise(ErrorCode::ConfigInvalid, "unknown recipient " + to.value);
        push(now_ + cfg_.link_latency_s, MsgDeliverEv{it->second, from, env});
    }

    // Ground-truth busy bit for the slot containing `at`.
    bool busy_at(const DeviceState& d, Timestamp at) const {
        const auto slot = slot_of(at);
        return d.busy[slot];
    }

    ResourceSnapshot snapshot_of(const DeviceState& d, Timestamp at) const {
        return sample_snapshot(cfg_, d, at);
    }

    const std::vector<DeviceState>& devices() const { return devices_; }

  private:
    struct SlotTickEv {
        int device;
        int slot;
    };
    struct MsgDeliverEv {
        int to;
        DeviceId from;
        Envelope env;
    };
    struct TaskArriveEv {
        int owner;
        TaskSpec task;
        int task_seq;
    };
    struct TaskCompleteEv {
        int owner;
        int executor;
        TaskSpec task;
        int task_seq;
        Timestamp arrived;
        double duration;
    };
    struct CycleResolveEv {
        int device;
        int phase;  // 1: replies still in flight, 2: resolve
        bool resource;
        std::string task_id;
        int task_seq;
        int slot;
        bool truly_idle;
    };
    using EventBody =
        std::variant<SlotTickEv, MsgDeliverEv, TaskArriveEv, TaskCompleteEv, CycleResolveEv>;

    struct Event {
        Timestamp time;
        std::uint64_t seq;
        EventBody body;
    };
    struct EventAfter {
        bool operator()(const Event& a, const Event& b) const {
            if (a.time != b.time) return a.time > b.time;
            return a.seq > b.seq;
        }
    };

    // --- construction -----------------------------------------------------

    static std::string device_name(int i, int n) {
        int width = 2;
        for (int v = n; v >= 100; v /= 10) width = std::min(width + 1, 9);
        char buf[32];
        std::snprintf(buf, sizeof(buf), "b_%0*d", width, i + 1);
        return buf;
    }

    void build_devices() {
        const int slots = cfg_.n_slots();
        for (int i = 0; i < cfg_.n_devices; ++i) {
            DeviceState d;
            d.id = DeviceId(device_name(i, cfg_.n_devices));
            d.index = i;
            d.profile =
                cfg_.profiles[cfg_.profile_assignment.empty() ? 0 : cfg_.profile_assignment[i]];
            d.quality =
                cfg_.qualities[cfg_.quality_assignment.empty() ? 0 : cfg_.quality_assignment[i]];
            d.busy.resize(slots);
            d.pattern.resize(slots);
            for (int s = 0; s < slots; ++s) {
                if (!cfg_.schedule_override.empty()) {
                    d.busy[s] = cfg_.schedule_override[i][s];
                } else {
                    RngStream rng(cfg_.seed, "sched", static_cast<std::uint64_t>(i),
                                  static_cast<std::uint64_t>(s));
                    d.busy[s] = !rng.bernoulli(cfg_.idle_fraction);
                }
                d.pattern[s] =
                    d.busy[s] ? cfg_.trace_model.busy_mean() : cfg_.trace_model.idle_mean();
            }
            devices_.push_back(std::move(d));
        }
        for (auto& d : devices_) {
            d.pipeline = std::make_unique<DevicePipeline>(
                d.id, policy_.eval, policy_.perception, policy_.pipeline, policy_.kind, &engine_,
                this, &d.store);
            index_[d.id] = d.index;
        }
        // bootstrap: every peer starts trusted with a stable trend
        if (cfg_.bootstrap_trusted) {
            for (auto& d : devices_)
                for (const auto& peer : devices_) {
                    if (peer.id == d.id) continue;
                    d.pipeline->graph().place(
                        TrustAnnotation{peer.id, 0, TrustStatus::Trusted, TrustTrend::Stable});
                }
        }
        // cluster peers for the evaluate-all baseline
        for (auto& d : devices_) {
            std::vector<DeviceId> cluster;
            for (const auto& peer : devices_)
                if (peer.index != d.index && peer.index % cfg_.cluster_count ==
                                                 d.index % cfg_.cluster_count)
                    cluster.push_back(peer.id);
            std::sort(cluster.begin(), cluster.end());
            d.pipeline->set_cluster_peers(std::move(cluster));
        }
    }

    void schedule_initial_events() {
        const int slots = cfg_.n_slots();
        for (int s = 0; s < slots; ++s)
            for (int i = 0; i < cfg_.n_devices; ++i)
                push(s * cfg_.slot_length_s, SlotTickEv{i, s});
        if (cfg_.task_rate_per_hour > 0) {
            const double mean_gap = 3600.0 / cfg_.task_rate_per_hour;
            // a task needs one query/reply round trip before the horizon
            const double last_arrival = cfg_.horizon_s - 2 * cfg_.link_latency_s;
            for (int i = 0; i < cfg_.n_devices; ++i) {
                Timestamp t = 0;
                for (int k = 0;; ++k) {
                    RngStream rng(cfg_.seed, "tasks", static_cast<std::uint64_t>(i),
                                  static_cast<std::uint64_t>(k));
                    t += rng.exponential(mean_gap);
                    if (t >= last_arrival) break;
                    TaskSpec task = cfg_.task_template;
                    task.task_id = cfg_.task_template.task_id + "_" + devices_[i].id.value + "_" +
                                   std::to_string(k);
                    push(t, TaskArriveEv{i, task, next_task_seq_++});
                }
            }
        }
    }

    // --- event handlers ----------------------------------------------------

    void handle(const SlotTickEv& ev) {
        DeviceState& d = devices_[ev.device];
        const std::vector<double> samples = slot_samples(d, ev.slot);
        const IdleVerdict verdict = d.pipeline->perceive(samples, d.pattern, ev.slot);
        const bool truly_idle = !d.busy[ev.slot];

        std::size_t triggered = 0;
        if (verdict.idle) {
            const std::vector<DeviceId> subjects =
                d.pipeline->begin_historical_cycle(now_, verdict, ev.slot);
            triggered = subjects.size();
            if (!subjects.empty()) {
                push(now_ + cfg_.link_latency_s,
                     CycleResolveEv{ev.device, 1, false, "", -1, ev.slot, truly_idle});
            } else {
                trace(TraceKind::Cycle, d.id,
                      json{{"outcome", "none_due"}, {"slot", ev.slot}, {"truly_idle", truly_idle}});
            }
        }
        trace(TraceKind::Slot, d.id,
              json{{"slot", ev.slot},
                   {"truly_idle", truly_idle},
                   {"verdict_idle", verdict.idle},
                   {"mean_util", verdict.mean_recent_util},
                   {"pattern_util", verdict.pattern_util},
                   {"triggered", triggered}});
    }

    void handle(const MsgDeliverEv& ev) {
        DeviceState& d = devices_[ev.to];
        const Envelope& env = ev.env;
        json detail{{"topic", to_string(env.topic)},
                    {"from", ev.from.value},
                    {"to", d.id.value}};

        switch (env.topic) {
            case Topic::HisQuery: {
                const bool busy = busy_at(d, now_);
                bool responded = false;
                if (!busy) {
                    const auto& query = std::get<HisQueryPayload>(env.payload);
                    std::vector<PerformanceRecord> found = respond_history(d, query);
                    if (!found.empty()) {
                        responded = true;
                        unicast(ev.from, Envelope{Topic::HisReply, d.id.value, now_,
                                                  HisReplyPayload{query.subject, std::move(found)}});
                    }
                }
                detail["busy"] = busy;
                detail["responded"] = responded;
                break;
            }
            case Topic::ResQuery: {
                const bool busy = busy_at(d, now_);
                bool responded = false;
                if (!busy) {
                    const auto& query = std::get<ResQueryPayload>(env.payload);
                    responded = true;
                    unicast(ev.from, Envelope{Topic::ResReply, d.id.value, now_,
                                              ResReplyPayload{query.task_id,
                                                              snapshot_of(d, now_)}});
                }
                detail["busy"] = busy;
                detail["responded"] = responded;
                break;
            }
            case Topic::HisReply:
            case Topic::ResReply:
                d.pipeline->deliver(env, now_);
                break;
            default:
                raise(ErrorCode::ConfigInvalid, "unexpected cross-device topic");
        }
        trace(TraceKind::Msg, d.id, std::move(detail));
    }

    void handle(const TaskArriveEv& ev) {
        DeviceState& d = devices_[ev.owner];
        if (policy_.kind == PolicyKind::RandomTrustedPick) {
            handle_random_pick_task(d, ev);
            return;
        }
        d.pipeline->begin_resource_cycle(ev.task, now_);
        push(now_ + cfg_.link_latency_s,
             CycleResolveEv{ev.owner, 1, true, ev.task.task_id, ev.task_seq,
                            static_cast<int>(slot_of(now_)), !busy_at(d, now_)});
    }

    // Baseline without resource checks: pick uniformly from the trusted group
    // and offload blindly; the recorded snapshot is the post-hoc ground truth.
    void handle_random_pick_task(DeviceState& d, const TaskArriveEv& ev) {
        const std::vector<DeviceId> trusted =
            d.pipeline->graph().members(SemanticLabel::trusted());
        json detail{{"task", ev.task.task_id},
                    {"spec", ev.task.to_json()},
                    {"trusted", json::array()},
                    {"queried", json::array()},
                    {"matched", json::array()},
                    {"selected", json::array()},
                    {"snapshots", json::array()}};
        for (const auto& t : trusted) detail["trusted"].push_back(t.value);

        if (!trusted.empty()) {
            RngStream rng(cfg_.seed, "pick", static_cast<std::uint64_t>(d.index),
                          static_cast<std::uint64_t>(ev.task_seq));
            const DeviceId pick = trusted[rng.below(trusted.size())];
            DeviceState& executor = devices_[index_.at(pick)];
            const ResourceSnapshot snap = snapshot_of(executor, now_);
            detail["selected"].push_back(pick.value);
            detail["snapshots"].push_back(snap.to_json());
            detail["executor"] = pick.value;
            const MatchVerdict v = check_resource_match(ev.task, snap, policy_.eval);
            push(now_ + v.t_comm_s + v.t_comp_s,
                 TaskCompleteEv{d.index, executor.index, ev.task, ev.task_seq, now_,
                                v.t_comm_s + v.t_comp_s});
        }
        trace(TraceKind::Task, d.id, std::move(detail));
    }

    void handle(const TaskCompleteEv& ev) {
        DeviceState& owner = devices_[ev.owner];
        const DeviceState& executor = devices_[ev.executor];
        const DeviceQuality& q = executor.quality;
        RngStream rng(cfg_.seed, "quality", static_cast<std::uint64_t>(ev.executor),
                      static_cast<std::uint64_t>(ev.task_seq));
        const double u1 = rng.uniform(-1, 1), u2 = rng.uniform(-1, 1), u3 = rng.uniform(-1, 1);

        PerformanceRecord r;
        r.observer = owner.id;
        r.subject = executor.id;
        r.time = now_;
        r.accuracy = std::clamp(q.accuracy0 + q.accuracy_slope * now_ + q.jitter * u1, 0.0, 1.0);
        r.exec_speed = std::max(0.01, q.speed0 + q.speed_slope * now_ + q.jitter * q.speed0 * u2);
        r.response_time =
            std::max(0.01, q.response0 + q.response_slope * now_ + q.jitter * q.response0 * u3);
        r.feedback = (ev.duration <= ev.task.deadline_s &&
                      r.accuracy >= cfg_.feedback_accuracy_floor)
                         ? Feedback::Satisfied
                         : Feedback::Unsatisfied;
        record_outcome(owner, r);
        trace(TraceKind::Record, owner.id,
              json{{"task", ev.task.task_id}, {"record", r.to_json()}});
    }

    void handle(const CycleResolveEv& ev) {
        if (ev.phase == 1) {
            CycleResolveEv next = ev;
            next.phase = 2;
            push(now_ + cfg_.link_latency_s, next);
            return;
        }
        DeviceState& d = devices_[ev.device];
        if (!ev.resource) {
            const auto outcomes = d.pipeline->resolve_historical_cycles(now_);
            for (const auto& o : outcomes) {
                json detail{{"outcome", to_string(o.status)},
                            {"slot", ev.slot},
                            {"truly_idle", ev.truly_idle}};
                if (o.evaluated) detail["subject"] = o.evaluated->value;
                if (o.annotation) detail["annotation"] = o.annotation->to_json();
                trace(TraceKind::Cycle, d.id, std::move(detail));
                if (o.status == CycleOutcome::Status::Evaluated)
                    trace(TraceKind::Snapshot, d.id, d.pipeline->graph().to_json());
            }
            return;
        }

        const ResourceCycleResult result = d.pipeline->resolve_resource_cycle(ev.task_id, now_);
        json detail{{"task", ev.task_id},
                    {"spec", result.task.to_json()},
                    {"trusted", json::array()},
                    {"queried", json::array()},
                    {"matched", json::array()},
                    {"selected", json::array()},
                    {"snapshots", json::array()}};
        for (const auto& t : result.trusted) detail["trusted"].push_back(t.value);
        for (const auto& t : result.queried) detail["queried"].push_back(t.value);
        for (const auto& s : result.snapshots) detail["snapshots"].push_back(s.to_json());
        for (const auto& m : result.hypergraph.edge) {
            detail["matched"].push_back(m.value);
            detail["selected"].push_back(m.value);
        }
        if (!result.hypergraph.edge.empty()) {
            std::vector<DeviceId> matched(result.hypergraph.edge.begin(),
                                          result.hypergraph.edge.end());
            RngStream rng(cfg_.seed, "exec", static_cast<std::uint64_t>(d.index),
                          static_cast<std::uint64_t>(ev.task_seq));
            const DeviceId pick = matched[rng.below(matched.size())];
            detail["executor"] = pick.value;
            const ResourceSnapshot* snap = nullptr;
            for (const auto& s : result.snapshots)
                if (s.subject == pick) snap = &s;
            const MatchVerdict v = check_resource_match(result.task, *snap, policy_.eval);
            push(now_ + v.t_comm_s + v.t_comp_s,
                 TaskCompleteEv{d.index, index_.at(pick), result.task, ev.task_seq, now_,
                                v.t_comm_s + v.t_comp_s});
        }
        trace(TraceKind::Task, d.id, std::move(detail));
    }

    // --- helpers ------------------------------------------------------------

    std::size_t slot_of(Timestamp t) const {
        const auto slot = static_cast<long long>(t / cfg_.slot_length_s);
        return static_cast<std::size_t>(
            std::clamp<long long>(slot, 0, cfg_.n_slots() - 1));
    }

    std::vector<double> slot_samples(const DeviceState& d, int slot) const {
        RngStream rng(cfg_.seed, "samples", static_cast<std::uint64_t>(d.index),
                      static_cast<std::uint64_t>(slot));
        std::vector<double> samples(static_cast<std::size_t>(cfg_.trace_model.samples_per_slot));
        for (auto& s : samples) {
            if (d.busy[slot])
                s = rng.bernoulli(cfg_.trace_model.dip_prob)
                        ? cfg_.trace_model.idle_util.sample(rng)
                        : cfg_.trace_model.busy_util.sample(rng);
            else
                s = rng.bernoulli(cfg_.trace_model.spike_prob)
                        ? cfg_.trace_model.spike_util.sample(rng)
                        : cfg_.trace_model.idle_util.sample(rng);
        }
        return samples;
    }

    void push(Timestamp time, EventBody body) {
        queue_.push(Event{time, next_event_seq_++, std::move(body)});
    }

    void trace(TraceKind kind, const DeviceId& device, json detail) {
        trace_.push_back(TraceEvent{next_trace_seq_++, now_, kind, device, std::move(detail)});
    }

    SimConfig cfg_;
    PolicySpec policy_;
    RuleEngine engine_;
    std::vector<DeviceState> devices_;
    std::map<DeviceId, int> index_;
    std::priority_queue<Event, std::vector<Event>, EventAfter> queue_;
    std::vector<TraceEvent> trace_;
    std::uint64_t next_event_seq_ = 0;
    std::uint64_t next_trace_seq_ = 0;
    int next_task_seq_ = 0;
    Timestamp now_ = 0;
};

inline SimTrace run(const SimConfig& config, const PolicySpec& policy) {
    Simulator sim(config, policy);
    return sim.run();
}

}  // namespace chaintrust
