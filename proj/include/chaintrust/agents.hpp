#pragma once

#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "chaintrust/core.hpp"
#include "chaintrust/hypergraph.hpp"
#include "chaintrust/semantics.hpp"

namespace chaintrust {

// ---------------------------------------------------------------------------
// Agent roles and message topics
// ---------------------------------------------------------------------------

enum class AgentRole {
    StatePerceiver,
    TrustManager,
    HistoricalDataCollector,
    HistoricalTrustEvaluator,
    ResourceDataCollector,
    ResourceTrustEvaluator,
};

inline const char* to_string(AgentRole r) {
    switch (r) {
        case AgentRole::StatePerceiver: return "a_sp";
        case AgentRole::TrustManager: return "a_tm";
        case AgentRole::HistoricalDataCollector: return "a_hdc";
        case AgentRole::HistoricalTrustEvaluator: return "a_hte";
        case AgentRole::ResourceDataCollector: return "a_rde";
        case AgentRole::ResourceTrustEvaluator: return "a_rte";
    }
    return "?";
}

enum class Topic {
    SpIdle,
    TmSelect,
    HdcHistory,
    HteVerdict,
    TmTaskSelect,
    RdeResources,
    RteMatched,
    HisQuery,
    HisReply,
    ResQuery,
    ResReply,
};

inline const char* to_string(Topic t) {
    switch (t) {
        case Topic::SpIdle: return "sp_idle";
        case Topic::TmSelect: return "tm_select";
        case Topic::HdcHistory: return "hdc_history";
        case Topic::HteVerdict: return "hte_verdict";
        case Topic::TmTaskSelect: return "tm_task_select";
        case Topic::RdeResources: return "rde_resources";
        case Topic::RteMatched: return "rte_matched";
        case Topic::HisQuery: return "his_query";
        case Topic::HisReply: return "his_reply";
        case Topic::ResQuery: return "res_query";
        case Topic::ResReply: return "res_reply";
    }
    return "?";
}

inline Topic topic_from_string(const std::string& s) {
    static const std::map<std::string, Topic> names = {
        {"sp_idle", Topic::SpIdle},        {"tm_select", Topic::TmSelect},
        {"hdc_history", Topic::HdcHistory}, {"hte_verdict", Topic::HteVerdict},
        {"tm_task_select", Topic::TmTaskSelect}, {"rde_resources", Topic::RdeResources},
        {"rte_matched", Topic::RteMatched}, {"his_query", Topic::HisQuery},
        {"his_reply", Topic::HisReply},    {"res_query", Topic::ResQuery},
        {"res_reply", Topic::ResReply},
    };
    auto it = names.find(s);
    if (it == names.end()) raise(ErrorCode::ConfigInvalid, "unknown topic " + s);
    return it->second;
}

// ---------------------------------------------------------------------------
// Envelope payloads, one schema per topic
// ---------------------------------------------------------------------------

struct IdleVerdict {
    bool idle = false;
    double mean_recent_util = 0;
    double pattern_util = 0;
};

struct SpIdlePayload {
    IdleVerdict verdict;
    int slot = 0;
};

struct TmSelectPayload {
    DeviceId subject;
    Timestamp since = 0;  // subject's last annotation time
};

struct HisQueryPayload {
    DeviceId subject;
    Timestamp since = 0;
};

struct HisReplyPayload {
    DeviceId subject;
    std::vector<PerformanceRecord> records;
};

struct HdcHistoryPayload {
    DeviceId subject;
    std::vector<PerformanceRecord> records;
};

struct HteVerdictPayload {
    TrustAnnotation annotation;
};

struct TmTaskSelectPayload {
    TaskSpec task;
    std::vector<DeviceId> trusted;
};

struct ResQueryPayload {
    std::string task_id;
    DeviceId target;
};

struct ResReplyPayload {
    std::string task_id;
    ResourceSnapshot snapshot;
};

struct RdeResourcesPayload {
    TaskSpec task;
    std::vector<ResourceSnapshot> snapshots;
};

struct RteMatchedPayload {
    std::string task_id;
    std::vector<DeviceId> matched;
};

using Payload =
    std::variant<SpIdlePayload, TmSelectPayload, HisQueryPayload, HisReplyPayload,
                 HdcHistoryPayload, HteVerdictPayload, TmTaskSelectPayload, ResQueryPayload,
                 ResReplyPayload, RdeResourcesPayload, RteMatchedPayload>;

// Structured inter-agent and inter-device message.
struct Envelope {
    Topic topic = Topic::SpIdle;
    std::string sender;  // "<device>" or "<device>/<agent>"
    Timestamp time = 0;
    Payload payload;
};

inline DeviceId device_of(const std::string& sender) {
    auto slash = sender.find('/');
    return DeviceId(slash == std::string::npos ? sender : sender.substr(0, slash));
}

namespace detail {

inline json records_to_json(const std::vector<PerformanceRecord>& records) {
    json arr = json::array();
    for (const auto& r : records) arr.push_back(r.to_json());
    return arr;
}

inline std::vector<PerformanceRecord> records_from_json(const json& arr) {
    std::vector<PerformanceRecord> out;
    for (const auto& j : arr) out.push_back(PerformanceRecord::from_json(j));
    return out;
}

inline json ids_to_json(const std::vector<DeviceId>& ids) {
    json arr = json::array();
    for (const auto& d : ids) arr.push_back(d.value);
    return arr;
}

inline std::vector<DeviceId> ids_from_json(const json& arr) {
    std::vector<DeviceId> out;
    for (const auto& j : arr) out.emplace_back(j.get<std::string>());
    return out;
}

}  // namespace detail

inline json payload_to_json(const Payload& p) {
    return std::visit(
        [](const auto& body) -> json {
            using T = std::decay_t<decltype(body)>;
            if constexpr (std::is_same_v<T, SpIdlePayload>) {
                return json{{"idle", body.verdict.idle},
                            {"mean recent utilization", body.verdict.mean_recent_util},
                            {"pattern utilization", body.verdict.pattern_util},
                            {"slot", body.slot}};
            } else if constexpr (std::is_same_v<T, TmSelectPayload>) {
                return json{{"device", body.subject.value}, {"time", body.since}};
            } else if constexpr (std::is_same_v<T, HisQueryPayload>) {
                return json{{"device", body.subject.value}, {"since", body.since}};
            } else if constexpr (std::is_same_v<T, HisReplyPayload>) {
                return json{{"device", body.subject.value},
                            {"records", detail::records_to_json(body.records)}};
            } else if constexpr (std::is_same_v<T, HdcHistoryPayload>) {
                return json{{"device", body.subject.value},
                            {"records", detail::records_to_json(body.records)}};
            } else if constexpr (std::is_same_v<T, HteVerdictPayload>) {
                return body.annotation.to_json();
            } else if constexpr (std::is_same_v<T, TmTaskSelectPayload>) {
                return json{{"task", body.task.to_json()},
                            {"trusted", detail::ids_to_json(body.trusted)}};
            } else if constexpr (std::is_same_v<T, ResQueryPayload>) {
                return json{{"task", body.task_id}, {"device", body.target.value}};
            } else if constexpr (std::is_same_v<T, ResReplyPayload>) {
                return json{{"task", body.task_id}, {"resource", body.snapshot.to_json()}};
            } else if constexpr (std::is_same_v<T, RdeResourcesPayload>) {
                json arr = json::array();
                for (const auto& s : body.snapshots) arr.push_back(s.to_json());
                return json{{"task", body.task.to_json()}, {"resources", std::move(arr)}};
            } else {
                static_assert(std::is_same_v<T, RteMatchedPayload>);
                json arr = json::array();
                for (const auto& d : body.matched) arr.push_back(d.value);
                return json{{"task", body.task_id}, {"matched", std::move(arr)}};
            }
        },
        p);
}

inline Payload payload_from_json(Topic topic, const json& j) {
    switch (topic) {
        case Topic::SpIdle: {
            SpIdlePayload p;
            p.verdict.idle = j.at("idle").get<bool>();
            p.verdict.mean_recent_util = j.at("mean recent utilization").get<double>();
            p.verdict.pattern_util = j.at("pattern utilization").get<double>();
            p.slot = j.at("slot").get<int>();
            return p;
        }
        case Topic::TmSelect:
            return TmSelectPayload{DeviceId(j.at("device").get<std::string>()),
                                   j.at("time").get<double>()};
        case Topic::HisQuery:
            return HisQueryPayload{DeviceId(j.at("device").get<std::string>()),
                                   j.at("since").get<double>()};
        case Topic::HisReply:
            return HisReplyPayload{DeviceId(j.at("device").get<std::string>()),
                                   detail::records_from_json(j.at("records"))};
        case Topic::HdcHistory:
            return HdcHistoryPayload{DeviceId(j.at("device").get<std::string>()),
                                     detail::records_from_json(j.at("records"))};
        case Topic::HteVerdict:
            return HteVerdictPayload{TrustAnnotation::from_json(j)};
        case Topic::TmTaskSelect:
            return TmTaskSelectPayload{TaskSpec::from_json(j.at("task")),
                                       detail::ids_from_json(j.at("trusted"))};
        case Topic::ResQuery:
            return ResQueryPayload{j.at("task").get<std::string>(),
                                   DeviceId(j.at("device").get<std::string>())};
        case Topic::ResReply:
            return ResReplyPayload{j.at("task").get<std::string>(),
                                   ResourceSnapshot::from_json(j.at("resource"))};
        case Topic::RdeResources: {
            RdeResourcesPayload p;
            p.task = TaskSpec::from_json(j.at("task"));
            for (const auto& s : j.at("resources")) p.snapshots.push_back(ResourceSnapshot::from_json(s));
            return p;
        }
        case Topic::RteMatched: {
            RteMatchedPayload p;
            p.task_id = j.at("task").get<std::string>();
            for (const auto& d : j.at("matched")) p.matched.emplace_back(d.get<std::string>());
            return p;
        }
    }
    raise(ErrorCode::ConfigInvalid, "unhandled topic");
}

inline json envelope_to_json(const Envelope& e) {
    return json{{"topic", to_string(e.topic)},
                {"sender", e.sender},
                {"time", e.time},
                {"payload", payload_to_json(e.payload)}};
}

inline Envelope envelope_from_json(const json& j) {
    Envelope e;
    e.topic = topic_from_string(j.at("topic").get<std::string>());
    e.sender = j.at("sender").get<std::string>();
    e.time = j.at("time").get<double>();
    e.payload = payload_from_json(e.topic, j.at("payload"));
    return e;
}

// ---------------------------------------------------------------------------
// Subscription bus
// ---------------------------------------------------------------------------

// Fixed wiring: which agent consumes which intra-device topic. Cross-device
// topics (queries/replies) ride the transport instead and have no bus
// subscribers; RteMatched is terminal.
inline const std::map<Topic, std::vector<AgentRole>>& subscription_table() {
    static const std::map<Topic, std::vector<AgentRole>> table = {
        {Topic::SpIdle, {AgentRole::TrustManager}},
        {Topic::TmSelect, {AgentRole::HistoricalDataCollector}},
        {Topic::HdcHistory, {AgentRole::HistoricalTrustEvaluator}},
        {Topic::HteVerdict, {AgentRole::TrustManager}},
        {Topic::TmTaskSelect, {AgentRole::ResourceDataCollector}},
        {Topic::RdeResources, {AgentRole::ResourceTrustEvaluator}},
    };
    return table;
}

class MessageBus {
  public:
    struct LogEntry {
        Envelope envelope;
        std::vector<AgentRole> delivered_to;
    };

    // Synchronous dispatch in subscription order; deterministic by design.
    void publish(const Envelope& env,
                 const std::function<void(AgentRole, const Envelope&)>& deliver) {
        LogEntry entry{env, {}};
        auto it = subscription_table().find(env.topic);
        if (it != subscription_table().end()) entry.delivered_to = it->second;
        log_.push_back(entry);
        for (AgentRole role : entry.delivered_to) deliver(role, env);
    }

    const std::vector<LogEntry>& log() const { return log_; }
    void clear_log() { log_.clear(); }

  private:
    std::vector<LogEntry> log_;
};

// ---------------------------------------------------------------------------
// Perception and evaluation-target selection
// ---------------------------------------------------------------------------

struct PerceptionConfig {
    double tau_now = 0.35;   // threshold on the recent-sample mean
    double tau_hist = 0.35;  // threshold on the learned per-slot pattern
};

struct PipelineConfig {
    double w_stale = 1.0;
    double w_trend = 1.0;
    double w_freq = 1.0;
    double staleness_cap_s = 300;  // ten 30 s idle slots
    int batch = 1;                 // collaborators evaluated per idle slot
};

enum class PolicyKind { SemanticChain, StatisticalIdle, EvaluateAllCluster, RandomTrustedPick };

inline const char* to_string(PolicyKind p) {
    switch (p) {
        case PolicyKind::SemanticChain: return "SemanticChain";
        case PolicyKind::StatisticalIdle: return "StatisticalIdle";
        case PolicyKind::EvaluateAllCluster: return "EvaluateAllCluster";
        case PolicyKind::RandomTrustedPick: return "RandomTrustedPick";
    }
    return "?";
}

inline PolicyKind policy_from_string(const std::string& s) {
    if (s == "SemanticChain") return PolicyKind::SemanticChain;
    if (s == "StatisticalIdle") return PolicyKind::StatisticalIdle;
    if (s == "EvaluateAllCluster") return PolicyKind::EvaluateAllCluster;
    if (s == "RandomTrustedPick") return PolicyKind::RandomTrustedPick;
    raise(ErrorCode::ConfigInvalid, "unknown policy " + s);
}

// Idle inference from recent samples plus the learned per-slot pattern. A
// single low (or high) sample never decides on its own.
inline IdleVerdict perceive_state(std::span<const double> samples,
                                  std::span<const double> profile, std::size_t slot,
                                  const PerceptionConfig& cfg) {
    if (samples.empty()) raise(ErrorCode::NoSamples, "no CPU samples to perceive");
    const double mean =
        std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
    const double pattern = profile.empty() ? 0.0 : profile[slot % profile.size()];
    return IdleVerdict{mean < cfg.tau_now && pattern < cfg.tau_hist, mean, pattern};
}

// Naive baseline: trusts the single most recent sample.
inline IdleVerdict perceive_state_single_sample(std::span<const double> samples,
                                                const PerceptionConfig& cfg) {
    if (samples.empty()) raise(ErrorCode::NoSamples, "no CPU samples to perceive");
    const double last = samples.back();
    return IdleVerdict{last < cfg.tau_now, last, 0.0};
}

// Per-collaborator evaluation bookkeeping.
struct EvalLog {
    struct Entry {
        int count = 0;
        Timestamp last_eval = 0;
    };

    std::map<DeviceId, Entry> entries;

    void note(const DeviceId& id, Timestamp now) {
        Entry& e = entries[id];
        e.count += 1;
        e.last_eval = std::max(e.last_eval, now);
    }

    Entry lookup(const DeviceId& id) const {
        auto it = entries.find(id);
        return it == entries.end() ? Entry{} : it->second;
    }

    int max_count() const {
        int m = 0;
        for (const auto& [_, e] : entries) m = std::max(m, e.count);
        return m;
    }
};

inline double evaluation_priority(const TrustHypergraph& graph, const EvalLog& log,
                                  const DeviceId& member, Timestamp now,
                                  const PipelineConfig& cfg) {
    const EvalLog::Entry e = log.lookup(member);
    const double staleness =
        std::clamp((now - e.last_eval) / cfg.staleness_cap_s, 0.0, 1.0);
    const TrustAnnotation* a = graph.annotation(member);
    const bool declining =
        a != nullptr && a->status == TrustStatus::Trusted && a->trend == TrustTrend::Declining;
    const int maxc = log.max_count();
    const double freq = maxc > 0 ? static_cast<double>(e.count) / maxc : 0.0;
    return cfg.w_stale * staleness + cfg.w_trend * (declining ? 1.0 : 0.0) - cfg.w_freq * freq;
}

// Top-n members by evaluation priority; exact ties fall back to DeviceId
// order. Returns fewer than n when the graph is smaller.
inline std::vector<DeviceId> select_batch(const TrustHypergraph& graph, const EvalLog& log,
                                          Timestamp now, const PipelineConfig& cfg,
                                          std::size_t n) {
    std::vector<DeviceId> members = graph.all_members();
    if (members.empty()) return {};
    std::stable_sort(members.begin(), members.end(),
                     [&](const DeviceId& a, const DeviceId& b) {
                         return evaluation_priority(graph, log, a, now, cfg) >
                                evaluation_priority(graph, log, b, now, cfg);
                     });
    if (members.size() > n) members.resize(n);
    return members;
}

inline std::optional<DeviceId> select_for_evaluation(const TrustHypergraph& graph,
                                                     const EvalLog& log, Timestamp now,
                                                     const PipelineConfig& cfg) {
    auto batch = select_batch(graph, log, now, cfg, 1);
    if (batch.empty()) return std::nullopt;
    return batch.front();
}

inline Envelope build_history_query(const DeviceId& subject, Timestamp since, std::string sender,
                                    Timestamp at) {
    return Envelope{Topic::HisQuery, std::move(sender), at, HisQueryPayload{subject, since}};
}

// Concatenates reply payloads, validates the subject, removes duplicate
// (observer, time) records and returns the time-sorted aggregate.
inline Envelope aggregate_history_responses(const DeviceId& subject,
                                            std::span<const Envelope> replies, std::string sender,
                                            Timestamp at) {
    std::vector<PerformanceRecord> records;
    for (const auto& reply : replies) {
        const auto* p = std::get_if<HisReplyPayload>(&reply.payload);
        if (p == nullptr)
            raise(ErrorCode::ConfigInvalid, "aggregation expects his_reply envelopes");
        if (p->subject != subject)
            raise(ErrorCode::SubjectMismatch,
                  "reply about " + p->subject.value + " does not answer query for " + subject.value);
        for (const auto& r : p->records) {
            if (r.subject != subject)
                raise(ErrorCode::SubjectMismatch,
                      "record about " + r.subject.value + " in reply for " + subject.value);
            records.push_back(r);
        }
    }
    return Envelope{Topic::HdcHistory, std::move(sender), at,
                    HdcHistoryPayload{subject, merge_histories(std::move(records), {})}};
}

// ---------------------------------------------------------------------------
// Device pipeline: the six agents wired over the bus
// ---------------------------------------------------------------------------

// Cross-device message egress. The simulator schedules deliveries with
// latency; tests supply a collecting fake.
class Transport {
  public:
    virtual ~Transport() = default;
    virtual void broadcast(const Envelope& env) = 0;
    virtual void unicast(const DeviceId& to, const Envelope& env) = 0;
};

class CollectingTransport final : public Transport {
  public:
    struct Sent {
        std::optional<DeviceId> to;  // nullopt means broadcast
        Envelope envelope;
    };

    void broadcast(const Envelope& env) override { sent.push_back({std::nullopt, env}); }
    void unicast(const DeviceId& to, const Envelope& env) override { sent.push_back({to, env}); }

    std::vector<Sent> sent;
};

struct CycleOutcome {
    enum class Status { Evaluated, NoData, NoneDue };

    Status status = Status::NoneDue;
    std::optional<DeviceId> evaluated;
    std::optional<TrustAnnotation> annotation;
};

inline const char* to_string(CycleOutcome::Status s) {
    switch (s) {
        case CycleOutcome::Status::Evaluated: return "evaluated";
        case CycleOutcome::Status::NoData: return "no_data";
        case CycleOutcome::Status::NoneDue: return "none_due";
    }
    return "?";
}

struct ResourceCycleResult {
    TaskSpec task;
    TaskTrustHypergraph hypergraph;
    std::vector<ResourceSnapshot> snapshots;
    std::vector<DeviceId> queried;
    std::vector<DeviceId> trusted;
};

// One device's agent pipeline. Agents within a device run strictly
// sequentially; the only asynchronous boundaries are the cross-device
// query/reply exchanges, exposed as begin/deliver/resolve so a discrete-event
// driver (or a scripted test) can own the waiting.
class DevicePipeline {
  public:
    DevicePipeline(DeviceId id, EvalConfig eval, PerceptionConfig perception, PipelineConfig cfg,
                   PolicyKind policy, InferenceEngine* engine, Transport* transport,
                   const std::vector<PerformanceRecord>* local_records)
        : id_(std::move(id)),
          eval_(std::move(eval)),
          perception_(perception),
          cfg_(cfg),
          policy_(policy),
          engine_(engine),
          transport_(transport),
          local_records_(local_records),
          graph_(id_) {}

    const DeviceId& id() const { return id_; }
    TrustHypergraph& graph() { return graph_; }
    const TrustHypergraph& graph() const { return graph_; }
    EvalLog& eval_log() { return log_; }
    const EvalLog& eval_log() const { return log_; }
    PolicyKind policy() const { return policy_; }
    const std::vector<MessageBus::LogEntry>& message_log() const { return bus_.log(); }

    // Peers considered by the EvaluateAllCluster baseline.
    void set_cluster_peers(std::vector<DeviceId> peers) { cluster_peers_ = std::move(peers); }

    IdleVerdict perceive(std::span<const double> samples, std::span<const double> profile,
                         std::size_t slot) const {
        if (policy_ == PolicyKind::StatisticalIdle)
            return perceive_state_single_sample(samples, perception_);
        return perceive_state(samples, profile, slot, perception_);
    }

    // First half of the historical cycle: publish the idle verdict, pick
    // evaluation targets, broadcast one history query per target. Returns
    // the queried subjects; empty means none were due. Call only on an idle
    // verdict.
    std::vector<DeviceId> begin_historical_cycle(Timestamp now, const IdleVerdict& verdict,
                                                 int slot = 0) {
        now_ = now;
        publish(Envelope{Topic::SpIdle, agent_sender(AgentRole::StatePerceiver), now,
                         SpIdlePayload{verdict, slot}});
        std::vector<DeviceId> queried;
        for (const auto& [subject, _] : pending_history_) queried.push_back(subject);
        return queried;
    }

    // Collects cross-device replies addressed to this pipeline.
    void deliver(const Envelope& env, Timestamp now) {
        now_ = now;
        if (const auto* his = std::get_if<HisReplyPayload>(&env.payload)) {
            auto it = pending_history_.find(his->subject);
            if (it == pending_history_.end()) {
                ++stray_replies_;
                return;
            }
            it->second.replies.push_back(env);
        } else if (const auto* res = std::get_if<ResReplyPayload>(&env.payload)) {
            auto it = pending_resource_.find(res->task_id);
            if (it == pending_resource_.end()) {
                ++stray_replies_;
                return;
            }
            it->second.replies.push_back(env);
        } else {
            ++stray_replies_;
        }
    }

    // Second half, for every in-flight target: aggregate replies, infer
    // trust semantics (merging local records), reassign, update the
    // evaluation log. A failing cycle leaves hypergraph and log untouched.
    std::vector<CycleOutcome> resolve_historical_cycles(Timestamp now) {
        now_ = now;
        auto pending = std::move(pending_history_);
        pending_history_.clear();
        std::vector<CycleOutcome> outcomes;
        for (const auto& [subject, state] : pending) {
            scratch_outcome_.reset();
            Envelope aggregate = aggregate_history_responses(
                subject, state.replies, agent_sender(AgentRole::HistoricalDataCollector), now);
            publish(aggregate);
            log_.note(subject, now);
            outcomes.push_back(scratch_outcome_.value_or(
                CycleOutcome{CycleOutcome::Status::NoData, subject, std::nullopt}));
        }
        return outcomes;
    }

    bool historical_pending() const { return !pending_history_.empty(); }

    // First half of the resource cycle: extract the trusted group and query
    // each member for resources. Returns the queried devices (an empty
    // trusted group is fine and resolves to an empty-edge task hypergraph).
    std::vector<DeviceId> begin_resource_cycle(const TaskSpec& task, Timestamp now) {
        now_ = now;
        std::vector<DeviceId> targets = policy_ == PolicyKind::EvaluateAllCluster
                                            ? cluster_peers_
                                            : graph_.members(SemanticLabel::trusted());
        publish(Envelope{Topic::TmTaskSelect, agent_sender(AgentRole::TrustManager), now,
                         TmTaskSelectPayload{task, targets}});
        return targets;
    }

    // Second half: match collected snapshots against the task and wrap the
    // result in a task-specific trust hypergraph.
    ResourceCycleResult resolve_resource_cycle(const std::string& task_id, Timestamp now) {
        now_ = now;
        auto it = pending_resource_.find(task_id);
        if (it == pending_resource_.end())
            raise(ErrorCode::ConfigInvalid, "no resource cycle in flight for task " + task_id);
        PendingResource state = std::move(it->second);
        pending_resource_.erase(it);

        RdeResourcesPayload payload;
        payload.task = state.task;
        for (const auto& reply : state.replies)
            payload.snapshots.push_back(std::get<ResReplyPayload>(reply.payload).snapshot);
        scratch_resource_.reset();
        publish(Envelope{Topic::RdeResources, agent_sender(AgentRole::ResourceDataCollector), now,
                         payload});

        ResourceCycleResult result = std::move(*scratch_resource_);
        result.task = state.task;
        result.queried = state.queried;
        result.trusted = state.trusted;
        return result;
    }

    bool resource_pending(const std::string& task_id) const {
        return pending_resource_.count(task_id) > 0;
    }

    std::size_t stray_replies() const { return stray_replies_; }

  private:
    struct PendingHistory {
        Timestamp since = 0;
        std::vector<Envelope> replies;
    };

    struct PendingResource {
        TaskSpec task;
        std::vector<DeviceId> queried;
        std::vector<DeviceId> trusted;
        std::vector<Envelope> replies;
    };

    std::string agent_sender(AgentRole role) const {
        return id_.value + "/" + to_string(role);
    }

    void publish(const Envelope& env) {
        bus_.publish(env, [this](AgentRole role, const Envelope& e) { handle(role, e); });
    }

    void handle(AgentRole role, const Envelope& env) {
        switch (role) {
            case AgentRole::TrustManager:
                if (env.topic == Topic::SpIdle)
                    tm_on_idle(env);
                else
                    tm_on_verdict(env);
                break;
            case AgentRole::HistoricalDataCollector: hdc_on_select(env); break;
            case AgentRole::HistoricalTrustEvaluator: hte_on_history(env); break;
            case AgentRole::ResourceDataCollector: rde_on_task_select(env); break;
            case AgentRole::ResourceTrustEvaluator: rte_on_resources(env); break;
            case AgentRole::StatePerceiver: break;
        }
    }

    void tm_on_idle(const Envelope&) {
        std::vector<DeviceId> targets;
        if (policy_ == PolicyKind::EvaluateAllCluster) {
            targets = cluster_peers_;
        } else {
            targets = select_batch(graph_, log_, now_, cfg_,
                                   static_cast<std::size_t>(std::max(1, cfg_.batch)));
        }
        for (const auto& subject : targets) {
            const TrustAnnotation* a = graph_.annotation(subject);
            publish(Envelope{Topic::TmSelect, agent_sender(AgentRole::TrustManager), now_,
                             TmSelectPayload{subject, a != nullptr ? a->eval_time : 0}});
        }
    }

    void hdc_on_select(const Envelope& env) {
        const auto& p = std::get<TmSelectPayload>(env.payload);
        Envelope query = build_history_query(p.subject, p.since,
                                             agent_sender(AgentRole::HistoricalDataCollector), now_);
        pending_history_[p.subject] = PendingHistory{p.since, {}};
        transport_->broadcast(query);
    }

    void hte_on_history(const Envelope& env) {
        const auto& p = std::get<HdcHistoryPayload>(env.payload);
        std::vector<PerformanceRecord> local;
        if (local_records_ != nullptr) {
            for (const auto& r : *local_records_)
                if (r.subject == p.subject) local.push_back(r);
        }
        if (local.empty() && p.records.empty()) {
            scratch_outcome_ = CycleOutcome{CycleOutcome::Status::NoData, p.subject, std::nullopt};
            return;
        }
        TrustAnnotation a = engine_->infer_trust(p.subject, local, p.records, now_, eval_);
        publish(Envelope{Topic::HteVerdict, agent_sender(AgentRole::HistoricalTrustEvaluator),
                         now_, HteVerdictPayload{a}});
    }

    void tm_on_verdict(const Envelope& env) {
        const auto& a = std::get<HteVerdictPayload>(env.payload).annotation;
        if (graph_.contains(a.subject))
            graph_.reassign(a);
        else
            graph_.place(a);
        scratch_outcome_ = CycleOutcome{CycleOutcome::Status::Evaluated, a.subject, a};
    }

    void rde_on_task_select(const Envelope& env) {
        const auto& p = std::get<TmTaskSelectPayload>(env.payload);
        pending_resource_[p.task.task_id] =
            PendingResource{p.task, p.trusted, p.trusted, {}};
        for (const auto& target : p.trusted) {
            transport_->unicast(target,
                                Envelope{Topic::ResQuery,
                                         agent_sender(AgentRole::ResourceDataCollector), now_,
                                         ResQueryPayload{p.task.task_id, target}});
        }
    }

    void rte_on_resources(const Envelope& env) {
        const auto& p = std::get<RdeResourcesPayload>(env.payload);
        std::set<DeviceId> matched = engine_->infer_matching(p.task, p.snapshots, eval_);
        TaskTrustHypergraph hg;
        if (policy_ == PolicyKind::EvaluateAllCluster) {
            // The clustering baseline has no semantic trusted group to check.
            hg = TaskTrustHypergraph{id_, p.task.task_id, matched};
        } else {
            hg = build_task_hypergraph(id_, p.task.task_id, matched, graph_);
        }
        std::vector<DeviceId> matched_list(matched.begin(), matched.end());
        publish(Envelope{Topic::RteMatched, agent_sender(AgentRole::ResourceTrustEvaluator), now_,
                         RteMatchedPayload{p.task.task_id, matched_list}});
        scratch_resource_ = ResourceCycleResult{p.task, std::move(hg), p.snapshots, {}, {}};
    }

    DeviceId id_;
    EvalConfig eval_;
    PerceptionConfig perception_;
    PipelineConfig cfg_;
    PolicyKind policy_;
    InferenceEngine* engine_;
    Transport* transport_;
    const std::vector<PerformanceRecord>* local_records_;

    TrustHypergraph graph_;
    EvalLog log_;
    MessageBus bus_;
    std::vector<DeviceId> cluster_peers_;

    Timestamp now_ = 0;
    std::map<DeviceId, PendingHistory> pending_history_;
    std::map<std::string, PendingResource> pending_resource_;
    std::optional<CycleOutcome> scratch_outcome_;
    std::optional<ResourceCycleResult> scratch_resource_;
    std::size_t stray_replies_ = 0;
};

// ---------------------------------------------------------------------------
// Synchronous wrappers for scripted exchanges (tests, replays)
// ---------------------------------------------------------------------------

using ScriptedResponder = std::function<std::vector<Envelope>(const Envelope& query)>;

// Runs one full historical cycle against scripted responses. The pipeline
// must have been constructed with `transport` as its Transport.
inline std::vector<CycleOutcome> run_historical_cycle(DevicePipeline& pipeline,
                                                      CollectingTransport& transport,
                                                      const ScriptedResponder& responder,
                                                      Timestamp now, const IdleVerdict& verdict) {
    const std::size_t first = transport.sent.size();
    std::vector<DeviceId> queried = pipeline.begin_historical_cycle(now, verdict);
    if (queried.empty()) return {CycleOutcome{CycleOutcome::Status::NoneDue, std::nullopt, {}}};
    for (std::size_t i = first; i < transport.sent.size(); ++i) {
        if (transport.sent[i].envelope.topic != Topic::HisQuery) continue;
        for (const Envelope& reply : responder(transport.sent[i].envelope))
            pipeline.deliver(reply, now);
    }
    return pipeline.resolve_historical_cycles(now);
}

// Runs one full resource cycle against scripted responses.
inline ResourceCycleResult run_resource_cycle(DevicePipeline& pipeline,
                                              CollectingTransport& transport,
                                              const ScriptedResponder& responder,
                                              const TaskSpec& task, Timestamp now) {
    const std::size_t first = transport.sent.size();
    pipeline.begin_resource_cycle(task, now);
    for (std::size_t i = first; i < transport.sent.size(); ++i) {
        if (transport.sent[i].envelope.topic != Topic::ResQuery) continue;
        for (const Envelope& reply : responder(transport.sent[i].envelope))
            pipeline.deliver(reply, now);
    }
    return pipeline.resolve_resource_cycle(task.task_id, now);
}

}  // namespace chaintrust
