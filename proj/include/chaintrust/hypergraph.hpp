#pragma once

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "chaintrust/core.hpp"

namespace chaintrust {

using json = nlohmann::json;

enum class TrustStatus { Trusted, Untrusted };
enum class TrustTrend { Stable, Declining };

inline const char* to_string(TrustStatus s) {
    return s == TrustStatus::Trusted ? "trusted" : "untrusted";
}
inline const char* to_string(TrustTrend t) {
    return t == TrustTrend::Stable ? "stable" : "declining";
}

// Semantic trust verdict attached to a collaborator. The trend is only
// meaningful while status is Trusted; untrusted members keep the last
// computed trend but no edge placement derives from it.
struct TrustAnnotation {
    DeviceId subject;
    Timestamp eval_time = 0;
    TrustStatus status = TrustStatus::Untrusted;
    TrustTrend trend = TrustTrend::Stable;

    json to_json() const {
        return json{{"device", subject.value},
                    {"time", eval_time},
                    {"status", to_string(status)},
                    {"trend", to_string(trend)}};
    }

    static TrustAnnotation from_json(const json& j) {
        TrustAnnotation a;
        a.subject = DeviceId(j.at("device").get<std::string>());
        a.eval_time = j.at("time").get<double>();
        a.status = j.at("status").get<std::string>() == "trusted" ? TrustStatus::Trusted
                                                                  : TrustStatus::Untrusted;
        a.trend = j.at("trend").get<std::string>() == "declining" ? TrustTrend::Declining
                                                                  : TrustTrend::Stable;
        return a;
    }
};

// Label carried by a hyperedge. TrustedStable/TrustedDeclining are subgroup
// labels of Trusted; TaskTrusted carries the task it was built for.
struct SemanticLabel {
    enum class Kind { Trusted, Untrusted, TrustedStable, TrustedDeclining, TaskTrusted };

    Kind kind = Kind::Trusted;
    std::string task_id;  // only for TaskTrusted

    static SemanticLabel trusted() { return {Kind::Trusted, ""}; }
    static SemanticLabel untrusted() { return {Kind::Untrusted, ""}; }
    static SemanticLabel trusted_stable() { return {Kind::TrustedStable, ""}; }
    static SemanticLabel trusted_declining() { return {Kind::TrustedDeclining, ""}; }
    static SemanticLabel task_trusted(std::string task) {
        return {Kind::TaskTrusted, std::move(task)};
    }

    std::string name() const {
        switch (kind) {
            case Kind::Trusted: return "trusted";
            case Kind::Untrusted: return "untrusted";
            case Kind::TrustedStable: return "trusted_stable";
            case Kind::TrustedDeclining: return "trusted_declining";
            case Kind::TaskTrusted: return "task_trusted:" + task_id;
        }
        return "?";
    }

    auto operator<=>(const SemanticLabel&) const = default;
};

// A device's local trust hypergraph: four mandatory semantically labeled
// hyperedges over its collaborators plus one annotation per member.
//
// Maintained invariants:
//   - every member sits in exactly one of {trusted, untrusted};
//   - trusted == trusted_stable ∪ trusted_declining, subgroups disjoint;
//   - the stored annotation always reproduces the member's edge placement;
//   - the owner is never a member.
//
// Extension edges (e.g. "medium_trust") are additive tags over existing
// members and never participate in the partition.
class TrustHypergraph {
  public:
    explicit TrustHypergraph(DeviceId owner) : owner_(std::move(owner)) {
        if (owner_.empty()) raise(ErrorCode::ConfigInvalid, "hypergraph owner id is empty");
        edges_[SemanticLabel::trusted()];
        edges_[SemanticLabel::untrusted()];
        edges_[SemanticLabel::trusted_stable()];
        edges_[SemanticLabel::trusted_declining()];
    }

    const DeviceId& owner() const { return owner_; }

    // Places (or re-places) a collaborator according to its annotation. Any
    // prior placement of the same subject is removed first. No staleness
    // check; use reassign() to keep eval_time monotone for known members.
    void place(const TrustAnnotation& a) {
        if (a.subject.empty()) raise(ErrorCode::ConfigInvalid, "member id is empty");
        if (a.subject == owner_)
            raise(ErrorCode::SelfPlacement, owner_.value + " cannot be its own collaborator");
        erase_from_partition(a.subject);
        insert_per_annotation(a);
        annotations_[a.subject] = a;
    }

    // Same as place() for an existing member; rejects unknown members and
    // annotations older than the stored one.
    void reassign(const TrustAnnotation& a) {
        auto it = annotations_.find(a.subject);
        if (it == annotations_.end())
            raise(ErrorCode::UnknownMember, a.subject.value + " is not a member of " + owner_.value);
        if (a.eval_time < it->second.eval_time)
            raise(ErrorCode::StaleAnnotation,
                  "annotation for " + a.subject.value + " regresses in time");
        place(a);
    }

    // Members of one labeled hyperedge, in DeviceId order.
    std::vector<DeviceId> members(const SemanticLabel& label) const {
        auto it = edges_.find(label);
        if (it == edges_.end())
            raise(ErrorCode::UnknownLabel, "no hyperedge labeled " + label.name());
        return {it->second.begin(), it->second.end()};
    }

    // Union of the partition edges, in DeviceId order.
    std::vector<DeviceId> all_members() const {
        std::vector<DeviceId> out;
        out.reserve(annotations_.size());
        for (const auto& [id, _] : annotations_) out.push_back(id);
        return out;
    }

    bool contains(const DeviceId& id) const { return annotations_.count(id) > 0; }

    const TrustAnnotation* annotation(const DeviceId& id) const {
        auto it = annotations_.find(id);
        return it == annotations_.end() ? nullptr : &it->second;
    }

    std::size_t size() const { return annotations_.size(); }

    // Additive, non-partition extension edges.
    void define_extension(const std::string& name) { extensions_[name]; }

    void tag_extension(const std::string& name, const DeviceId& member) {
        if (!contains(member))
            raise(ErrorCode::UnknownMember, member.value + " is not a member of " + owner_.value);
        auto it = extensions_.find(name);
        if (it == extensions_.end())
            raise(ErrorCode::UnknownLabel, "no extension edge named " + name);
        it->second.insert(member);
    }

    const std::map<std::string, std::set<DeviceId>>& extensions() const { return extensions_; }

    // Canonical structured form: stable key order, explicit label names.
    json to_json() const {
        json edges;
        for (const auto& [label, members] : edges_) {
            json arr = json::array();
            for (const auto& m : members) arr.push_back(m.value);
            edges[label.name()] = std::move(arr);
        }
        json annotations = json::object();
        for (const auto& [id, a] : annotations_) annotations[id.value] = a.to_json();
        json ext = json::object();
        for (const auto& [name, members] : extensions_) {
            json arr = json::array();
            for (const auto& m : members) arr.push_back(m.value);
            ext[name] = std::move(arr);
        }
        return json{{"type", "local"},
                    {"owner", owner_.value},
                    {"edges", std::move(edges)},
                    {"annotations", std::move(annotations)},
                    {"extensions", std::move(ext)}};
    }

  private:
    void erase_from_partition(const DeviceId& id) {
        for (auto& [_, members] : edges_) members.erase(id);
    }

    void insert_per_annotation(const TrustAnnotation& a) {
        if (a.status == TrustStatus::Trusted) {
            edges_[SemanticLabel::trusted()].insert(a.subject);
            if (a.trend == TrustTrend::Stable)
                edges_[SemanticLabel::trusted_stable()].insert(a.subject);
            else
                edges_[SemanticLabel::trusted_declining()].insert(a.subject);
        } else {
            edges_[SemanticLabel::untrusted()].insert(a.subject);
        }
    }

    DeviceId owner_;
    std::map<SemanticLabel, std::set<DeviceId>> edges_;
    std::map<DeviceId, TrustAnnotation> annotations_;
    std::map<std::string, std::set<DeviceId>> extensions_;
};

inline TrustHypergraph init_local(DeviceId owner) { return TrustHypergraph(std::move(owner)); }

// Single-hyperedge hypergraph of collaborators whose resources matched one
// task. An empty edge is valid: the task simply has no viable collaborator.
struct TaskTrustHypergraph {
    DeviceId owner;
    std::string task_id;
    std::set<DeviceId> edge;

    SemanticLabel label() const { return SemanticLabel::task_trusted(task_id); }

    json to_json() const {
        json arr = json::array();
        for (const auto& m : edge) arr.push_back(m.value);
        return json{{"type", "task"},
                    {"owner", owner.value},
                    {"task", task_id},
                    {"label", label().name()},
                    {"edge", std::move(arr)}};
    }
};

inline TaskTrustHypergraph build_task_hypergraph(const DeviceId& owner, std::string task_id,
                                                 const std::set<DeviceId>& matched,
                                                 const TrustHypergraph& local) {
    const auto trusted = local.members(SemanticLabel::trusted());
    for (const auto& m : matched) {
        if (!std::binary_search(trusted.begin(), trusted.end(), m))
            raise(ErrorCode::NotTrusted,
                  m.value + " is not in the trusted group of " + owner.value);
    }
    return TaskTrustHypergraph{owner, std::move(task_id), matched};
}

// Chain of task-specific hypergraphs across devices. Part k+1's owner must
// be a member of part k's edge; owners are pairwise distinct.
struct CompositeTrustHypergraph {
    std::vector<TaskTrustHypergraph> parts;

    json to_json() const {
        json arr = json::array();
        for (const auto& p : parts) arr.push_back(p.to_json());
        return json{{"type", "composite"}, {"parts", std::move(arr)}};
    }
};

inline CompositeTrustHypergraph chain(std::vector<TaskTrustHypergraph> parts) {
    if (parts.empty()) raise(ErrorCode::ConfigInvalid, "cannot chain zero hypergraphs");
    std::set<DeviceId> owners;
    for (const auto& p : parts) {
        if (!owners.insert(p.owner).second)
            raise(ErrorCode::DuplicateOwner, "duplicate owner " + p.owner.value + " in chain");
    }
    for (std::size_t k = 0; k + 1 < parts.size(); ++k) {
        if (!parts[k].edge.count(parts[k + 1].owner))
            raise(ErrorCode::BrokenChain,
                  parts[k + 1].owner.value + " is not in the edge owned by " + parts[k].owner.value);
    }
    return CompositeTrustHypergraph{std::move(parts)};
}

// Shortest hop-count path src..dst through task-specific hyperedges, where a
// hop a->b requires b in graphs[a].edge. Among equal-length paths the walk
// takes the lexicographically smallest next hop at every step. Returns
// nullopt when dst is unreachable.
inline std::optional<std::vector<DeviceId>> find_trust_path(
    const DeviceId& src, const DeviceId& dst,
    const std::map<DeviceId, TaskTrustHypergraph>& graphs) {
    if (!graphs.count(src))
        raise(ErrorCode::MissingGraph, src.value + " has no task hypergraph");
    if (src == dst) return std::vector<DeviceId>{src};

    // Reverse BFS from dst gives hop distance to dst for every node, then a
    // greedy forward walk picks the smallest feasible neighbour.
    std::map<DeviceId, std::vector<DeviceId>> reverse_adj;
    for (const auto& [owner, graph] : graphs)
        for (const auto& member : graph.edge) reverse_adj[member].push_back(owner);

    std::map<DeviceId, std::size_t> dist_to_dst;
    std::deque<DeviceId> frontier{dst};
    dist_to_dst[dst] = 0;
    while (!frontier.empty()) {
        DeviceId cur = frontier.front();
        frontier.pop_front();
        auto it = reverse_adj.find(cur);
        if (it == reverse_adj.end()) continue;
        for (const auto& prev : it->second) {
            if (dist_to_dst.emplace(prev, dist_to_dst[cur] + 1).second)
                frontier.push_back(prev);
        }
    }

    auto src_it = dist_to_dst.find(src);
    if (src_it == dist_to_dst.end()) return std::nullopt;

    std::vector<DeviceId> path{src};
    DeviceId cur = src;
    while (cur != dst) {
        const auto& edge = graphs.at(cur).edge;
        const std::size_t need = dist_to_dst.at(cur) - 1;
        const DeviceId* next = nullptr;
        for (const auto& cand : edge) {  // set iterates in DeviceId order
            auto d = dist_to_dst.find(cand);
            if (d != dist_to_dst.end() && d->second == need) {
                next = &cand;
                break;
            }
        }
        path.push_back(*next);
        cur = *next;
    }
    return path;
}

}  // namespace chaintrust
