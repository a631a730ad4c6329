#pragma once

#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "chaintrust/core.hpp"
#include "chaintrust/semantics.hpp"

namespace chaintrust {

// Remote inference endpoint over a JSON chat-style protocol. Absence of
// configuration (empty host) selects the local rule engine.
struct RemoteConfig {
    std::string host;
    int port = 0;
    std::string path = "/v1/chat/completions";
    double timeout_s = 5.0;
    std::string model = "trust-evaluator";

    bool configured() const { return !host.empty() && port > 0; }
};

// Finds the first balanced JSON object embedded in free-form text that
// parses and carries one of the expected verdict keys.
inline std::optional<json> extract_verdict_block(const std::string& text) {
    for (std::size_t start = text.find('{'); start != std::string::npos;
         start = text.find('{', start + 1)) {
        int depth = 0;
        bool in_string = false, escaped = false;
        for (std::size_t i = start; i < text.size(); ++i) {
            const char c = text[i];
            if (escaped) {
                escaped = false;
            } else if (c == '\\') {
                escaped = in_string;
            } else if (c == '"') {
                in_string = !in_string;
            } else if (!in_string && c == '{') {
                ++depth;
            } else if (!in_string && c == '}') {
                if (--depth == 0) {
                    json candidate = json::parse(text.substr(start, i - start + 1), nullptr,
                                                 /*allow_exceptions=*/false);
                    if (!candidate.is_discarded() && candidate.is_object() &&
                        (candidate.contains("status") || candidate.contains("matched")))
                        return candidate;
                    break;  // balanced but not a verdict; try the next '{'
                }
            }
        }
    }
    return std::nullopt;
}

inline std::optional<TrustAnnotation> parse_trust_verdict(const json& block,
                                                          const DeviceId& subject,
                                                          Timestamp now) {
    if (!block.contains("status") || !block.contains("trend")) return std::nullopt;
    const std::string status = block.at("status").is_string() ? block.at("status").get<std::string>() : "";
    const std::string trend = block.at("trend").is_string() ? block.at("trend").get<std::string>() : "";
    if ((status != "trusted" && status != "untrusted") ||
        (trend != "stable" && trend != "declining"))
        return std::nullopt;
    if (block.contains("device") && block.at("device").get<std::string>() != subject.value)
        return std::nullopt;
    TrustAnnotation a;
    a.subject = subject;
    a.eval_time = now;
    a.status = status == "trusted" ? TrustStatus::Trusted : TrustStatus::Untrusted;
    a.trend = trend == "declining" ? TrustTrend::Declining : TrustTrend::Stable;
    return a;
}

inline std::optional<std::set<DeviceId>> parse_match_verdict(
    const json& block, const std::vector<ResourceSnapshot>& snaps) {
    if (!block.contains("matched") || !block.at("matched").is_array()) return std::nullopt;
    std::set<DeviceId> offered;
    for (const auto& s : snaps) offered.insert(s.subject);
    std::set<DeviceId> matched;
    for (const auto& item : block.at("matched")) {
        if (!item.is_string()) return std::nullopt;
        DeviceId id(item.get<std::string>());
        if (!offered.count(id)) return std::nullopt;  // verdict about a device never offered
        matched.insert(id);
    }
    return matched;
}

// InferenceEngine backed by a remote chat endpoint. The request carries the
// structured history/task/resource context; the reply must contain a single
// extractable verdict block. Any failure -- missing configuration, transport
// errors, unparseable output -- falls back to the deterministic rule engine.
// Calls are serialized; the adapter is the only stateful inference path.
class RemoteEngine final : public InferenceEngine {
  public:
    explicit RemoteEngine(RemoteConfig cfg) : cfg_(std::move(cfg)) {}

    TrustAnnotation infer_trust(const DeviceId& subject,
                                const std::vector<PerformanceRecord>& local,
                                const std::vector<PerformanceRecord>& received, Timestamp now,
                                const EvalConfig& cfg) override {
        json context{{"kind", "historical trust evaluation"},
                     {"device", subject.value},
                     {"time", now},
                     {"trust threshold", cfg.trust_threshold},
                     {"local records", json::array()},
                     {"received records", json::array()}};
        for (const auto& r : local) context["local records"].push_back(r.to_json());
        for (const auto& r : received) context["received records"].push_back(r.to_json());

        if (auto block = ask(context,
                             "Infer the trust semantics of the device from its performance "
                             "history. Reply with one JSON object: "
                             "{\"device\",\"status\":\"trusted|untrusted\","
                             "\"trend\":\"stable|declining\"}")) {
            if (auto verdict = parse_trust_verdict(*block, subject, now)) return *verdict;
        }
        ++fallbacks_;
        return fallback_.infer_trust(subject, local, received, now, cfg);
    }

    std::set<DeviceId> infer_matching(const TaskSpec& task,
                                      const std::vector<ResourceSnapshot>& snaps,
                                      const EvalConfig& cfg) override {
        json context{{"kind", "task-resource matching"},
                     {"task", task.to_json()},
                     {"resources", json::array()}};
        for (const auto& s : snaps) context["resources"].push_back(s.to_json());

        if (auto block = ask(context,
                             "Analyze the task requirements, examine each collaborator's "
                             "resources, and compare the two. Reply with one JSON object: "
                             "{\"matched\": [\"device\", ...]}")) {
            if (auto verdict = parse_match_verdict(*block, snaps)) return *verdict;
        }
        ++fallbacks_;
        return fallback_.infer_matching(task, snaps, cfg);
    }

    std::size_t fallbacks() const { return fallbacks_; }

  private:
    std::optional<json> ask(const json& context, const std::string& instructions) {
        if (!cfg_.configured()) return std::nullopt;
        std::lock_guard<std::mutex> lock(mutex_);
        httplib::Client client(cfg_.host, cfg_.port);
        const auto timeout = std::chrono::milliseconds(
            static_cast<long long>(cfg_.timeout_s * 1000));
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);

        const json request{{"model", cfg_.model},
                           {"messages",
                            json::array({json{{"role", "system"}, {"content", instructions}},
                                         json{{"role", "user"}, {"content", context.dump()}}})}};
        auto res = client.Post(cfg_.path, request.dump(), "application/json");
        if (!res || res->status != 200) return std::nullopt;

        json body = json::parse(res->body, nullptr, /*allow_exceptions=*/false);
        if (!body.is_discarded() && body.contains("choices") && body.at("choices").is_array() &&
            !body.at("choices").empty()) {
            const json& msg = body.at("choices")[0];
            if (msg.contains("message") && msg.at("message").contains("content"))
                return extract_verdict_block(msg.at("message").at("content").get<std::string>());
        }
        return extract_verdict_block(res->body);
    }

    RemoteConfig cfg_;
    RuleEngine fallback_;
    std::mutex mutex_;
    std::size_t fallbacks_ = 0;
};

}  // namespace chaintrust
