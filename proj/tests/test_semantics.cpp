#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "chaintrust/rng.hpp"
#include "chaintrust/semantics.hpp"

using namespace chaintrust;

namespace {

DeviceId dev(const char* s) { return DeviceId(s); }

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

PerformanceRecord rec(const char* observer, const char* subject, Timestamp t, double rt,
                      double speed, double acc, Feedback fb) {
    return PerformanceRecord{dev(observer), dev(subject), t, rt, speed, acc, fb};
}

PerformanceRecord random_record(RngStream& rng, const char* subject, Timestamp t) {
    return rec("b_o", subject, t, rng.uniform(0, 3), rng.uniform(0, 6), rng.uniform(0, 1),
               rng.bernoulli(0.5) ? Feedback::Satisfied : Feedback::Unsatisfied);
}

// Independent re-summation of the trust score, written from the formula
// rather than the implementation.
double score_oracle(const std::vector<PerformanceRecord>& records, Timestamp now,
                    const EvalConfig& cfg) {
    double num = 0, den = 0;
    for (const auto& r : records) {
        const double w = std::pow(2.0, -(now - r.time) / cfg.recency_half_life_s);
        const double acc = std::min(1.0, std::max(0.0, r.accuracy));
        const double speed = std::min(1.0, std::max(0.0, r.exec_speed / cfg.exec_speed_cap_mbps));
        const double rt = std::max(0.0, 1.0 - r.response_time / cfg.response_time_cap_s);
        const double fb = r.feedback == Feedback::Satisfied ? 1.0 : 0.0;
        const double v = cfg.factor_weights[0] * acc + cfg.factor_weights[1] * speed +
                         cfg.factor_weights[2] * rt + cfg.factor_weights[3] * fb;
        num += w * v;
        den += w;
    }
    return num / den;
}

// Normal-equation slope: solves the raw 2x2 system by Cramer's rule.
double slope_oracle(const std::vector<double>& t, const std::vector<double>& y) {
    const double n = static_cast<double>(t.size());
    double st = 0, sy = 0, stt = 0, sty = 0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        st += t[i];
        sy += y[i];
        stt += t[i] * t[i];
        sty += t[i] * y[i];
    }
    return (n * sty - st * sy) / (n * stt - st * st);
}

}  // namespace

TEST_CASE("normalize_record maps the worked record to (0.98, 0.5, 0.7, 1.0)", "[semantics]") {
    EvalConfig cfg;  // rt cap 2 s, speed cap 4 MB/s
    auto v = normalize_record(rec("b_i", "b_j", 0, 0.6, 2.0, 0.98, Feedback::Satisfied), cfg);
    REQUIRE(v[0] == Catch::Approx(0.98).margin(1e-12));
    REQUIRE(v[1] == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(v[2] == Catch::Approx(0.7).margin(1e-12));
    REQUIRE(v[3] == 1.0);
}

TEST_CASE("normalize_record on an all-zero record", "[semantics]") {
    EvalConfig cfg;
    auto v = normalize_record(rec("b_i", "b_j", 0, 0, 0, 0, Feedback::Unsatisfied), cfg);
    REQUIRE(v == FactorVector{0.0, 0.0, 1.0, 0.0});  // zero response time is the best score
}

TEST_CASE("normalized factors always land in [0,1]", "[semantics][property]") {
    EvalConfig cfg;
    RngStream rng(11, "normalize");
    for (int i = 0; i < 100; ++i) {
        auto v = normalize_record(random_record(rng, "b_j", rng.uniform(0, 1e4)), cfg);
        for (double x : v) {
            REQUIRE(x >= 0.0);
            REQUIRE(x <= 1.0);
        }
    }
}

TEST_CASE("score_history basics", "[semantics]") {
    EvalConfig cfg;

    SECTION("a perfect record scores 1.0") {
        std::vector<PerformanceRecord> h = {
            rec("b_i", "b_j", 100, 0, cfg.exec_speed_cap_mbps, 1.0, Feedback::Satisfied)};
        REQUIRE(score_history(h, 200, cfg) == Catch::Approx(1.0).margin(1e-12));
    }

    SECTION("identical records at different times score like one record") {
        PerformanceRecord r = rec("b_i", "b_j", 100, 0.6, 2.0, 0.98, Feedback::Satisfied);
        PerformanceRecord r2 = r;
        r2.time = 700;
        std::vector<PerformanceRecord> one = {r};
        std::vector<PerformanceRecord> two = {r, r2};
        REQUIRE(score_history(two, 1000, cfg) ==
                Catch::Approx(score_history(one, 1000, cfg)).margin(1e-12));
    }

    SECTION("empty history is an error") {
        std::vector<PerformanceRecord> h;
        REQUIRE(code_of([&] { score_history(h, 0, cfg); }) == ErrorCode::EmptyHistory);
    }

    SECTION("mixed subjects are rejected") {
        std::vector<PerformanceRecord> h = {
            rec("b_i", "b_j", 1, 1, 1, 1, Feedback::Satisfied),
            rec("b_i", "b_k", 2, 1, 1, 1, Feedback::Satisfied)};
        REQUIRE(code_of([&] { score_history(h, 10, cfg); }) == ErrorCode::SubjectMismatch);
    }
}

TEST_CASE("score_history matches the direct-summation oracle", "[semantics][property]") {
    EvalConfig cfg;
    RngStream rng(12, "score");
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<PerformanceRecord> h;
        const int n = 1 + static_cast<int>(rng.below(20));
        Timestamp t = rng.uniform(0, 100);
        for (int i = 0; i < n; ++i) {
            h.push_back(random_record(rng, "b_j", t));
            t += rng.uniform(1, 500);
        }
        const Timestamp now = t + rng.uniform(0, 1000);
        const double got = score_history(h, now, cfg);
        REQUIRE(got == Catch::Approx(score_oracle(h, now, cfg)).margin(1e-12));
        REQUIRE(got >= 0.0);
        REQUIRE(got <= 1.0);
    }
}

TEST_CASE("score_history is invariant under uniform time translation", "[semantics][property]") {
    EvalConfig cfg;
    RngStream rng(13, "score-shift");
    std::vector<PerformanceRecord> h;
    Timestamp t = 50;
    for (int i = 0; i < 12; ++i) {
        h.push_back(random_record(rng, "b_j", t));
        t += rng.uniform(1, 300);
    }
    const Timestamp now = t + 10;
    const double base = score_history(h, now, cfg);
    for (double shift : {-37.5, 1000.0, 123456.0}) {
        std::vector<PerformanceRecord> shifted = h;
        for (auto& r : shifted) r.time += shift;
        REQUIRE(score_history(shifted, now + shift, cfg) == Catch::Approx(base).margin(1e-9));
    }
}

TEST_CASE("estimate_trend on hand-computed series", "[semantics]") {
    EvalConfig cfg;

    SECTION("constant series is stable with zero slope") {
        std::vector<PerformanceRecord> h = {rec("b_i", "b_j", 0, 1, 1, 0.9, Feedback::Satisfied),
                                            rec("b_i", "b_j", 10, 1, 1, 0.9, Feedback::Satisfied)};
        auto est = estimate_trend(h, Factor::Accuracy, cfg);
        REQUIRE(est.slope == Catch::Approx(0.0).margin(1e-15));
        REQUIRE(est.direction == TrustTrend::Stable);
    }

    SECTION("accuracy 1.0 -> 0.8 -> 0.6 over 20 s has slope -0.02") {
        std::vector<PerformanceRecord> h = {rec("b_i", "b_j", 0, 1, 1, 1.0, Feedback::Satisfied),
                                            rec("b_i", "b_j", 10, 1, 1, 0.8, Feedback::Satisfied),
                                            rec("b_i", "b_j", 20, 1, 1, 0.6, Feedback::Satisfied)};
        auto est = estimate_trend(h, Factor::Accuracy, cfg);
        REQUIRE(est.slope == Catch::Approx(-0.02).margin(1e-12));
        REQUIRE(est.direction == TrustTrend::Declining);
    }

    SECTION("fewer than two records is an error") {
        std::vector<PerformanceRecord> h = {rec("b_i", "b_j", 0, 1, 1, 1, Feedback::Satisfied)};
        REQUIRE(code_of([&] { estimate_trend(h, Factor::Accuracy, cfg); }) ==
                ErrorCode::InsufficientHistory);
    }

    SECTION("identical timestamps are degenerate") {
        std::vector<PerformanceRecord> h = {rec("b_i", "b_j", 5, 1, 1, 1, Feedback::Satisfied),
                                            rec("b_m", "b_j", 5, 1, 1, 0.5, Feedback::Satisfied)};
        REQUIRE(code_of([&] { estimate_trend(h, Factor::Accuracy, cfg); }) ==
                ErrorCode::DegenerateTime);
    }
}

TEST_CASE("estimate_trend matches the normal-equation oracle", "[semantics][property]") {
    EvalConfig cfg;
    RngStream rng(14, "trend");
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(49));
        std::vector<PerformanceRecord> h;
        Timestamp t = rng.uniform(0, 50);
        for (int i = 0; i < n; ++i) {
            h.push_back(random_record(rng, "b_j", t));
            t += rng.uniform(0.5, 60);
        }
        const Factor factor = static_cast<Factor>(rng.below(4));
        std::vector<double> ts, ys;
        for (const auto& r : h) {
            ts.push_back(r.time);
            ys.push_back(normalize_record(r, cfg)[static_cast<std::size_t>(factor)]);
        }
        auto est = estimate_trend(h, factor, cfg);
        REQUIRE(est.slope == Catch::Approx(slope_oracle(ts, ys)).margin(1e-9));
        REQUIRE((est.direction == TrustTrend::Declining) == (est.slope < -cfg.decline_epsilon));
    }
}

TEST_CASE("infer_trust_semantics combines score and trend", "[semantics]") {
    EvalConfig cfg;

    SECTION("an all-perfect history is trusted and stable") {
        std::vector<PerformanceRecord> local;
        for (int i = 0; i < 5; ++i)
            local.push_back(rec("b_i", "b_j", 10.0 * i, 0, 4, 1.0, Feedback::Satisfied));
        auto a = infer_trust_semantics(local, {}, 100, cfg);
        REQUIRE(a.subject == dev("b_j"));
        REQUIRE(a.eval_time == 100);
        REQUIRE(a.status == TrustStatus::Trusted);
        REQUIRE(a.trend == TrustTrend::Stable);
    }

    SECTION("a steady good history re-evaluates to trusted/stable") {
        // score above threshold with flat slopes re-evaluates cleanly
        std::vector<PerformanceRecord> local = {
            rec("b_i", "b_j", 100, 0.6, 2.0, 0.98, Feedback::Satisfied)};
        std::vector<PerformanceRecord> received = {
            rec("b_m", "b_j", 400, 0.6, 2.0, 0.98, Feedback::Satisfied),
            rec("b_w", "b_j", 700, 0.6, 2.0, 0.98, Feedback::Satisfied)};
        const double score = score_oracle(merge_histories(local, received), 1000, cfg);
        REQUIRE(score >= cfg.trust_threshold);  // oracle confirms the setup
        auto a = infer_trust_semantics(local, received, 1000, cfg);
        REQUIRE(a.status == TrustStatus::Trusted);
        REQUIRE(a.trend == TrustTrend::Stable);
    }

    SECTION("a degrading history crossing the threshold is untrusted/declining") {
        std::vector<PerformanceRecord> local;
        for (int i = 0; i < 6; ++i) {
            const double fade = 1.0 - 0.15 * i;
            local.push_back(rec("b_i", "b_j", 100.0 * i, 2.0 - fade, 4 * fade,
                                std::max(0.0, fade), i < 2 ? Feedback::Satisfied
                                                           : Feedback::Unsatisfied));
        }
        const double score = score_oracle(local, 500, cfg);
        REQUIRE(score < cfg.trust_threshold);
        auto a = infer_trust_semantics(local, {}, 500, cfg);
        REQUIRE(a.status == TrustStatus::Untrusted);
        REQUIRE(a.trend == TrustTrend::Declining);
    }

    SECTION("duplicate (observer,time) records are dropped") {
        PerformanceRecord r = rec("b_m", "b_j", 100, 0.6, 2.0, 0.98, Feedback::Satisfied);
        auto merged = merge_histories({r}, {r, rec("b_m", "b_j", 200, 0.6, 2, 0.98,
                                                   Feedback::Satisfied)});
        REQUIRE(merged.size() == 2);
    }

    SECTION("no records at all is an error") {
        REQUIRE(code_of([&] { infer_trust_semantics({}, {}, 0, cfg); }) ==
                ErrorCode::EmptyHistory);
    }
}

TEST_CASE("infer_trust_semantics ignores input record ordering", "[semantics][property]") {
    EvalConfig cfg;
    RngStream rng(15, "infer-order");
    std::vector<PerformanceRecord> all;
    Timestamp t = 0;
    for (int i = 0; i < 14; ++i) {
        all.push_back(random_record(rng, "b_j", t));
        t += rng.uniform(1, 200);
    }
    auto base = infer_trust_semantics(all, {}, t + 5, cfg);

    std::mt19937 shuffler(99);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<PerformanceRecord> shuffled = all;
        std::shuffle(shuffled.begin(), shuffled.end(), shuffler);
        const auto split = shuffled.size() / 2;
        std::vector<PerformanceRecord> local(shuffled.begin(), shuffled.begin() + split);
        std::vector<PerformanceRecord> received(shuffled.begin() + split, shuffled.end());
        auto a = infer_trust_semantics(local, received, t + 5, cfg);
        REQUIRE(a.status == base.status);
        REQUIRE(a.trend == base.trend);
    }
}

TEST_CASE("analyze_task computes bit and cycle totals", "[semantics]") {
    SECTION("the 100 MB / 2339 cycles-per-bit task") {
        auto req = analyze_task(TaskSpec{"c", 100, 2339, 60});
        REQUIRE(req.total_megabits == Catch::Approx(800.0).margin(1e-12));
        REQUIRE(req.total_cycles == Catch::Approx(1.8712e12).margin(1.0));
    }

    SECTION("1 MB at 1 cycle/bit") {
        auto req = analyze_task(TaskSpec{"t", 1, 1, 1});
        REQUIRE(req.total_megabits == 8.0);
        REQUIRE(req.total_cycles == 8.0e6);
    }

    SECTION("doubling size doubles both outputs") {
        RngStream rng(16, "analyze");
        for (int i = 0; i < 20; ++i) {
            TaskSpec task{"t", rng.uniform(0.5, 500), rng.uniform(1, 5000), rng.uniform(1, 100)};
            TaskSpec doubled = task;
            doubled.size_mb *= 2;
            auto a = analyze_task(task);
            auto b = analyze_task(doubled);
            REQUIRE(b.total_megabits == Catch::Approx(2 * a.total_megabits).epsilon(1e-12));
            REQUIRE(b.total_cycles == Catch::Approx(2 * a.total_cycles).epsilon(1e-12));
        }
    }
}

TEST_CASE("check_resource_match on the worked snapshots", "[semantics]") {
    EvalConfig cfg;
    const TaskSpec task{"c", 100, 2339, 60};

    SECTION("a 40 GHz / 0.9 / 200 Mb/s snapshot matches") {
        ResourceSnapshot s{dev("b_w"), true, 120, 40e9, 0.9, 500, 200, 0.99};
        auto v = check_resource_match(task, s, cfg);
        REQUIRE(v.t_comm_s == Catch::Approx(4.0).margin(1e-12));
        REQUIRE(v.t_comp_s == Catch::Approx(1.8712e12 / 3.6e10).margin(1e-9));
        REQUIRE(v.matched);
        REQUIRE(v.reason == MatchReason::Matched);
    }

    SECTION("a 3 GHz snapshot misses the deadline") {
        ResourceSnapshot s{dev("b_u"), true, 1200, 3e9, 1.0, 500, 200, 0.99};
        auto v = check_resource_match(task, s, cfg);
        REQUIRE(v.t_comp_s == Catch::Approx(1.8712e12 / 3e9).margin(1e-6));
        REQUIRE_FALSE(v.matched);
        REQUIRE(v.reason == MatchReason::DeadlineExceeded);
    }

    SECTION("a busy snapshot never matches") {
        ResourceSnapshot s{dev("b_u"), false, 1200, 100e9, 1.0, 5000, 10000, 1.0};
        auto v = check_resource_match(task, s, cfg);
        REQUIRE_FALSE(v.matched);
        REQUIRE(v.reason == MatchReason::NotIdle);
    }

    SECTION("storage and stability shortfalls carry their reason codes") {
        ResourceSnapshot cramped{dev("b_u"), true, 1200, 100e9, 1.0, 50, 10000, 1.0};
        REQUIRE(check_resource_match(task, cramped, cfg).reason ==
                MatchReason::InsufficientStorage);
        ResourceSnapshot flaky{dev("b_u"), true, 1200, 100e9, 1.0, 5000, 10000, 0.5};
        REQUIRE(check_resource_match(task, flaky, cfg).reason == MatchReason::UnstableLink);
    }
}

TEST_CASE("record payloads keep the canonical field names", "[semantics]") {
    PerformanceRecord r = rec("b_i", "b_j", 100, 0.6, 2.0, 0.98, Feedback::Satisfied);
    REQUIRE(r.to_json().dump() ==
            R"({"accuracy":0.98,"device":"b_j","execution speed":2.0,"feedback":"satisfied",)"
            R"("observer":"b_i","response time":0.6,"time":100.0})");
    PerformanceRecord back = PerformanceRecord::from_json(r.to_json());
    REQUIRE(back.to_json().dump() == r.to_json().dump());
}

namespace {

ResourceSnapshot random_snapshot(RngStream& rng, const char* subject) {
    return ResourceSnapshot{dev(subject),
                            rng.bernoulli(0.7),
                            rng.uniform(0, 200),
                            rng.uniform(1e9, 60e9),
                            rng.uniform(0.05, 1.0),
                            rng.uniform(10, 1000),
                            rng.uniform(10, 1000),
                            rng.uniform(0.5, 1.0)};
}

}  // namespace

TEST_CASE("check_resource_match agrees with independent arithmetic", "[semantics][property]") {
    EvalConfig cfg;
    RngStream rng(17, "match");
    for (int i = 0; i < 200; ++i) {
        TaskSpec task{"t", rng.uniform(1, 400), rng.uniform(10, 4000), rng.uniform(5, 200)};
        ResourceSnapshot s = random_snapshot(rng, "b_x");
        auto v = check_resource_match(task, s, cfg);

        const double megabits = task.size_mb * 8.0;
        const double cycles = megabits * 1e6 * task.processing_density;
        const double t_comm = megabits / s.bandwidth_mbps;
        const double t_comp = cycles / (s.cpu_freq_hz * s.cpu_fraction);
        const bool matched = s.idle && s.storage_mb >= task.size_mb &&
                             s.stability >= cfg.min_stability &&
                             t_comm + t_comp <= std::min(task.deadline_s, s.available_time_s);
        REQUIRE(v.t_comm_s == Catch::Approx(t_comm).margin(1e-9));
        REQUIRE(v.t_comp_s == Catch::Approx(t_comp).margin(1e-9));
        REQUIRE(v.matched == matched);
    }
}

TEST_CASE("check_resource_match is monotone in resource generosity", "[semantics][property]") {
    EvalConfig cfg;
    RngStream rng(18, "monotone");
    for (int i = 0; i < 200; ++i) {
        TaskSpec task{"t", rng.uniform(1, 400), rng.uniform(10, 4000), rng.uniform(5, 200)};
        ResourceSnapshot s = random_snapshot(rng, "b_x");
        if (!check_resource_match(task, s, cfg).matched) continue;

        ResourceSnapshot better = s;
        switch (rng.below(6)) {
            case 0: better.bandwidth_mbps *= rng.uniform(1, 3); break;
            case 1: better.cpu_freq_hz *= rng.uniform(1, 3); break;
            case 2: better.cpu_fraction = std::min(1.0, better.cpu_fraction * rng.uniform(1, 2)); break;
            case 3: better.storage_mb *= rng.uniform(1, 3); break;
            case 4: better.stability = std::min(1.0, better.stability + rng.uniform(0, 0.5)); break;
            default: better.available_time_s += rng.uniform(0, 100); break;
        }
        TaskSpec easier = task;
        easier.deadline_s += rng.uniform(0, 60);
        REQUIRE(check_resource_match(task, better, cfg).matched);
        REQUIRE(check_resource_match(easier, s, cfg).matched);
    }
}

TEST_CASE("evaluate_resources filters exactly the matching subjects", "[semantics]") {
    EvalConfig cfg;
    const TaskSpec task{"c", 100, 2339, 60};

    SECTION("the worked pool selects b_w, b_m, b_j") {
        std::vector<ResourceSnapshot> snaps = {
            {dev("b_u"), true, 1200, 3e9, 1.0, 500, 200, 0.99},   // too slow
            {dev("b_j"), true, 120, 40e9, 0.9, 500, 200, 0.99},
            {dev("b_w"), true, 100, 45e9, 0.95, 400, 250, 0.95},
            {dev("b_m"), true, 90, 50e9, 1.0, 800, 300, 0.99},
        };
        REQUIRE(evaluate_resources(task, snaps, cfg) ==
                std::set<DeviceId>{dev("b_j"), dev("b_m"), dev("b_w")});
    }

    SECTION("an empty pool matches nothing") {
        REQUIRE(evaluate_resources(task, {}, cfg).empty());
    }

    SECTION("random pools equal element-wise filtering") {
        RngStream rng(19, "pool");
        for (int trial = 0; trial < 30; ++trial) {
            std::vector<ResourceSnapshot> snaps;
            const int n = static_cast<int>(rng.below(12));
            for (int i = 0; i < n; ++i) {
                snaps.push_back(random_snapshot(rng, ("b_" + std::to_string(i)).c_str()));
            }
            std::set<DeviceId> expected;
            for (const auto& s : snaps)
                if (check_resource_match(task, s, cfg).matched) expected.insert(s.subject);
            REQUIRE(evaluate_resources(task, snaps, cfg) == expected);
        }
    }
}

TEST_CASE("rule engine mirrors the free functions", "[semantics]") {
    EvalConfig cfg;
    RuleEngine engine;
    std::vector<PerformanceRecord> local = {
        rec("b_i", "b_j", 100, 0.6, 2.0, 0.98, Feedback::Satisfied)};

    auto a = engine.infer_trust(dev("b_j"), local, {}, 200, cfg);
    auto direct = infer_trust_semantics(local, {}, 200, cfg);
    REQUIRE(a.status == direct.status);
    REQUIRE(a.trend == direct.trend);
    REQUIRE(a.eval_time == direct.eval_time);

    REQUIRE(code_of([&] { engine.infer_trust(dev("b_z"), local, {}, 200, cfg); }) ==
            ErrorCode::SubjectMismatch);

    const TaskSpec task{"c", 100, 2339, 60};
    std::vector<ResourceSnapshot> snaps = {{dev("b_j"), true, 120, 40e9, 0.9, 500, 200, 0.99}};
    REQUIRE(engine.infer_matching(task, snaps, cfg) == evaluate_resources(task, snaps, cfg));
}

TEST_CASE("eval config validation", "[semantics]") {
    EvalConfig cfg;
    cfg.factor_weights = {0.5, 0.5, 0.5, 0.5};
    REQUIRE(code_of([&] { cfg.validate(); }) == ErrorCode::ConfigInvalid);
    cfg = EvalConfig{};
    cfg.trust_threshold = 1.5;
    REQUIRE(code_of([&] { cfg.validate(); }) == ErrorCode::ConfigInvalid);
    REQUIRE_NOTHROW(EvalConfig{}.validate());
}
