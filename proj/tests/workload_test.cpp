#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "fsqos/clock.hpp"
#include "fsqos/sink.hpp"
#include "fsqos/stage.hpp"
#include "fsqos/workload.hpp"

using namespace fsqos;

TEST_SUITE_BEGIN("workload");

namespace {

uint64_t total_ops(const RateCurveTrace& t) {
    return std::accumulate(t.samples.begin(), t.samples.end(), uint64_t{0});
}

struct TempDir {
    TempDir() {
        path = "/tmp/fsqos_wl_" + std::to_string(::getpid()) + "_" +
               std::to_string(counter++);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    static inline int counter = 0;
    std::string path;
};

struct StageRig {
    StageRig() : stage({"job", "user", {"/scratch"}}, sink) {}
    NullSink sink;
    Stage stage;
};

uint64_t row_sum_submitted(const ReplayReport& r, uint32_t second) {
    uint64_t n = 0;
    for (const auto& row : r.rows)
        if (row.second == second) n += row.submitted;
    return n;
}

uint64_t row_sum_completed(const ReplayReport& r, uint32_t second) {
    uint64_t n = 0;
    for (const auto& row : r.rows)
        if (row.second == second) n += row.completed;
    return n;
}

}  // namespace

TEST_CASE("synthetic traces are reproducible and hit the requested mean") {
    BurstProfile profile{0.05, 5.0, 0.10};
    auto a = generate_synthetic_trace(42, 120, 200.0, profile);
    auto b = generate_synthetic_trace(42, 120, 200.0, profile);
    CHECK(a.samples == b.samples);
    CHECK(a.samples.size() == 120);

    auto c = generate_synthetic_trace(43, 120, 200.0, profile);
    CHECK(a.samples != c.samples);

    // The body is rescaled so the total lands on duration * mean exactly
    // (up to one op of rounding).
    double mean = static_cast<double>(total_ops(a)) / 120.0;
    CHECK(mean == doctest::Approx(200.0).epsilon(0.1));
    CHECK(std::llabs(static_cast<long long>(total_ops(a)) - 120 * 200) <= 1);

    bool has_burst = false;
    bool has_quiet = false;
    for (uint64_t v : a.samples) {
        if (v >= 5 * 200) has_burst = true;
        if (v <= 50) has_quiet = true;
    }
    CHECK(has_burst);
    CHECK(has_quiet);
}

TEST_CASE("nonzero probabilities force shape even in short traces") {
    // Probabilities too small to fire by chance here; one of each is forced.
    BurstProfile profile{0.001, 4.0, 0.001};
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        auto t = generate_synthetic_trace(seed, 10, 100.0, profile);
        bool burst = false;
        bool quiet = false;
        for (uint64_t v : t.samples) {
            if (v >= 400) burst = true;
            if (v <= 25) quiet = true;
        }
        CHECK(burst);
        CHECK(quiet);
    }
}

TEST_CASE("a flat profile yields a near-constant trace") {
    auto t = generate_synthetic_trace(7, 90, 1000.0, BurstProfile{});
    for (uint64_t v : t.samples) {
        CHECK(v >= 700);
        CHECK(v <= 1300);
    }
    CHECK(std::llabs(static_cast<long long>(total_ops(t)) - 90 * 1000) <= 1);
}

TEST_CASE("infeasible generator inputs are rejected") {
    CHECK_THROWS_AS(generate_synthetic_trace(1, 0, 100.0, BurstProfile{}),
                    std::invalid_argument);
    CHECK_THROWS_AS(generate_synthetic_trace(1, 10, 0.0, BurstProfile{}),
                    std::invalid_argument);
    CHECK_THROWS_AS(generate_synthetic_trace(1, 10, 100.0, BurstProfile{-0.1, 2.0, 0.0}),
                    std::invalid_argument);
    CHECK_THROWS_AS(generate_synthetic_trace(1, 10, 100.0, BurstProfile{0.6, 2.0, 0.6}),
                    std::invalid_argument);
    // Bursts alone would blow past the long-run budget.
    CHECK_THROWS_AS(generate_synthetic_trace(1, 40, 100.0, BurstProfile{0.9, 5.0, 0.0}),
                    std::invalid_argument);
}

TEST_CASE("the generator can reproduce a target operation mix") {
    struct Part {
        OpType op;
        double share;
    };
    const Part parts[] = {{OpType::getattr, 0.47},
                          {OpType::close, 0.21},
                          {OpType::rename, 0.16},
                          {OpType::open, 0.14},
                          {OpType::setattr, 0.02}};
    std::vector<RateCurveTrace> traces;
    for (const auto& p : parts)
        traces.push_back(generate_synthetic_trace(99, 300, 10000.0 * p.share,
                                                  BurstProfile{0.02, 3.0, 0.05}, p.op));
    auto shares = mix_report(traces);
    for (const auto& p : parts) CHECK(shares.at(p.op) == doctest::Approx(p.share).epsilon(0.02));

    auto single = mix_report({traces[0]});
    CHECK(single.at(OpType::getattr) == doctest::Approx(1.0));

    RateCurveTrace open_t{OpType::open, {10, 10}};
    RateCurveTrace close_t{OpType::close, {10, 10}};
    auto even = mix_report({open_t, close_t});
    CHECK(even.at(OpType::open) == doctest::Approx(0.5));
    CHECK(even.at(OpType::close) == doctest::Approx(0.5));
}

TEST_CASE("trace files round-trip through the directory convention") {
    TempDir dir;
    RateCurveTrace g{OpType::getattr, {5, 0, 17}};
    RateCurveTrace r{OpType::rename, {1, 2, 3, 4}};
    std::string err;
    REQUIRE_MESSAGE(save_trace_dir(dir.path, {g, r}, &err), err);
    CHECK(std::filesystem::exists(dir.path + "/getattr_log.txt"));
    CHECK(std::filesystem::exists(dir.path + "/rename_log.txt"));

    std::vector<RateCurveTrace> loaded;
    REQUIRE_MESSAGE(load_trace_dir(dir.path, &loaded, &err), err);
    REQUIRE(loaded.size() == 2);
    for (const auto& t : loaded) {
        if (t.op_type == OpType::getattr) CHECK(t.samples == g.samples);
        if (t.op_type == OpType::rename) CHECK(t.samples == r.samples);
    }

    RateCurveTrace out;
    CHECK_FALSE(load_trace_file(dir.path + "/absent.txt", OpType::open, &out, &err));

    {
        std::FILE* f = std::fopen((dir.path + "/open_log.txt").c_str(), "w");
        std::fputs("3\n-1\n", f);
        std::fclose(f);
    }
    CHECK_FALSE(load_trace_file(dir.path + "/open_log.txt", OpType::open, &out, &err));

    {
        std::FILE* f = std::fopen((dir.path + "/open_log.txt").c_str(), "w");
        std::fputs("3\nx7\n", f);
        std::fclose(f);
    }
    CHECK_FALSE(load_trace_file(dir.path + "/open_log.txt", OpType::open, &out, &err));

    {
        std::FILE* f = std::fopen((dir.path + "/open_log.txt").c_str(), "w");
        std::fputs("12\n\n34\n", f);  // blank lines are tolerated
        std::fclose(f);
    }
    REQUIRE(load_trace_file(dir.path + "/open_log.txt", OpType::open, &out, &err));
    CHECK(out.samples == std::vector<uint64_t>{12, 34});
}

TEST_CASE("identity replay tracks the trace without throttling") {
    StageRig rig;
    ReplayerConfig cfg;
    cfg.traces = {{OpType::getattr, {50, 50}}};
    cfg.threads = 2;
    Replayer rep(rig.stage, cfg);
    auto report = rep.run();

    CHECK_FALSE(report.aborted);
    CHECK(report.total_submitted == 100);
    CHECK(report.total_completed == 100);
    double dur = static_cast<double>(report.finished_ns - report.started_ns) / 1e9;
    CHECK(dur > 1.8);
    CHECK(dur < 2.5);
    // Per-second fidelity within 10%.
    CHECK(row_sum_submitted(report, 0) == 50);
    CHECK(row_sum_submitted(report, 1) == 50);
    CHECK(row_sum_completed(report, 0) >= 45);
    CHECK(row_sum_completed(report, 1) >= 45);
}

TEST_CASE("thread count repartitions work without changing it") {
    for (uint32_t threads : {1u, 3u}) {
        StageRig rig;
        ReplayerConfig cfg;
        cfg.traces = {{OpType::getattr, {30}}};
        cfg.threads = threads;
        auto report = Replayer(rig.stage, cfg).run();
        CHECK(report.total_submitted == 30);
        CHECK(report.total_completed == 30);
        CHECK(row_sum_submitted(report, 0) == 30);
    }
}

TEST_CASE("time compression folds trace seconds and rate scale rescales") {
    StageRig rig;
    ReplayerConfig cfg;
    cfg.traces = {{OpType::getattr, {10, 20, 30, 40}}};
    cfg.time_compression = 2.0;
    cfg.rate_scale = 0.5;
    auto report = Replayer(rig.stage, cfg).run();

    CHECK(report.total_submitted == 50);  // (10+20)/2 + (30+40)/2
    CHECK(row_sum_submitted(report, 0) == 15);
    CHECK(row_sum_submitted(report, 1) == 35);
    double dur = static_cast<double>(report.finished_ns - report.started_ns) / 1e9;
    CHECK(dur < 2.6);
}

TEST_CASE("poisson arrivals keep counts, only spacing changes") {
    StageRig rig;
    ReplayerConfig cfg;
    cfg.traces = {{OpType::getattr, {80}}};
    cfg.poisson = true;
    cfg.seed = 5;
    auto report = Replayer(rig.stage, cfg).run();
    CHECK(report.total_submitted == 80);
    CHECK(report.total_completed == 80);
}

TEST_CASE("a throttled replay shows the gap and then drains") {
    StageRig rig;
    REQUIRE(rig.stage.create_channel(1, MatchGranularity::op_type, "getattr", 0.05) ==
            AckStatus::ok);
    REQUIRE(rig.stage.set_channel_rate(1, 100.0) == AckStatus::ok);

    ReplayerConfig cfg;
    cfg.traces = {{OpType::getattr, {120, 120}}};
    cfg.threads = 2;
    auto report = Replayer(rig.stage, cfg).run();

    CHECK_FALSE(report.aborted);
    CHECK(report.total_submitted == 240);
    CHECK(report.total_completed == 240);  // blocked submitters drain eventually
    CHECK(row_sum_submitted(report, 0) == 120);
    CHECK(row_sum_submitted(report, 1) == 120);

    double dur = static_cast<double>(report.finished_ns - report.started_ns) / 1e9;
    CHECK(dur > 2.2);  // 240 ops at ~100/s: the tail runs past the trace end

    // Completed seconds track the enforced rate, not the offered rate.
    for (uint32_t s = 0; s <= 1; ++s) {
        CHECK(row_sum_completed(report, s) <= 130);
        CHECK(row_sum_completed(report, s) >= 70);
    }
    uint32_t last = 0;
    for (const auto& row : report.rows)
        if (row.completed > 0) last = std::max(last, row.second);
    CHECK(last >= 2);
}

TEST_CASE("waiting for rules aborts cleanly when none arrive") {
    StageRig rig;
    ReplayerConfig cfg;
    cfg.traces = {{OpType::getattr, {10}}};
    cfg.wait_rules = true;
    cfg.wait_rules_timeout_s = 0.15;
    int64_t t0 = now_ns();
    auto report = Replayer(rig.stage, cfg).run();
    CHECK(report.aborted);
    CHECK(report.rows.empty());
    CHECK(now_ns() - t0 < 1'000'000'000);

    // With a channel in place the same config runs.
    REQUIRE(rig.stage.create_channel(1, MatchGranularity::op_type, "getattr", 0.1) ==
            AckStatus::ok);
    REQUIRE(rig.stage.set_channel_rate(1, 10000.0) == AckStatus::ok);
    report = Replayer(rig.stage, cfg).run();
    CHECK_FALSE(report.aborted);
    CHECK(report.total_completed == 10);
}

TEST_CASE("shutdown mid-replay yields a partial, aborted report") {
    StageRig rig;
    REQUIRE(rig.stage.create_channel(1, MatchGranularity::op_type, "getattr", 0.05) ==
            AckStatus::ok);
    REQUIRE(rig.stage.set_channel_rate(1, 10.0) == AckStatus::ok);

    ReplayerConfig cfg;
    cfg.traces = {{OpType::getattr, {50, 50, 50, 50}}};
    cfg.threads = 2;
    Replayer rep(rig.stage, cfg);
    std::thread killer([&] {
        sleep_ns(500'000'000);
        rig.stage.shutdown();
    });
    auto report = rep.run();
    killer.join();

    CHECK(report.aborted);
    CHECK(report.total_completed < 200);
    CHECK(report.total_submitted <= 200);
    double dur = static_cast<double>(report.finished_ns - report.started_ns) / 1e9;
    CHECK(dur < 2.0);
}

TEST_CASE("replay csv has one row per active second and type") {
    ReplayReport report;
    report.rows = {{0, OpType::getattr, 50, 48}, {1, OpType::open, 10, 10}};
    TempDir dir;
    std::string err;
    REQUIRE(write_replay_csv_file(report, dir.path + "/replay.csv", &err));

    std::ifstream in(dir.path + "/replay.csv");
    std::string line;
    std::getline(in, line);
    CHECK(line == "second,op_type,submitted,completed");
    std::getline(in, line);
    CHECK(line == "0,getattr,50,48");
    std::getline(in, line);
    CHECK(line == "1,open,10,10");
}

TEST_SUITE_END();
