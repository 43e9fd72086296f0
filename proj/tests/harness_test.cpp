#include "fsqos/harness.hpp"

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"
#include "json.hpp"

#include "fsqos/clock.hpp"
#include "fsqos/policy.hpp"

using namespace fsqos;
namespace fs = std::filesystem;

TEST_SUITE_BEGIN("harness");

namespace {

std::string fresh_dir(const std::string& tag) {
    std::string d = "/tmp/fsqos_harness_" + tag + "_" + std::to_string(::getpid());
    fs::remove_all(d);
    return d;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

const char* cli_binary() {
    const char* bin = std::getenv("FSQOS_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "FSQOS_BIN must point at the fsqos executable");
    return bin;
}

}  // namespace

TEST_CASE("scenario text parses with defaults") {
    ScenarioSpec spec;
    std::string err;
    REQUIRE(ScenarioSpec::parse_text(R"({"name":"t","algorithm":"none","duration_s":3})", &spec,
                                     &err));
    CHECK(spec.name == "t");
    CHECK(spec.algorithm == "none");
    CHECK(spec.duration_s == 3);
    CHECK(spec.jobs.empty());
    CHECK(spec.nodes == 1);
    CHECK(spec.epsilon == doctest::Approx(0.5));

    REQUIRE(ScenarioSpec::parse_text(R"({
        "name": "full", "algorithm": "priority", "max_rate": 900, "nodes": 2,
        "duration_s": 5, "channel": {"granularity": "op_class", "value": "metadata"},
        "jobs": [
          {"job_id": "a", "demand": 600, "limit": 500,
           "trace": {"op": "open", "mean_rate": 100, "duration_s": 4, "seed": 3}},
          {"job_id": "b", "demand": 300, "node": 1, "threads": 4,
           "trace": {"dir": "/tmp/somewhere"}}
        ]})",
                                     &spec, &err));
    CHECK(spec.jobs.size() == 2);
    CHECK(spec.jobs[0].limit == doctest::Approx(500));
    CHECK(spec.jobs[0].trace.synthetic);
    CHECK(spec.jobs[0].trace.op == OpType::open);
    CHECK_FALSE(spec.jobs[1].trace.synthetic);
    CHECK(spec.jobs[1].trace.dir == "/tmp/somewhere");
    CHECK(spec.jobs[1].node == 1);
    CHECK(spec.channel.granularity == MatchGranularity::op_class);
}

TEST_CASE("scenario parse rejects bad documents") {
    ScenarioSpec spec;
    std::string err;
    auto rejects = [&](const std::string& text) {
        err.clear();
        bool ok = ScenarioSpec::parse_text(text, &spec, &err);
        CHECK_FALSE(ok);
        CHECK_FALSE(err.empty());
    };
    rejects("[1,2,3]");
    rejects("not json at all");
    rejects(R"({"name":"x","algorithm":"fancy","duration_s":3})");
    rejects(R"({"name":"x","duration_s":0})");
    rejects(R"({"name":"x","duration_s":3,"channel":{"granularity":"color"}})");
    rejects(R"({"name":"x","duration_s":3,"jobs":[{"job_id":"", "demand": 1,
               "trace":{"mean_rate":10}}]})");
    rejects(R"({"name":"x","duration_s":3,"jobs":[
               {"job_id":"a","trace":{"mean_rate":10}},
               {"job_id":"a","trace":{"mean_rate":10}}]})");
    rejects(R"({"name":"x","duration_s":3,"jobs":[{"job_id":"a","threads":0,
               "trace":{"mean_rate":10}}]})");
    rejects(R"({"name":"x","duration_s":3,"jobs":[{"job_id":"a",
               "trace":{"op":"paint","mean_rate":10}}]})");
    rejects(R"({"name":"x","duration_s":3,"jobs":[{"job_id":"a","trace":{}}]})");
    rejects(R"({"name":"x","duration_s":3,"nodes":2,"jobs":[{"job_id":"a","node":5,
               "trace":{"mean_rate":10}}]})");
    rejects(R"({"name":"x","duration_s":3,"jobs":[
               {"job_id":"a","load_share":0.5,"trace":{"mean_rate":10}},
               {"job_id":"b","trace":{"mean_rate":10}}]})");
    rejects(R"({"name":"x","duration_s":3,"aggregate_mean_rate":100,"jobs":[
               {"job_id":"a","load_share":0.5,"trace":{}},
               {"job_id":"b","load_share":0.9,"trace":{}}]})");
}

TEST_CASE("scenario derives a valid policy document") {
    ScenarioSpec spec;
    std::string err;
    REQUIRE(ScenarioSpec::parse_text(R"({
        "name": "pol", "algorithm": "adaptive", "max_rate": 1200, "epsilon": 0.25,
        "duration_s": 4,
        "jobs": [
          {"job_id": "a", "demand": 700, "trace": {"mean_rate": 50}},
          {"job_id": "b", "demand": 500, "limit": 450, "trace": {"mean_rate": 50}}
        ]})",
                                     &spec, &err));
    Policy policy;
    REQUIRE_MESSAGE(Policy::parse_text(spec.policy_text(), &policy, &err), err);
    auto snap = policy.base();
    CHECK(snap.algorithm == Algorithm::adaptive);
    CHECK(snap.max_rate == doctest::Approx(1200));
    CHECK(snap.epsilon == doctest::Approx(0.25));
    CHECK(snap.configured_max_jobs == 2);
    CHECK(snap.qos_for("a").demand == doctest::Approx(700));
    CHECK(snap.qos_for("b").limit == doctest::Approx(450));
}

TEST_CASE("empty scenario produces a header-only run") {
    ScenarioSpec spec;
    std::string err;
    REQUIRE(ScenarioSpec::parse_text(R"({"name":"empty","algorithm":"none","duration_s":1})",
                                     &spec, &err));
    HarnessOptions opts;
    opts.run_dir = fresh_dir("empty");
    auto res = run_scenario(spec, opts);
    CHECK_FALSE(res.failed);
    CHECK(res.jobs.empty());
    CHECK(fs::exists(opts.run_dir + "/summary.json"));
    CHECK(fs::exists(opts.run_dir + "/manifest.json"));
    CHECK(read_file(opts.run_dir + "/throughput.csv") == "second,job_id,submitted,completed\n");
    fs::remove_all(opts.run_dir);
}

TEST_CASE("scenario run fails cleanly when the child binary is missing") {
    ScenarioSpec spec;
    std::string err;
    REQUIRE(ScenarioSpec::parse_text(R"({
        "name": "broken", "algorithm": "uniform", "max_rate": 100, "duration_s": 2,
        "jobs": [{"job_id": "a", "trace": {"mean_rate": 20}}]})",
                                     &spec, &err));
    HarnessOptions opts;
    opts.binary = "/nonexistent/fsqos-binary";
    opts.run_dir = fresh_dir("broken");
    int64_t t0 = now_ns();
    auto res = run_scenario(spec, opts);
    CHECK(res.failed);
    CHECK_FALSE(res.failure.empty());
    // Child death must cut the address wait short.
    CHECK(now_ns() - t0 < 8'000'000'000);
    CHECK(fs::exists(opts.run_dir + "/summary.json"));
    fs::remove_all(opts.run_dir);
}

TEST_CASE("single-job scenario runs end to end under a uniform cap") {
    ScenarioSpec spec;
    std::string err;
    REQUIRE(ScenarioSpec::parse_text(R"({
        "name": "solo", "algorithm": "uniform", "max_rate": 400,
        "configured_max_jobs": 1, "loop_interval_s": 0.25, "duration_s": 4, "seed": 5,
        "jobs": [{"job_id": "solo", "demand": 300, "threads": 2,
                  "trace": {"op": "getattr", "mean_rate": 300, "duration_s": 4}}]})",
                                     &spec, &err));
    HarnessOptions opts;
    opts.binary = cli_binary();
    opts.run_dir = fresh_dir("solo");
    auto res = run_scenario(spec, opts);
    REQUIRE_MESSAGE(!res.failed, res.failure);
    REQUIRE(res.jobs.size() == 1);
    // Flat curve at 300 ops/s under a 400 ops/s cap: everything completes on schedule.
    CHECK(res.jobs[0].submitted == 1200);
    CHECK(res.jobs[0].completed == 1200);
    CHECK(res.jobs[0].replay_duration_s < 8.0);
    CHECK_FALSE(res.jobs[0].aborted);
    CHECK(res.peak_window < 400 * 1.05);
    CHECK(res.windows_over_bound == 0);

    CHECK(fs::exists(opts.run_dir + "/global_cycles.csv"));
    CHECK(fs::exists(opts.run_dir + "/addrs/global"));
    std::string merged = read_file(opts.run_dir + "/throughput.csv");
    CHECK(merged.find("second,job_id,submitted,completed") == 0);
    CHECK(merged.find("solo") != std::string::npos);

    auto summary = nlohmann::json::parse(read_file(opts.run_dir + "/summary.json"));
    CHECK(summary["failed"] == false);
    CHECK(summary["jobs"].size() == 1);
    CHECK(summary["jobs"][0]["completed"] == 1200);
    for (const auto& c : summary["children"]) CHECK(c["exit_code"] == 0);
    fs::remove_all(opts.run_dir);
}

TEST_SUITE_END();
