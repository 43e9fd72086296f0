#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fsqos/policy.hpp"
#include "fsqos/workload.hpp"

namespace fsqos {

// Trace source for one job: either synthesized ahead of the run or an
// existing directory of <optype>_log.txt files.
struct TraceSpec {
    bool synthetic = true;
    std::string dir;  // used when synthetic is false
    OpType op = OpType::getattr;
    double mean_rate = 0.0;   // 0: load_share times the scenario aggregate
    uint32_t duration_s = 0;  // 0: scenario duration
    uint64_t seed = 0;        // 0: derived from scenario seed and job index
    BurstProfile profile;
};

struct JobSpec {
    std::string job_id;
    double demand = 0.0;
    double limit = -1.0;       // < 0: same as demand
    double load_share = -1.0;  // < 0: unset
    double start_offset_s = 0.0;
    int node = -1;            // local-controller index; -1: round robin
    uint32_t stages = 1;      // stage processes for this job
    uint32_t threads = 2;     // replayer threads per stage
    double rate_scale = 1.0;  // divided across the job's stages
    double time_compression = 1.0;
    TraceSpec trace;
};

// One experiment: a control plane (unless algorithm is "none"), per-job
// stage+replayer processes, and the artifact tree they produce.
struct ScenarioSpec {
    std::string name = "scenario";
    std::string algorithm = "adaptive";  // "none": unthrottled baseline
    double max_rate = 0.0;
    double epsilon = 0.5;
    double loop_interval_s = 0.5;
    std::string unit = "ops";
    uint32_t configured_max_jobs = 0;  // 0: number of jobs
    double default_demand = 0.0;
    uint32_t nodes = 1;  // local controllers
    uint32_t duration_s = 30;
    double aggregate_mean_rate = 0.0;
    uint64_t seed = 1;
    ChannelSpec channel{MatchGranularity::job, "", 0.1};
    std::vector<JobSpec> jobs;

    static bool parse_text(const std::string& json_text, ScenarioSpec* out, std::string* err);
    static bool load_file(const std::string& path, ScenarioSpec* out, std::string* err);
    bool validate(std::string* err) const;
    // The policy document the scenario's control plane runs ("" when the
    // scenario is a baseline).
    std::string policy_text() const;
};

struct JobResult {
    std::string job_id;
    uint64_t submitted = 0;
    uint64_t completed = 0;
    double replay_duration_s = 0.0;    // first submit to last admit, drain included
    double completion_offset_s = 0.0;  // scenario-relative end of the job
    bool aborted = false;
};

struct ScenarioResult {
    bool failed = false;
    std::string failure;
    std::vector<JobResult> jobs;
    // Cluster-wide admitted ops per scenario second (all jobs aligned to the
    // scenario clock).
    std::vector<double> aggregate_per_second;
    double peak_window = 0.0;
    uint32_t windows_over_max_rate = 0;  // aggregate > max_rate
    uint32_t windows_over_bound = 0;     // aggregate > max_rate * 1.05
    std::string run_dir;
};

struct HarnessOptions {
    std::string binary;   // child executable; empty: $FSQOS_BIN, then self
    std::string run_dir;  // created; must not be empty
    double timeout_s = 0.0;  // 0: derived from the scenario
};

// Launches, supervises, and reaps the scenario's processes, then folds their
// artifacts into run_dir/{manifest.json, policy.json, traces/, logs/,
// global_cycles.csv, throughput_*.csv, throughput.csv, summary.json}.
ScenarioResult run_scenario(const ScenarioSpec& spec, const HarnessOptions& opts);

// Closed-loop stage throughput. Produces the single-stage thread curve and
// the one-thread-per-stage scaling curve.
struct StageBenchRow {
    std::string mode;  // "single-stage" or "multi-stage"
    uint32_t stages = 1;
    uint32_t threads = 1;
    uint64_t total_ops = 0;
    double seconds = 0.0;
    double ops_per_s = 0.0;
};
std::vector<StageBenchRow> bench_stage(const std::vector<uint32_t>& thread_counts,
                                       const std::vector<uint32_t>& stage_counts,
                                       uint64_t requests_per_thread);

// Collect+compute+enforce latency over loopback with one registered stage
// per local controller.
struct ControlBenchResult {
    uint32_t locals = 0;
    uint64_t iterations = 0;
    double p50_ms = 0.0;
    double p95_ms = 0.0;
    double p99_ms = 0.0;
    double max_ms = 0.0;
};
ControlBenchResult bench_control(uint32_t locals, uint64_t iterations);

// Paced replay of one synthetic trace, sink-direct vs through a passthrough
// channel. overhead = 1 - passthrough/baseline; invalid when the trace is
// empty.
struct OverheadResult {
    double baseline_ops_s = 0.0;
    double passthrough_ops_s = 0.0;
    double overhead = 0.0;
    bool valid = false;
};
OverheadResult bench_overhead(uint64_t seed, uint32_t seconds, double mean_rate,
                              uint32_t threads);

}  // namespace fsqos
