#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "fsqos/request.hpp"
#include "fsqos/stage.hpp"

namespace fsqos {

// Per-second offered load for one operation type. samples[s] is the number
// of operations to submit during replay second s.
struct RateCurveTrace {
    OpType op_type = OpType::getattr;
    std::vector<uint64_t> samples;
};

// Trace files are plain text, one non-negative integer per line. A trace
// directory holds one file per operation type, named "<optype>_log.txt".
std::string trace_file_name(OpType op);
bool load_trace_file(const std::string& path, OpType op, RateCurveTrace* out, std::string* err);
bool save_trace_file(const std::string& path, const RateCurveTrace& trace, std::string* err);
// Loads every "<optype>_log.txt" present in the directory.
bool load_trace_dir(const std::string& dir, std::vector<RateCurveTrace>* out, std::string* err);
bool save_trace_dir(const std::string& dir, const std::vector<RateCurveTrace>& traces,
                    std::string* err);

struct BurstProfile {
    double burst_prob = 0.0;        // chance a second is a burst
    double burst_multiplier = 1.0;  // burst seconds carry >= this multiple of the mean
    double quiet_prob = 0.0;        // chance a second is quiet (<= 25% of the mean)
};

// Deterministic for a given seed. Unlabeled seconds sit near the mean;
// labeled seconds honor the burst/quiet bounds, and the normal body is
// scaled so the whole trace averages mean_rate (largest-remainder rounding
// keeps the total exact). At least one burst and one quiet second appear
// whenever the respective probability is nonzero and a slot is free.
// Throws std::invalid_argument when the profile is infeasible (labeled
// seconds alone would exceed the total budget).
RateCurveTrace generate_synthetic_trace(uint64_t seed, uint32_t duration_s, double mean_rate,
                                        const BurstProfile& profile,
                                        OpType op = OpType::getattr);

// Fraction of total operations contributed by each op type.
std::map<OpType, double> mix_report(const std::vector<RateCurveTrace>& traces);

struct ReplayerConfig {
    std::vector<RateCurveTrace> traces;
    uint32_t threads = 1;
    // Folds this many trace seconds into each replay second (60 turns one
    // minute of recorded load into one second of replay).
    double time_compression = 1.0;
    double rate_scale = 1.0;  // multiplies every per-second count
    std::string job_id = "job";
    std::string user_id = "user";
    std::string path = "/scratch/replay";  // request target inside the managed tree
    uint64_t io_size = 4096;               // byte descriptor for read/write ops
    bool poisson = false;                  // false: fixed uniform spacing within each second
    uint64_t seed = 0;                     // arrival jitter when poisson is set
    // When set, the clock does not start until the stage has at least one
    // channel (rules have arrived) or the wait budget lapses (then: abort).
    bool wait_rules = false;
    double wait_rules_timeout_s = 30.0;
};

struct ReplayRow {
    uint32_t second = 0;
    OpType op_type = OpType::getattr;
    uint64_t submitted = 0;  // offered by the schedule during this second
    uint64_t completed = 0;  // admitted by the stage during this second
};

struct ReplayReport {
    std::vector<ReplayRow> rows;  // ordered by (second, op_type)
    uint64_t total_submitted = 0;
    uint64_t total_completed = 0;
    int64_t started_ns = 0;
    int64_t finished_ns = 0;
    bool aborted = false;
};

// CSV: "second,op_type,submitted,completed" plus a header line.
void write_replay_csv(const ReplayReport& report, std::FILE* out);
bool write_replay_csv_file(const ReplayReport& report, const std::string& path, std::string* err);

// Paces the configured traces against one stage. Submission is decoupled
// from completion: the submitted column counts schedule slots whose due time
// elapsed, the completed column buckets operations by the time the stage
// admitted them, so throttling shows up as a gap plus a drain tail.
class Replayer {
public:
    Replayer(Stage& stage, ReplayerConfig cfg);

    ReplayReport run();

private:
    struct ScheduledOp {
        int64_t due_ns = 0;  // offset from replay start
        OpType op = OpType::getattr;
    };

    std::vector<ScheduledOp> build_schedule(
        std::map<std::pair<uint32_t, OpType>, uint64_t>* offered) const;

    Stage& stage_;
    ReplayerConfig cfg_;
};

}  // namespace fsqos
