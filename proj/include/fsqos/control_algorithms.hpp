#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fsqos {

// Per-job input to an allocation round. demand is what the job wants
// (ops/s or bytes/s, one unit per policy), usage is what it consumed over
// the last cycle window, limit is its static ceiling under the priority
// policy. Unused fields are ignored by algorithms that do not read them.
struct JobState {
    std::string job_id;
    double demand = 0.0;
    double usage = 0.0;
    double limit = 0.0;
};

struct AllocConfig {
    double max_rate = 0.0;        // cluster-wide budget, > 0
    double epsilon = 0.5;         // headroom factor in [0, 1] for adaptive
    uint32_t configured_max_jobs = 1;  // divisor for uniform
};

// One allocation result, aligned with the input job order.
struct Allocation {
    std::string job_id;
    double rate = 0.0;
    // Rate before the leftover redistribution pass. Equal to rate under
    // uniform/priority. Logged per cycle so rate-vs-usage tracking is
    // observable without re-deriving the redistribution.
    double base_rate = 0.0;
};

// Static equal split: max_rate / configured_max_jobs each, independent of
// how many jobs are active. Unclaimed shares stay unclaimed.
std::vector<Allocation> allocate_uniform(const AllocConfig& cfg,
                                         const std::vector<JobState>& jobs);

// Static per-job ceilings. Callers validate sum(limit) <= max_rate when the
// policy is loaded; the allocator itself just echoes the limits.
std::vector<Allocation> allocate_priority(const AllocConfig& cfg,
                                          const std::vector<JobState>& jobs);

// Demand-aware max-min sharing (water-filling): jobs are satisfied in
// increasing demand order, each receiving min(demand, fair share of what is
// left). Budget remaining after every demand is met is handed back in
// proportion to demand, so the full max_rate is always assigned.
std::vector<Allocation> allocate_proportional(const AllocConfig& cfg,
                                              const std::vector<JobState>& jobs);

// Usage-adaptive max-min sharing: like allocate_proportional, but a job's
// award is capped near its measured usage. A job consuming less than its
// demand gets usage + epsilon * (demand - usage) (still bounded by the fair
// share); a job over its demand is capped at the demand. Leftover budget is
// redistributed in proportion to usage, so jobs that actually consume grow
// toward their demand while idle reservations stop inflating the split.
// All-idle rounds (total usage zero) fall back to an equal split.
std::vector<Allocation> allocate_adaptive(const AllocConfig& cfg,
                                          const std::vector<JobState>& jobs);

// Splits one job-level rate across that job's stages in proportion to each
// stage's measured usage; an all-zero usage vector splits equally. The parts
// sum to job_rate up to rounding.
std::vector<double> split_job_rate(double job_rate,
                                   const std::vector<double>& stage_usages);

}  // namespace fsqos
