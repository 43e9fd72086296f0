#include "fsqos/control_algorithms.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace fsqos {

namespace {

void check_config(const AllocConfig& cfg) {
    if (cfg.max_rate <= 0.0) throw std::invalid_argument("max_rate must be > 0");
    if (cfg.epsilon < 0.0 || cfg.epsilon > 1.0)
        throw std::invalid_argument("epsilon must be in [0, 1]");
}

// Processing order: increasing demand, job_id as the tiebreak. Returns
// indices into `jobs` so results can be written back in input order.
std::vector<size_t> demand_order(const std::vector<JobState>& jobs) {
    std::vector<size_t> idx(jobs.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        if (jobs[a].demand != jobs[b].demand) return jobs[a].demand < jobs[b].demand;
        return jobs[a].job_id < jobs[b].job_id;
    });
    return idx;
}

std::vector<Allocation> init_result(const std::vector<JobState>& jobs) {
    std::vector<Allocation> out(jobs.size());
    for (size_t i = 0; i < jobs.size(); ++i) out[i].job_id = jobs[i].job_id;
    return out;
}

}  // namespace

std::vector<Allocation> allocate_uniform(const AllocConfig& cfg,
                                         const std::vector<JobState>& jobs) {
    check_config(cfg);
    if (cfg.configured_max_jobs == 0)
        throw std::invalid_argument("configured_max_jobs must be >= 1");
    auto out = init_result(jobs);
    double share = cfg.max_rate / cfg.configured_max_jobs;
    for (auto& a : out) a.rate = a.base_rate = share;
    return out;
}

std::vector<Allocation> allocate_priority(const AllocConfig& cfg,
                                          const std::vector<JobState>& jobs) {
    check_config(cfg);
    auto out = init_result(jobs);
    for (size_t i = 0; i < jobs.size(); ++i) out[i].rate = out[i].base_rate = jobs[i].limit;
    return out;
}

std::vector<Allocation> allocate_proportional(const AllocConfig& cfg,
                                              const std::vector<JobState>& jobs) {
    check_config(cfg);
    auto out = init_result(jobs);
    if (jobs.empty()) return out;

    auto order = demand_order(jobs);
    double left = cfg.max_rate;
    for (size_t i = 0; i < order.size(); ++i) {
        const JobState& j = jobs[order[i]];
        double fair = left / static_cast<double>(order.size() - i);
        double r = std::min(j.demand, fair);
        out[order[i]].rate = r;
        left -= r;
    }
    for (auto& a : out) a.base_rate = a.rate;

    if (left > 0.0) {
        double total_demand = 0.0;
        for (const auto& j : jobs) total_demand += j.demand;
        if (total_demand > 0.0) {
            for (size_t i = 0; i < jobs.size(); ++i)
                out[i].rate += left * (jobs[i].demand / total_demand);
        } else {
            // Nobody asked for anything; split the whole budget evenly.
            for (auto& a : out) a.rate += left / static_cast<double>(jobs.size());
        }
    }
    return out;
}

std::vector<Allocation> allocate_adaptive(const AllocConfig& cfg,
                                          const std::vector<JobState>& jobs) {
    check_config(cfg);
    auto out = init_result(jobs);
    if (jobs.empty()) return out;

    double total_usage = 0.0;
    for (const auto& j : jobs) total_usage += j.usage;
    if (total_usage <= 0.0) {
        double share = cfg.max_rate / static_cast<double>(jobs.size());
        for (auto& a : out) a.rate = a.base_rate = share;
        return out;
    }

    auto order = demand_order(jobs);
    double left = cfg.max_rate;
    for (size_t i = 0; i < order.size(); ++i) {
        const JobState& j = jobs[order[i]];
        double fair = left / static_cast<double>(order.size() - i);
        double r;
        if (j.usage <= j.demand)
            r = std::min(j.usage + cfg.epsilon * (j.demand - j.usage), fair);
        else
            r = std::min(j.demand, fair);
        out[order[i]].rate = r;
        left -= r;
    }
    for (auto& a : out) a.base_rate = a.rate;

    if (left > 0.0) {
        for (size_t i = 0; i < jobs.size(); ++i)
            out[i].rate += left * (jobs[i].usage / total_usage);
    }
    return out;
}

std::vector<double> split_job_rate(double job_rate,
                                   const std::vector<double>& stage_usages) {
    std::vector<double> out(stage_usages.size(), 0.0);
    if (stage_usages.empty()) return out;
    double total = 0.0;
    for (double u : stage_usages) total += u;
    if (total <= 0.0) {
        double share = job_rate / static_cast<double>(stage_usages.size());
        for (auto& r : out) r = share;
    } else {
        for (size_t i = 0; i < stage_usages.size(); ++i)
            out[i] = job_rate * (stage_usages[i] / total);
    }
    return out;
}

}  // namespace fsqos
