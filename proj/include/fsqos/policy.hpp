#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fsqos/request.hpp"

namespace fsqos {

enum class Algorithm : uint8_t { uniform, priority, proportional, adaptive };

std::string_view algorithm_name(Algorithm a);
std::optional<Algorithm> parse_algorithm(std::string_view name);

enum class RateUnit : uint8_t { ops, bytes };

// Matcher every member stage is provisioned with. An empty value under job
// or user granularity resolves to the stage's own job or user id.
struct ChannelSpec {
    MatchGranularity granularity = MatchGranularity::op_class;
    std::string value = "metadata";
    double burst_window_s = 0.1;
};

struct JobQos {
    double demand = 0.0;
    double limit = 0.0;
};

// Fully resolved policy view at one instant.
struct PolicySnapshot {
    Algorithm algorithm = Algorithm::uniform;
    double max_rate = 0.0;
    double epsilon = 0.5;
    double loop_interval_s = 1.0;
    uint32_t configured_max_jobs = 1;
    RateUnit unit = RateUnit::ops;
    ChannelSpec channel;
    double default_demand = 0.0;
    std::map<std::string, JobQos> jobs;

    // Falls back to default_demand for jobs the policy does not name.
    JobQos qos_for(const std::string& job_id) const;
};

// One scheduled change, applied once elapsed time reaches at_s. Steps are
// cumulative in file order. Job entries merge over the current set.
struct PolicyStep {
    double at_s = 0.0;
    std::optional<Algorithm> algorithm;
    std::optional<double> max_rate;
    std::optional<double> epsilon;
    std::optional<double> default_demand;
    std::optional<uint32_t> configured_max_jobs;
    std::map<std::string, JobQos> jobs;
};

// Validated policy document: a base snapshot plus a time schedule.
class Policy {
public:
    // Parses and validates a JSON document; false + *err on any problem.
    static bool parse_text(const std::string& json_text, Policy* out, std::string* err);
    static bool load_file(const std::string& path, Policy* out, std::string* err);

    // The exact source document (byte-preserving), used as the wire blob.
    const std::string& text() const { return text_; }

    PolicySnapshot resolve(double elapsed_s) const;
    const PolicySnapshot& base() const { return base_; }
    const std::vector<PolicyStep>& schedule() const { return steps_; }

private:
    std::string text_;
    PolicySnapshot base_;
    std::vector<PolicyStep> steps_;
};

}  // namespace fsqos
