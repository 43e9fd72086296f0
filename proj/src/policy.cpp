#include "fsqos/policy.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace fsqos {

using nlohmann::json;

std::string_view algorithm_name(Algorithm a) {
    switch (a) {
        case Algorithm::uniform: return "uniform";
        case Algorithm::priority: return "priority";
        case Algorithm::proportional: return "proportional";
        case Algorithm::adaptive: return "adaptive";
    }
    return "?";
}

std::optional<Algorithm> parse_algorithm(std::string_view name) {
    for (int i = 0; i < 4; ++i) {
        auto a = static_cast<Algorithm>(i);
        if (algorithm_name(a) == name) return a;
    }
    return std::nullopt;
}

JobQos PolicySnapshot::qos_for(const std::string& job_id) const {
    auto it = jobs.find(job_id);
    if (it != jobs.end()) return it->second;
    return JobQos{default_demand, default_demand};
}

namespace {

bool parse_job_entry(const json& v, JobQos* out, std::string* err) {
    if (v.is_number()) {
        double d = v.get<double>();
        if (d < 0 || !std::isfinite(d)) {
            *err = "job rate must be finite and >= 0";
            return false;
        }
        out->demand = out->limit = d;
        return true;
    }
    if (!v.is_object()) {
        *err = "job entry must be a number or an object";
        return false;
    }
    out->demand = v.value("demand", 0.0);
    out->limit = v.value("limit", out->demand);
    if (out->demand < 0 || out->limit < 0 || !std::isfinite(out->demand) ||
        !std::isfinite(out->limit)) {
        *err = "job demand/limit must be finite and >= 0";
        return false;
    }
    return true;
}

bool parse_jobs(const json& v, std::map<std::string, JobQos>* out, std::string* err) {
    if (!v.is_object()) {
        *err = "jobs must be an object keyed by job id";
        return false;
    }
    for (auto it = v.begin(); it != v.end(); ++it) {
        if (it.key().empty()) {
            *err = "job id must be non-empty";
            return false;
        }
        JobQos q;
        if (!parse_job_entry(it.value(), &q, err)) return false;
        (*out)[it.key()] = q;
    }
    return true;
}

bool validate_snapshot(const PolicySnapshot& s, std::string* err) {
    if (!(s.max_rate > 0) || !std::isfinite(s.max_rate)) {
        *err = "max_rate must be finite and > 0";
        return false;
    }
    if (s.epsilon < 0 || s.epsilon > 1) {
        *err = "epsilon must be in [0, 1]";
        return false;
    }
    if (!(s.loop_interval_s > 0)) {
        *err = "loop_interval_s must be > 0";
        return false;
    }
    if (s.algorithm == Algorithm::uniform && s.configured_max_jobs == 0) {
        *err = "configured_max_jobs must be >= 1 for uniform";
        return false;
    }
    if (s.algorithm == Algorithm::priority) {
        double total = 0.0;
        for (const auto& [id, q] : s.jobs) total += q.limit;
        if (total > s.max_rate * (1 + 1e-9)) {
            *err = "priority limits sum to " + std::to_string(total) + ", above max_rate";
            return false;
        }
    }
    switch (s.channel.granularity) {
        case MatchGranularity::op_type:
            if (!parse_op_type(s.channel.value)) {
                *err = "channel.value must name an op type";
                return false;
            }
            break;
        case MatchGranularity::op_class:
            if (!parse_op_class(s.channel.value)) {
                *err = "channel.value must name an op class";
                return false;
            }
            break;
        case MatchGranularity::job:
        case MatchGranularity::user:
            break;  // empty value resolves per stage
    }
    if (s.channel.burst_window_s < 0 || !std::isfinite(s.channel.burst_window_s)) {
        *err = "channel.burst_window_s must be finite and >= 0";
        return false;
    }
    return true;
}

void apply_step(PolicySnapshot& snap, const PolicyStep& st) {
    if (st.algorithm) snap.algorithm = *st.algorithm;
    if (st.max_rate) snap.max_rate = *st.max_rate;
    if (st.epsilon) snap.epsilon = *st.epsilon;
    if (st.default_demand) snap.default_demand = *st.default_demand;
    if (st.configured_max_jobs) snap.configured_max_jobs = *st.configured_max_jobs;
    for (const auto& [id, q] : st.jobs) snap.jobs[id] = q;
}

}  // namespace

bool Policy::parse_text(const std::string& json_text, Policy* out, std::string* err) {
    json doc = json::parse(json_text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        *err = "policy is not a JSON object";
        return false;
    }

    Policy p;
    p.text_ = json_text;
    PolicySnapshot& s = p.base_;

    std::string alg = doc.value("algorithm", "uniform");
    auto parsed_alg = parse_algorithm(alg);
    if (!parsed_alg) {
        *err = "unknown algorithm '" + alg + "'";
        return false;
    }
    s.algorithm = *parsed_alg;
    s.max_rate = doc.value("max_rate", 0.0);
    s.epsilon = doc.value("epsilon", 0.5);
    s.loop_interval_s = doc.value("loop_interval_s", 1.0);
    s.default_demand = doc.value("default_demand", 0.0);

    std::string unit = doc.value("unit", "ops");
    if (unit == "ops")
        s.unit = RateUnit::ops;
    else if (unit == "bytes")
        s.unit = RateUnit::bytes;
    else {
        *err = "unit must be \"ops\" or \"bytes\"";
        return false;
    }

    if (doc.contains("jobs") && !parse_jobs(doc["jobs"], &s.jobs, err)) return false;

    if (doc.contains("configured_max_jobs")) {
        int64_t n = doc.value("configured_max_jobs", int64_t{0});
        if (n < 0) {
            *err = "configured_max_jobs must be >= 0";
            return false;
        }
        s.configured_max_jobs = static_cast<uint32_t>(n);
    } else {
        s.configured_max_jobs = s.jobs.empty() ? 1 : static_cast<uint32_t>(s.jobs.size());
    }

    if (doc.contains("channel")) {
        const json& c = doc["channel"];
        if (!c.is_object()) {
            *err = "channel must be an object";
            return false;
        }
        std::string g = c.value("granularity", "op_class");
        auto pg = parse_granularity(g);
        if (!pg) {
            *err = "unknown channel granularity '" + g + "'";
            return false;
        }
        s.channel.granularity = *pg;
        s.channel.value = c.value("value", "");
        s.channel.burst_window_s = c.value("burst_window_s", 0.1);
    }

    if (doc.contains("schedule")) {
        if (!doc["schedule"].is_array()) {
            *err = "schedule must be an array";
            return false;
        }
        double prev_at = -1.0;
        for (const json& sv : doc["schedule"]) {
            if (!sv.is_object() || !sv.contains("at_s")) {
                *err = "schedule step needs at_s";
                return false;
            }
            PolicyStep st;
            st.at_s = sv.value("at_s", 0.0);
            if (!(st.at_s >= 0) || st.at_s < prev_at) {
                *err = "schedule steps must have non-decreasing at_s >= 0";
                return false;
            }
            prev_at = st.at_s;
            if (sv.contains("algorithm")) {
                auto a = parse_algorithm(sv.value("algorithm", ""));
                if (!a) {
                    *err = "unknown algorithm in schedule step";
                    return false;
                }
                st.algorithm = *a;
            }
            if (sv.contains("max_rate")) st.max_rate = sv.value("max_rate", 0.0);
            if (sv.contains("epsilon")) st.epsilon = sv.value("epsilon", 0.0);
            if (sv.contains("default_demand"))
                st.default_demand = sv.value("default_demand", 0.0);
            if (sv.contains("configured_max_jobs"))
                st.configured_max_jobs =
                    static_cast<uint32_t>(sv.value("configured_max_jobs", int64_t{1}));
            if (sv.contains("jobs") && !parse_jobs(sv["jobs"], &st.jobs, err)) return false;
            p.steps_.push_back(std::move(st));
        }
    }

    // Validate the base and the state after each step.
    if (!validate_snapshot(s, err)) return false;
    PolicySnapshot rolling = s;
    for (const auto& st : p.steps_) {
        apply_step(rolling, st);
        if (!validate_snapshot(rolling, err)) {
            *err = "schedule step at_s=" + std::to_string(st.at_s) + ": " + *err;
            return false;
        }
    }

    *out = std::move(p);
    return true;
}

bool Policy::load_file(const std::string& path, Policy* out, std::string* err) {
    std::ifstream in(path);
    if (!in) {
        *err = "cannot open " + path;
        return false;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), out, err);
}

PolicySnapshot Policy::resolve(double elapsed_s) const {
    PolicySnapshot snap = base_;
    for (const auto& st : steps_) {
        if (st.at_s > elapsed_s) break;
        apply_step(snap, st);
    }
    return snap;
}

}  // namespace fsqos
