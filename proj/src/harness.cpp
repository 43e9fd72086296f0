#include "fsqos/harness.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "fsqos/clock.hpp"
#include "fsqos/global_controller.hpp"
#include "fsqos/local_controller.hpp"
#include "fsqos/net.hpp"
#include "fsqos/sink.hpp"
#include "fsqos/stage.hpp"
#include "fsqos/stage_agent.hpp"

namespace fsqos {

using nlohmann::json;

namespace fs = std::filesystem;

namespace {

constexpr int64_t kSecond = 1'000'000'000;

bool parse_trace_spec(const json& v, TraceSpec* out, std::string* err) {
    if (!v.is_object()) {
        *err = "trace must be an object";
        return false;
    }
    if (v.contains("dir")) {
        out->synthetic = false;
        out->dir = v.value("dir", "");
        if (out->dir.empty()) {
            *err = "trace.dir is empty";
            return false;
        }
        return true;
    }
    out->synthetic = true;
    if (v.contains("op")) {
        auto op = parse_op_type(v.value("op", ""));
        if (!op) {
            *err = "trace.op: unknown operation '" + v.value("op", "") + "'";
            return false;
        }
        out->op = *op;
    }
    out->mean_rate = v.value("mean_rate", 0.0);
    out->duration_s = v.value("duration_s", 0u);
    out->seed = v.value("seed", uint64_t{0});
    out->profile.burst_prob = v.value("burst_prob", 0.0);
    out->profile.burst_multiplier = v.value("burst_multiplier", 1.0);
    out->profile.quiet_prob = v.value("quiet_prob", 0.0);
    return true;
}

}  // namespace

bool ScenarioSpec::parse_text(const std::string& json_text, ScenarioSpec* out, std::string* err) {
    json doc = json::parse(json_text, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        *err = "scenario is not a JSON object";
        return false;
    }
    ScenarioSpec spec;
    spec.name = doc.value("name", "scenario");
    spec.algorithm = doc.value("algorithm", "adaptive");
    spec.max_rate = doc.value("max_rate", 0.0);
    spec.epsilon = doc.value("epsilon", 0.5);
    spec.loop_interval_s = doc.value("loop_interval_s", 0.5);
    spec.unit = doc.value("unit", "ops");
    spec.configured_max_jobs = doc.value("configured_max_jobs", 0u);
    spec.default_demand = doc.value("default_demand", 0.0);
    spec.nodes = doc.value("nodes", 1u);
    spec.duration_s = doc.value("duration_s", 30u);
    spec.aggregate_mean_rate = doc.value("aggregate_mean_rate", 0.0);
    spec.seed = doc.value("seed", uint64_t{1});
    if (doc.contains("channel")) {
        const auto& c = doc["channel"];
        auto g = parse_granularity(c.value("granularity", "job"));
        if (!g) {
            *err = "channel.granularity: unknown value";
            return false;
        }
        spec.channel.granularity = *g;
        spec.channel.value = c.value("value", "");
        spec.channel.burst_window_s = c.value("burst_window_s", 0.1);
    }
    if (doc.contains("jobs")) {
        if (!doc["jobs"].is_array()) {
            *err = "jobs must be an array";
            return false;
        }
        for (const auto& jv : doc["jobs"]) {
            JobSpec job;
            job.job_id = jv.value("job_id", "");
            job.demand = jv.value("demand", 0.0);
            job.limit = jv.value("limit", -1.0);
            job.load_share = jv.value("load_share", -1.0);
            job.start_offset_s = jv.value("start_offset_s", 0.0);
            job.node = jv.value("node", -1);
            job.stages = jv.value("stages", 1u);
            job.threads = jv.value("threads", 2u);
            job.rate_scale = jv.value("rate_scale", 1.0);
            job.time_compression = jv.value("time_compression", 1.0);
            if (jv.contains("trace")) {
                if (!parse_trace_spec(jv["trace"], &job.trace, err)) return false;
            }
            spec.jobs.push_back(std::move(job));
        }
    }
    if (!spec.validate(err)) return false;
    *out = std::move(spec);
    return true;
}

bool ScenarioSpec::load_file(const std::string& path, ScenarioSpec* out, std::string* err) {
    std::ifstream in(path);
    if (!in) {
        *err = "cannot open scenario file: " + path;
        return false;
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_text(ss.str(), out, err);
}

bool ScenarioSpec::validate(std::string* err) const {
    bool throttled = algorithm != "none";
    if (throttled && !parse_algorithm(algorithm)) {
        *err = "unknown algorithm: " + algorithm;
        return false;
    }
    if (duration_s < 1) {
        *err = "duration_s must be >= 1";
        return false;
    }
    if (throttled && nodes < 1) {
        *err = "nodes must be >= 1";
        return false;
    }
    size_t with_share = 0;
    double share_sum = 0.0;
    std::map<std::string, int> seen;
    for (const auto& job : jobs) {
        if (job.job_id.empty()) {
            *err = "job with empty job_id";
            return false;
        }
        if (++seen[job.job_id] > 1) {
            *err = "duplicate job_id: " + job.job_id;
            return false;
        }
        if (job.start_offset_s < 0) {
            *err = job.job_id + ": start_offset_s must be >= 0";
            return false;
        }
        if (job.stages < 1 || job.threads < 1) {
            *err = job.job_id + ": stages and threads must be >= 1";
            return false;
        }
        if (!(job.rate_scale > 0) || !(job.time_compression > 0)) {
            *err = job.job_id + ": rate_scale and time_compression must be > 0";
            return false;
        }
        if (job.load_share >= 0) {
            ++with_share;
            share_sum += job.load_share;
        }
        if (job.trace.synthetic) {
            double mean = job.trace.mean_rate;
            if (mean <= 0 && job.load_share >= 0 && aggregate_mean_rate > 0)
                mean = job.load_share * aggregate_mean_rate;
            if (mean <= 0) {
                *err = job.job_id + ": no trace mean (set trace.mean_rate or load_share with "
                                    "aggregate_mean_rate)";
                return false;
            }
        }
        if (job.node >= 0 && static_cast<uint32_t>(job.node) >= nodes) {
            *err = job.job_id + ": node index out of range";
            return false;
        }
    }
    if (with_share > 0 && with_share != jobs.size()) {
        *err = "load_share must be set on all jobs or none";
        return false;
    }
    if (with_share > 0 && std::abs(share_sum - 1.0) > 1e-6) {
        *err = "load_shares must sum to 1";
        return false;
    }
    if (throttled && !jobs.empty()) {
        Policy p;
        std::string perr;
        if (!Policy::parse_text(policy_text(), &p, &perr)) {
            *err = "derived policy invalid: " + perr;
            return false;
        }
    }
    return true;
}

std::string ScenarioSpec::policy_text() const {
    json doc;
    doc["algorithm"] = algorithm;
    doc["max_rate"] = max_rate;
    doc["epsilon"] = epsilon;
    doc["loop_interval_s"] = loop_interval_s;
    doc["unit"] = unit;
    doc["default_demand"] = default_demand;
    uint32_t cmj = configured_max_jobs;
    if (cmj == 0) cmj = static_cast<uint32_t>(std::max<size_t>(jobs.size(), 1));
    doc["configured_max_jobs"] = cmj;
    doc["channel"] = {{"granularity", std::string(granularity_name(channel.granularity))},
                      {"value", channel.value},
                      {"burst_window_s", channel.burst_window_s}};
    json jm = json::object();
    for (const auto& job : jobs) {
        double limit = job.limit >= 0 ? job.limit : job.demand;
        jm[job.job_id] = {{"demand", job.demand}, {"limit", limit}};
    }
    doc["jobs"] = jm;
    return doc.dump(2);
}

namespace {

struct Child {
    pid_t pid = -1;
    std::string name;
    std::string job_id;  // replayers only
    std::string csv;     // replayers only
    std::string meta;    // replayers only
    bool service = false;
    bool reaped = false;
    int exit_code = -1;
};

pid_t spawn_child(const std::string& binary, const std::vector<std::string>& args,
                  const std::string& log_path) {
    std::vector<char*> argv;
    argv.push_back(const_cast<char*>(binary.c_str()));
    for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    pid_t pid = ::fork();
    if (pid != 0) return pid;
    int log = ::open(log_path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (log >= 0) {
        ::dup2(log, 1);
        ::dup2(log, 2);
        if (log > 2) ::close(log);
    }
    ::execv(binary.c_str(), argv.data());
    ::_exit(127);
}

// WNOHANG sweep; records exit codes for anything that finished.
void poll_children(std::vector<Child>& children) {
    for (auto& c : children) {
        if (c.reaped || c.pid < 0) continue;
        int st = 0;
        pid_t got = ::waitpid(c.pid, &st, WNOHANG);
        if (got == c.pid) {
            c.reaped = true;
            c.exit_code = WIFEXITED(st) ? WEXITSTATUS(st) : 128 + WTERMSIG(st);
        }
    }
}

void terminate_children(std::vector<Child>& children) {
    for (auto& c : children)
        if (!c.reaped && c.pid > 0) ::kill(c.pid, SIGTERM);
    int64_t deadline = now_ns() + 5 * kSecond;
    while (now_ns() < deadline) {
        poll_children(children);
        bool pending = false;
        for (auto& c : children) pending |= (!c.reaped && c.pid > 0);
        if (!pending) return;
        sleep_ns(50'000'000);
    }
    for (auto& c : children) {
        if (!c.reaped && c.pid > 0) {
            ::kill(c.pid, SIGKILL);
            int st = 0;
            ::waitpid(c.pid, &st, 0);
            c.reaped = true;
            c.exit_code = 128 + SIGKILL;
        }
    }
}

std::string resolve_binary(const HarnessOptions& opts, std::string* err) {
    if (!opts.binary.empty()) return opts.binary;
    if (const char* env = std::getenv("FSQOS_BIN"); env && *env) return env;
    char buf[4096];
    ssize_t n = ::readlink("/proc/self/exe", buf, sizeof(buf) - 1);
    if (n <= 0) {
        *err = "cannot resolve child binary (set FSQOS_BIN)";
        return "";
    }
    return std::string(buf, static_cast<size_t>(n));
}

struct ReplayMeta {
    int64_t started_ns = 0;
    int64_t finished_ns = 0;
    uint64_t total_submitted = 0;
    uint64_t total_completed = 0;
    bool aborted = false;
    bool ok = false;
};

ReplayMeta read_meta(const std::string& path) {
    ReplayMeta m;
    std::ifstream in(path);
    if (!in) return m;
    json doc = json::parse(in, nullptr, false);
    if (doc.is_discarded()) return m;
    m.started_ns = doc.value("started_ns", int64_t{0});
    m.finished_ns = doc.value("finished_ns", int64_t{0});
    m.total_submitted = doc.value("total_submitted", uint64_t{0});
    m.total_completed = doc.value("total_completed", uint64_t{0});
    m.aborted = doc.value("aborted", false);
    m.ok = true;
    return m;
}

struct CsvRow {
    uint32_t second = 0;
    uint64_t submitted = 0;
    uint64_t completed = 0;
};

std::vector<CsvRow> read_replay_csv(const std::string& path) {
    std::vector<CsvRow> rows;
    std::ifstream in(path);
    if (!in) return rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        CsvRow row;
        char op[64];
        unsigned long long sub = 0, com = 0;
        if (std::sscanf(line.c_str(), "%u,%63[^,],%llu,%llu", &row.second, op, &sub, &com) == 4) {
            row.submitted = sub;
            row.completed = com;
            rows.push_back(row);
        }
    }
    return rows;
}

}  // namespace

ScenarioResult run_scenario(const ScenarioSpec& spec, const HarnessOptions& opts) {
    ScenarioResult res;
    auto fail = [&](const std::string& why) {
        res.failed = true;
        res.failure = why;
        return res;
    };

    std::string err;
    if (opts.run_dir.empty()) return fail("run_dir is empty");
    if (!spec.validate(&err)) return fail(err);

    std::error_code ec;
    fs::create_directories(opts.run_dir, ec);
    if (ec) return fail("cannot create " + opts.run_dir + ": " + ec.message());
    res.run_dir = opts.run_dir;
    fs::create_directories(opts.run_dir + "/logs");
    fs::create_directories(opts.run_dir + "/addrs");

    const bool throttled = spec.algorithm != "none";

    auto path_in = [&](const std::string& rel) { return opts.run_dir + "/" + rel; };

    // Scenario echo for provenance of the artifact tree.
    {
        json manifest;
        manifest["name"] = spec.name;
        manifest["algorithm"] = spec.algorithm;
        manifest["max_rate"] = spec.max_rate;
        manifest["nodes"] = spec.nodes;
        manifest["duration_s"] = spec.duration_s;
        manifest["seed"] = spec.seed;
        json jarr = json::array();
        for (const auto& job : spec.jobs) {
            jarr.push_back({{"job_id", job.job_id},
                            {"demand", job.demand},
                            {"limit", job.limit >= 0 ? job.limit : job.demand},
                            {"load_share", job.load_share},
                            {"start_offset_s", job.start_offset_s},
                            {"stages", job.stages},
                            {"threads", job.threads}});
        }
        manifest["jobs"] = jarr;
        std::ofstream(path_in("manifest.json")) << manifest.dump(2) << "\n";
    }

    auto write_summary = [&](const std::vector<Child>& children) {
        json doc;
        doc["name"] = spec.name;
        doc["algorithm"] = spec.algorithm;
        doc["max_rate"] = spec.max_rate;
        doc["failed"] = res.failed;
        doc["failure"] = res.failure;
        double end_s = 0.0;
        json jarr = json::array();
        for (const auto& j : res.jobs) {
            end_s = std::max(end_s, j.completion_offset_s);
            jarr.push_back({{"job_id", j.job_id},
                            {"submitted", j.submitted},
                            {"completed", j.completed},
                            {"replay_duration_s", j.replay_duration_s},
                            {"completion_offset_s", j.completion_offset_s},
                            {"aborted", j.aborted}});
        }
        doc["jobs"] = jarr;
        doc["scenario_end_s"] = end_s;
        doc["aggregate"] = {{"peak_window", res.peak_window},
                            {"windows_over_max_rate", res.windows_over_max_rate},
                            {"windows_over_bound", res.windows_over_bound}};
        json carr = json::array();
        for (const auto& c : children)
            carr.push_back({{"name", c.name}, {"pid", c.pid}, {"exit_code", c.exit_code}});
        doc["children"] = carr;
        std::ofstream(path_in("summary.json")) << doc.dump(2) << "\n";
    };

    if (spec.jobs.empty()) {
        std::ofstream(path_in("throughput.csv")) << "second,job_id,submitted,completed\n";
        write_summary({});
        return res;
    }

    std::string binary = resolve_binary(opts, &err);
    if (binary.empty()) return fail(err);

    // Trace material first: generation failures should abort before any
    // process exists.
    std::vector<std::string> trace_dirs(spec.jobs.size());
    for (size_t i = 0; i < spec.jobs.size(); ++i) {
        const auto& job = spec.jobs[i];
        if (!job.trace.synthetic) {
            trace_dirs[i] = job.trace.dir;
            continue;
        }
        std::string dir = path_in("traces/" + job.job_id);
        fs::create_directories(dir, ec);
        double mean = job.trace.mean_rate > 0 ? job.trace.mean_rate
                                              : job.load_share * spec.aggregate_mean_rate;
        uint32_t duration = job.trace.duration_s > 0 ? job.trace.duration_s : spec.duration_s;
        uint64_t seed = job.trace.seed > 0 ? job.trace.seed : spec.seed * 1000 + i;
        RateCurveTrace trace;
        try {
            trace = generate_synthetic_trace(seed, duration, mean, job.trace.profile,
                                             job.trace.op);
        } catch (const std::exception& e) {
            return fail(job.job_id + ": trace generation: " + e.what());
        }
        if (!save_trace_dir(dir, {trace}, &err)) return fail(err);
        trace_dirs[i] = dir;
    }

    if (throttled) {
        std::ofstream(path_in("policy.json")) << spec.policy_text() << "\n";
    }

    std::vector<Child> children;
    auto abort_run = [&](const std::string& why) {
        terminate_children(children);
        res.failed = true;
        res.failure = why;
        write_summary(children);
        return res;
    };

    // Like wait_address_file, but gives up as soon as the service that should
    // write the file is gone.
    auto wait_addr_alive = [&](const std::string& path, int64_t deadline_ns) {
        while (now_ns() < deadline_ns) {
            if (wait_address_file(path, now_ns() + 20'000'000)) return true;
            poll_children(children);
            for (const auto& c : children)
                if (c.service && c.reaped) return false;
        }
        return false;
    };

    std::string global_addr_file = path_in("addrs/global");
    if (throttled) {
        Child g;
        g.name = "global";
        g.service = true;
        g.pid = spawn_child(binary,
                            {"run-global", "--listen", "tcp:127.0.0.1:0", "--policy",
                             path_in("policy.json"), "--addr-file", global_addr_file,
                             "--cycle-csv", path_in("global_cycles.csv")},
                            path_in("logs/global.log"));
        children.push_back(g);
        if (!wait_addr_alive(global_addr_file, now_ns() + 10 * kSecond))
            return abort_run("global controller did not come up");

        for (uint32_t i = 0; i < spec.nodes; ++i) {
            Child l;
            l.name = "local-" + std::to_string(i);
            l.service = true;
            l.pid = spawn_child(binary,
                                {"run-local", "--listen", "tcp:127.0.0.1:0",
                                 "--global-addr-file", global_addr_file, "--addr-file",
                                 path_in("addrs/local_" + std::to_string(i)), "--node",
                                 "node-" + std::to_string(i)},
                                path_in("logs/" + l.name + ".log"));
            children.push_back(l);
        }
        for (uint32_t i = 0; i < spec.nodes; ++i) {
            if (!wait_addr_alive(path_in("addrs/local_" + std::to_string(i)),
                                 now_ns() + 10 * kSecond))
                return abort_run("local controller " + std::to_string(i) + " did not come up");
        }
    }

    // Staggered job starts, in offset order.
    std::vector<size_t> order(spec.jobs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return spec.jobs[a].start_offset_s < spec.jobs[b].start_offset_s;
    });

    const int64_t t0 = now_ns();
    double max_offset = 0.0;
    for (size_t idx : order) {
        const auto& job = spec.jobs[idx];
        max_offset = std::max(max_offset, job.start_offset_s);
        sleep_until_ns(t0 + static_cast<int64_t>(job.start_offset_s * 1e9));
        for (uint32_t k = 0; k < job.stages; ++k) {
            Child r;
            r.name = "replay-" + job.job_id + "-" + std::to_string(k);
            r.job_id = job.job_id;
            r.csv = path_in("throughput_" + job.job_id + "_" + std::to_string(k) + ".csv");
            r.meta = r.csv + ".meta.json";
            std::vector<std::string> args = {
                "replay",
                "--trace-dir", trace_dirs[idx],
                "--job", job.job_id,
                "--user", "scenario",
                "--threads", std::to_string(job.threads),
                "--rate-scale", std::to_string(job.rate_scale / job.stages),
                "--time-compression", std::to_string(job.time_compression),
                "--out", r.csv,
                "--meta", r.meta,
            };
            if (throttled) {
                uint32_t node = job.node >= 0 ? static_cast<uint32_t>(job.node) + k
                                              : static_cast<uint32_t>(idx) + k;
                args.push_back("--local-addr-file");
                args.push_back(path_in("addrs/local_" + std::to_string(node % spec.nodes)));
                args.push_back("--wait-rules");
                args.push_back("--wait-rules-timeout");
                args.push_back(std::to_string(std::max(10.0, spec.loop_interval_s * 20)));
            }
            r.pid = spawn_child(binary, args, path_in("logs/" + r.name + ".log"));
            children.push_back(r);
        }
    }

    // Supervise until every replayer exits (services run on).
    double timeout_s = opts.timeout_s > 0
                           ? opts.timeout_s
                           : max_offset + 4.0 * spec.duration_s + 120.0;
    int64_t deadline = t0 + static_cast<int64_t>(timeout_s * 1e9);
    for (;;) {
        poll_children(children);
        bool replays_pending = false;
        for (const auto& c : children) {
            if (!c.service && !c.reaped) replays_pending = true;
            if (c.service && c.reaped)
                return abort_run(c.name + " exited early (code " +
                                 std::to_string(c.exit_code) + ")");
        }
        if (!replays_pending) break;
        if (now_ns() > deadline) return abort_run("scenario timed out");
        sleep_ns(100'000'000);
    }

    // Replayers are done; release the control plane before reading artifacts.
    terminate_children(children);

    for (const auto& c : children) {
        if (c.service) continue;
        if (c.exit_code != 0)
            return abort_run(c.name + " failed (exit " + std::to_string(c.exit_code) + ")");
    }

    // Fold the per-stage curves into per-job results and the cluster-wide
    // per-second aggregate, all on the scenario clock.
    std::map<std::string, JobResult> jobs;
    std::map<std::pair<uint32_t, std::string>, std::pair<uint64_t, uint64_t>> aligned;
    uint32_t horizon = 0;
    for (const auto& c : children) {
        if (c.service) continue;
        ReplayMeta meta = read_meta(c.meta);
        if (!meta.ok) return abort_run(c.name + " left no metadata");
        auto& jr = jobs[c.job_id];
        jr.job_id = c.job_id;
        jr.submitted += meta.total_submitted;
        jr.completed += meta.total_completed;
        jr.aborted |= meta.aborted;
        double dur = static_cast<double>(meta.finished_ns - meta.started_ns) / 1e9;
        jr.replay_duration_s = std::max(jr.replay_duration_s, dur);
        double completion = static_cast<double>(meta.finished_ns - t0) / 1e9;
        jr.completion_offset_s = std::max(jr.completion_offset_s, completion);

        int64_t base = meta.started_ns - t0;
        for (const auto& row : read_replay_csv(c.csv)) {
            auto sec = static_cast<uint32_t>((base + int64_t{row.second} * kSecond) / kSecond);
            auto& cell = aligned[{sec, c.job_id}];
            cell.first += row.submitted;
            cell.second += row.completed;
            horizon = std::max(horizon, sec + 1);
        }
    }
    for (const auto& job : spec.jobs) res.jobs.push_back(jobs[job.job_id]);

    res.aggregate_per_second.assign(horizon, 0.0);
    for (const auto& [key, cell] : aligned) res.aggregate_per_second[key.first] += cell.second;
    for (double v : res.aggregate_per_second) {
        res.peak_window = std::max(res.peak_window, v);
        if (spec.max_rate > 0 && v > spec.max_rate) ++res.windows_over_max_rate;
        if (spec.max_rate > 0 && v > spec.max_rate * 1.05) ++res.windows_over_bound;
    }

    {
        std::ofstream out(path_in("throughput.csv"));
        out << "second,job_id,submitted,completed\n";
        for (uint32_t s = 0; s < horizon; ++s) {
            for (const auto& job : spec.jobs) {
                auto it = aligned.find({s, job.job_id});
                uint64_t sub = it == aligned.end() ? 0 : it->second.first;
                uint64_t com = it == aligned.end() ? 0 : it->second.second;
                out << s << ',' << job.job_id << ',' << sub << ',' << com << '\n';
            }
        }
    }

    write_summary(children);
    return res;
}

std::vector<StageBenchRow> bench_stage(const std::vector<uint32_t>& thread_counts,
                                       const std::vector<uint32_t>& stage_counts,
                                       uint64_t requests_per_thread) {
    std::vector<StageBenchRow> rows;
    if (requests_per_thread == 0) return rows;

    Request req;
    req.op = OpType::getattr;
    req.target = std::string("/scratch/bench");
    req.job_id = "bench";
    req.user_id = "bench";

    // Rate high enough that the bucket never empties: pure fast-path cost.
    constexpr double kPassthroughRate = 1e12;

    auto run_threads = [&](const std::vector<Stage*>& per_thread) -> double {
        std::mutex mu;
        std::condition_variable cv;
        bool go = false;
        std::atomic<uint32_t> ready{0};
        std::vector<std::thread> threads;
        for (Stage* stage : per_thread) {
            threads.emplace_back([&, stage] {
                ++ready;
                {
                    std::unique_lock lk(mu);
                    cv.wait(lk, [&] { return go; });
                }
                for (uint64_t i = 0; i < requests_per_thread; ++i) stage->submit(req);
            });
        }
        while (ready.load() < per_thread.size()) sleep_ns(1'000'000);
        int64_t t0;
        {
            std::lock_guard lk(mu);
            go = true;
            t0 = now_ns();
        }
        cv.notify_all();
        for (auto& t : threads) t.join();
        return static_cast<double>(now_ns() - t0) / 1e9;
    };

    for (uint32_t t : thread_counts) {
        if (t == 0) continue;
        NullSink sink;
        Stage stage({"bench", "bench", {"/scratch"}}, sink);
        stage.create_channel(1, MatchGranularity::job, "bench", 0.1);
        stage.set_channel_rate(1, kPassthroughRate);
        std::vector<Stage*> per_thread(t, &stage);
        double secs = run_threads(per_thread);
        StageBenchRow row;
        row.mode = "single-stage";
        row.stages = 1;
        row.threads = t;
        row.total_ops = requests_per_thread * t;
        row.seconds = secs;
        row.ops_per_s = secs > 0 ? static_cast<double>(row.total_ops) / secs : 0.0;
        rows.push_back(row);
    }

    for (uint32_t s : stage_counts) {
        if (s == 0) continue;
        std::vector<std::unique_ptr<NullSink>> sinks;
        std::vector<std::unique_ptr<Stage>> stages;
        std::vector<Stage*> per_thread;
        for (uint32_t i = 0; i < s; ++i) {
            sinks.push_back(std::make_unique<NullSink>());
            stages.push_back(
                std::make_unique<Stage>(StageConfig{"bench", "bench", {"/scratch"}}, *sinks[i]));
            stages[i]->create_channel(1, MatchGranularity::job, "bench", 0.1);
            stages[i]->set_channel_rate(1, kPassthroughRate);
            per_thread.push_back(stages[i].get());
        }
        double secs = run_threads(per_thread);
        StageBenchRow row;
        row.mode = "multi-stage";
        row.stages = s;
        row.threads = 1;
        row.total_ops = requests_per_thread * s;
        row.seconds = secs;
        row.ops_per_s = secs > 0 ? static_cast<double>(row.total_ops) / secs : 0.0;
        rows.push_back(row);
    }
    return rows;
}

ControlBenchResult bench_control(uint32_t locals, uint64_t iterations) {
    ControlBenchResult result;
    result.locals = locals;
    result.iterations = iterations;
    if (locals == 0 || iterations == 0) return result;

    json policy = {{"algorithm", "adaptive"},
                   {"max_rate", 100000.0},
                   {"epsilon", 0.5},
                   {"loop_interval_s", 0.1},
                   {"default_demand", 1000.0},
                   {"channel", {{"granularity", "job"}, {"value", ""}}}};
    Policy p;
    std::string err;
    if (!Policy::parse_text(policy.dump(), &p, &err)) return result;

    GlobalController global(
        {*Address::parse("tcp:127.0.0.1:0"), std::move(p), "", 0.25, false});
    if (!global.start(&err)) return result;

    std::vector<std::unique_ptr<LocalController>> nodes;
    struct Member {
        std::unique_ptr<NullSink> sink;
        std::unique_ptr<Stage> stage;
        std::unique_ptr<StageAgent> agent;
    };
    std::vector<Member> members;
    for (uint32_t i = 0; i < locals; ++i) {
        auto node = std::make_unique<LocalController>(LocalControllerConfig{
            *Address::parse("tcp:127.0.0.1:0"), global.listen_address(),
            "bench-" + std::to_string(i), 0.25});
        if (!node->start(&err)) return result;
        Member m;
        m.sink = std::make_unique<NullSink>();
        m.stage = std::make_unique<Stage>(StageConfig{"b" + std::to_string(i), "bench",
                                                      {"/scratch"}},
                                          *m.sink);
        m.agent = std::make_unique<StageAgent>(
            *m.stage, StageInfo{0, "b" + std::to_string(i), static_cast<int64_t>(i) + 1,
                                "bench", "bench"});
        if (!m.agent->connect(node->listen_address(), now_ns() + 5 * kSecond, &err))
            return result;
        members.push_back(std::move(m));
        nodes.push_back(std::move(node));
    }

    std::vector<double> ms;
    ms.reserve(iterations);
    for (uint64_t i = 0; i < iterations; ++i) {
        auto outcome = global.run_cycle_now();
        ms.push_back(static_cast<double>(outcome.latency_ns) / 1e6);
    }
    std::sort(ms.begin(), ms.end());
    auto pct = [&](double q) {
        size_t idx = static_cast<size_t>(q * static_cast<double>(ms.size() - 1));
        return ms[idx];
    };
    result.p50_ms = pct(0.50);
    result.p95_ms = pct(0.95);
    result.p99_ms = pct(0.99);
    result.max_ms = ms.back();
    return result;
}

OverheadResult bench_overhead(uint64_t seed, uint32_t seconds, double mean_rate,
                              uint32_t threads) {
    OverheadResult result;
    if (seconds == 0 || !(mean_rate > 0) || threads == 0) return result;

    RateCurveTrace trace;
    try {
        trace = generate_synthetic_trace(seed, seconds, mean_rate, BurstProfile{0.05, 3.0, 0.05});
    } catch (const std::invalid_argument&) {
        // Too short for the bursty shape; a flat curve still exercises the same path.
        trace = generate_synthetic_trace(seed, seconds, mean_rate, BurstProfile{0.0, 1.0, 0.0});
    }
    uint64_t total = 0;
    for (uint64_t v : trace.samples) total += v;
    if (total == 0) return result;

    Request req;
    req.op = OpType::getattr;
    req.target = std::string("/scratch/bench");
    req.job_id = "bench";
    req.user_id = "bench";

    // Sink-direct side: same uniform pacing as the replayer, no stage.
    auto paced_direct = [&](Sink& sink) -> double {
        std::vector<std::vector<int64_t>> slices(threads);
        uint64_t rr = 0;
        for (uint32_t s = 0; s < trace.samples.size(); ++s) {
            uint64_t n = trace.samples[s];
            for (uint64_t k = 0; k < n; ++k) {
                double off = (static_cast<double>(k) + 0.5) / static_cast<double>(n);
                slices[rr++ % threads].push_back(
                    static_cast<int64_t>((s + off) * 1e9));
            }
        }
        for (auto& sl : slices) std::sort(sl.begin(), sl.end());
        int64_t t0 = now_ns();
        std::vector<std::thread> workers;
        for (uint32_t t = 0; t < threads; ++t) {
            workers.emplace_back([&, t] {
                for (int64_t due : slices[t]) {
                    sleep_until_ns(t0 + due);
                    sink.apply(req);
                }
            });
        }
        for (auto& w : workers) w.join();
        return static_cast<double>(now_ns() - t0) / 1e9;
    };

    NullSink direct;
    double base_secs = paced_direct(direct);
    result.baseline_ops_s = static_cast<double>(total) / base_secs;

    NullSink sink;
    Stage stage({"bench", "bench", {"/scratch"}}, sink);
    stage.create_channel(1, MatchGranularity::job, "bench", 0.1);
    stage.set_channel_rate(1, 1e12);
    ReplayerConfig cfg;
    cfg.traces = {trace};
    cfg.threads = threads;
    cfg.job_id = "bench";
    cfg.user_id = "bench";
    cfg.path = "/scratch/bench";
    ReplayReport report = Replayer(stage, cfg).run();
    double pass_secs = static_cast<double>(report.finished_ns - report.started_ns) / 1e9;
    result.passthrough_ops_s = static_cast<double>(report.total_completed) / pass_secs;

    result.overhead = 1.0 - result.passthrough_ops_s / result.baseline_ops_s;
    result.valid = true;
    return result;
}

}  // namespace fsqos
