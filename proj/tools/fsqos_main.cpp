#include <unistd.h>

#include <atomic>
#include <csignal>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fsqos/clock.hpp"
#include "fsqos/global_controller.hpp"
#include "fsqos/harness.hpp"
#include "fsqos/local_controller.hpp"
#include "fsqos/net.hpp"
#include "fsqos/policy.hpp"
#include "fsqos/request.hpp"
#include "fsqos/sink.hpp"
#include "fsqos/stage.hpp"
#include "fsqos/stage_agent.hpp"
#include "fsqos/workload.hpp"

using namespace fsqos;

namespace {

constexpr int64_t kSecond = 1'000'000'000;

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop.store(true); }

void install_signal_handlers() {
    std::signal(SIGTERM, handle_signal);
    std::signal(SIGINT, handle_signal);
}

std::optional<Address> resolve_address(const std::string& direct, const std::string& file,
                                       double wait_s) {
    if (!direct.empty()) return Address::parse(direct);
    if (!file.empty())
        return wait_address_file(file, now_ns() + static_cast<int64_t>(wait_s * 1e9));
    return std::nullopt;
}

struct GlobalOpts {
    std::string listen = "tcp:127.0.0.1:0";
    std::string policy_file;
    std::string addr_file;
    std::string cycle_csv;
    double stats_timeout_factor = 0.25;
};

int run_global_cmd(const GlobalOpts& o) {
    auto addr = Address::parse(o.listen);
    if (!addr) {
        std::fprintf(stderr, "bad --listen address: %s\n", o.listen.c_str());
        return 1;
    }
    Policy policy;
    std::string err;
    if (!Policy::load_file(o.policy_file, &policy, &err)) {
        std::fprintf(stderr, "policy: %s\n", err.c_str());
        return 1;
    }
    GlobalController global({*addr, std::move(policy), o.cycle_csv, o.stats_timeout_factor, true});
    if (!global.start(&err)) {
        std::fprintf(stderr, "start: %s\n", err.c_str());
        return 1;
    }
    if (!o.addr_file.empty() && !write_address_file(o.addr_file, global.listen_address())) {
        std::fprintf(stderr, "cannot write %s\n", o.addr_file.c_str());
        return 1;
    }
    std::fprintf(stderr, "global controller on %s\n", global.listen_address().str().c_str());
    install_signal_handlers();
    while (!g_stop.load()) sleep_ns(50'000'000);
    global.stop();
    return 0;
}

struct LocalOpts {
    std::string listen = "tcp:127.0.0.1:0";
    std::string global_addr;
    std::string global_addr_file;
    std::string addr_file;
    std::string node = "node";
    double stats_timeout_s = 0.25;
};

int run_local_cmd(const LocalOpts& o) {
    auto addr = Address::parse(o.listen);
    if (!addr) {
        std::fprintf(stderr, "bad --listen address: %s\n", o.listen.c_str());
        return 1;
    }
    std::optional<Address> global;
    if (!o.global_addr.empty() || !o.global_addr_file.empty()) {
        global = resolve_address(o.global_addr, o.global_addr_file, 15.0);
        if (!global) {
            std::fprintf(stderr, "cannot resolve the global controller address\n");
            return 1;
        }
    }
    LocalController local({*addr, global, o.node, o.stats_timeout_s});
    std::string err;
    if (!local.start(&err)) {
        std::fprintf(stderr, "start: %s\n", err.c_str());
        return 1;
    }
    if (!o.addr_file.empty() && !write_address_file(o.addr_file, local.listen_address())) {
        std::fprintf(stderr, "cannot write %s\n", o.addr_file.c_str());
        return 1;
    }
    std::fprintf(stderr, "local controller '%s' on %s\n", o.node.c_str(),
                 local.listen_address().str().c_str());
    install_signal_handlers();
    while (!g_stop.load()) sleep_ns(50'000'000);
    local.stop();
    return 0;
}

struct ReplayOpts {
    std::string trace_dir;
    std::string job = "job";
    std::string user = "user";
    uint32_t threads = 1;
    double rate_scale = 1.0;
    double time_compression = 1.0;
    bool poisson = false;
    uint64_t seed = 0;
    std::string mountpoint = "/scratch";
    std::string path;
    uint64_t io_size = 4096;
    std::string local_addr;
    std::string local_addr_file;
    bool wait_rules = false;
    double wait_rules_timeout = 30.0;
    std::string out;
    std::string meta;
    std::string sink = "null";
    std::string root;
};

int replay_cmd(const ReplayOpts& o) {
    std::vector<RateCurveTrace> traces;
    std::string err;
    if (!load_trace_dir(o.trace_dir, &traces, &err)) {
        std::fprintf(stderr, "traces: %s\n", err.c_str());
        return 4;
    }

    std::unique_ptr<Sink> sink;
    if (o.sink == "null") {
        sink = std::make_unique<NullSink>();
    } else if (o.sink == "dir") {
        if (o.root.empty()) {
            std::fprintf(stderr, "--sink dir needs --root\n");
            return 4;
        }
        sink = std::make_unique<DirectorySink>(o.root);
    } else {
        std::fprintf(stderr, "unknown sink '%s'\n", o.sink.c_str());
        return 4;
    }

    Stage stage({o.job, o.user, {o.mountpoint}}, *sink);
    std::unique_ptr<StageAgent> agent;
    if (!o.local_addr.empty() || !o.local_addr_file.empty()) {
        auto local = resolve_address(o.local_addr, o.local_addr_file, 15.0);
        if (!local) {
            std::fprintf(stderr, "cannot resolve the local controller address\n");
            return 3;
        }
        char host[256] = "?";
        ::gethostname(host, sizeof(host) - 1);
        agent = std::make_unique<StageAgent>(
            stage, StageInfo{0, o.job, static_cast<int64_t>(::getpid()), host, o.user});
        if (!agent->connect(*local, now_ns() + 15 * kSecond, &err)) {
            std::fprintf(stderr, "register: %s\n", err.c_str());
            return 3;
        }
    }

    ReplayerConfig cfg;
    cfg.traces = std::move(traces);
    cfg.threads = o.threads;
    cfg.time_compression = o.time_compression;
    cfg.rate_scale = o.rate_scale;
    cfg.job_id = o.job;
    cfg.user_id = o.user;
    cfg.path = o.path.empty() ? o.mountpoint + "/replay" : o.path;
    cfg.io_size = o.io_size;
    cfg.poisson = o.poisson;
    cfg.seed = o.seed;
    cfg.wait_rules = o.wait_rules;
    cfg.wait_rules_timeout_s = o.wait_rules_timeout;

    ReplayReport report;
    try {
        report = Replayer(stage, cfg).run();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "replay: %s\n", e.what());
        return 4;
    }

    if (o.out.empty()) {
        write_replay_csv(report, stdout);
    } else if (!write_replay_csv_file(report, o.out, &err)) {
        std::fprintf(stderr, "%s\n", err.c_str());
        return 4;
    }
    if (!o.meta.empty()) {
        nlohmann::json doc = {{"job_id", o.job},
                              {"started_ns", report.started_ns},
                              {"finished_ns", report.finished_ns},
                              {"total_submitted", report.total_submitted},
                              {"total_completed", report.total_completed},
                              {"aborted", report.aborted}};
        std::ofstream(o.meta) << doc.dump(2) << "\n";
    }
    if (agent) agent->disconnect();
    return report.aborted ? 2 : 0;
}

struct SetPolicyOpts {
    std::string addr;
    std::string addr_file;
    std::string policy_file;
};

int set_policy_cmd(const SetPolicyOpts& o) {
    std::ifstream in(o.policy_file);
    if (!in) {
        std::fprintf(stderr, "cannot open %s\n", o.policy_file.c_str());
        return 1;
    }
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Policy check;
    std::string err;
    if (!Policy::parse_text(text, &check, &err)) {
        std::fprintf(stderr, "policy: %s\n", err.c_str());
        return 1;
    }
    auto addr = resolve_address(o.addr, o.addr_file, 5.0);
    if (!addr) {
        std::fprintf(stderr, "cannot resolve the controller address\n");
        return 1;
    }
    int fd = connect_to(*addr, now_ns() + 5 * kSecond, &err);
    if (fd < 0) {
        std::fprintf(stderr, "connect: %s\n", err.c_str());
        return 1;
    }
    PeerConnection conn(
        fd, [](const MessageBody&) -> MessageBody {
            throw ProtocolViolation("unexpected request from the controller");
        },
        "set-policy");
    SetPolicy msg;
    msg.blob.assign(text.begin(), text.end());
    auto resp = conn.request(msg, 5 * kSecond);
    if (!resp || !std::holds_alternative<PolicyAck>(*resp)) {
        std::fprintf(stderr, "no acknowledgement from the controller\n");
        return 1;
    }
    const auto& ack = std::get<PolicyAck>(*resp);
    if (ack.status != AckStatus::ok) {
        std::fprintf(stderr, "rejected: %s\n", ack.message.c_str());
        return 1;
    }
    std::printf("policy accepted\n");
    return 0;
}

struct GenTraceOpts {
    std::string out;
    uint32_t seconds = 60;
    double mean = 1000.0;
    uint64_t seed = 1;
    // Flat by default so short traces stay feasible; shape is opt-in.
    double burst_prob = 0.0;
    double burst_mult = 1.0;
    double quiet_prob = 0.0;
    std::string op = "getattr";
    std::string mix;  // "getattr:0.47,close:0.21,..."
};

int gen_trace_cmd(const GenTraceOpts& o) {
    std::filesystem::create_directories(o.out);
    BurstProfile profile{o.burst_prob, o.burst_mult, o.quiet_prob};

    std::vector<std::pair<OpType, double>> parts;
    if (o.mix.empty()) {
        auto op = parse_op_type(o.op);
        if (!op) {
            std::fprintf(stderr, "unknown op '%s'\n", o.op.c_str());
            return 1;
        }
        parts.emplace_back(*op, 1.0);
    } else {
        double sum = 0.0;
        std::stringstream ss(o.mix);
        std::string item;
        while (std::getline(ss, item, ',')) {
            auto colon = item.find(':');
            if (colon == std::string::npos) {
                std::fprintf(stderr, "bad --mix entry '%s' (want op:share)\n", item.c_str());
                return 1;
            }
            auto op = parse_op_type(item.substr(0, colon));
            if (!op) {
                std::fprintf(stderr, "unknown op in --mix: '%s'\n", item.c_str());
                return 1;
            }
            double share = std::strtod(item.c_str() + colon + 1, nullptr);
            if (!(share > 0)) {
                std::fprintf(stderr, "bad share in --mix: '%s'\n", item.c_str());
                return 1;
            }
            parts.emplace_back(*op, share);
            sum += share;
        }
        if (std::abs(sum - 1.0) > 1e-6) {
            std::fprintf(stderr, "--mix shares sum to %g, want 1\n", sum);
            return 1;
        }
    }

    std::vector<RateCurveTrace> traces;
    std::string err;
    for (size_t i = 0; i < parts.size(); ++i) {
        RateCurveTrace t;
        try {
            t = generate_synthetic_trace(o.seed + i, o.seconds, o.mean * parts[i].second,
                                         profile, parts[i].first);
        } catch (const std::exception& e) {
            std::fprintf(stderr, "generate (%s): %s\n",
                         std::string(op_type_name(parts[i].first)).c_str(), e.what());
            return 1;
        }
        traces.push_back(std::move(t));
    }
    if (!save_trace_dir(o.out, traces, &err)) {
        std::fprintf(stderr, "%s\n", err.c_str());
        return 1;
    }
    auto shares = mix_report(traces);
    std::printf("op_type,share,file\n");
    for (const auto& [op, share] : shares)
        std::printf("%s,%.4f,%s\n", std::string(op_type_name(op)).c_str(), share,
                    trace_file_name(op).c_str());
    return 0;
}

struct BenchStageOpts {
    std::vector<uint32_t> threads{1};
    std::vector<uint32_t> stages{1};
    uint64_t requests = 500000;
};

int bench_stage_cmd(const BenchStageOpts& o) {
    auto rows = bench_stage(o.threads, o.stages, o.requests);
    std::printf("mode,stages,threads,total_ops,seconds,ops_per_s\n");
    for (const auto& r : rows)
        std::printf("%s,%u,%u,%llu,%.4f,%.0f\n", r.mode.c_str(), r.stages, r.threads,
                    static_cast<unsigned long long>(r.total_ops), r.seconds, r.ops_per_s);
    return 0;
}

struct BenchControlOpts {
    uint32_t locals = 8;
    uint64_t iterations = 1000;
};

int bench_control_cmd(const BenchControlOpts& o) {
    auto r = bench_control(o.locals, o.iterations);
    std::printf("locals,iterations,p50_ms,p95_ms,p99_ms,max_ms\n");
    if (r.iterations == 0) return 0;
    std::printf("%u,%llu,%.3f,%.3f,%.3f,%.3f\n", r.locals,
                static_cast<unsigned long long>(r.iterations), r.p50_ms, r.p95_ms, r.p99_ms,
                r.max_ms);
    return 0;
}

struct BenchOverheadOpts {
    uint32_t seconds = 5;
    double mean = 100000.0;
    uint64_t seed = 1;
    uint32_t threads = 1;
};

int bench_overhead_cmd(const BenchOverheadOpts& o) {
    auto r = bench_overhead(o.seed, o.seconds, o.mean, o.threads);
    std::printf("baseline_ops_s,passthrough_ops_s,overhead\n");
    if (!r.valid) {
        std::printf("N/A,N/A,N/A\n");
        return 0;
    }
    std::printf("%.0f,%.0f,%.4f\n", r.baseline_ops_s, r.passthrough_ops_s, r.overhead);
    return 0;
}

struct RunScenarioOpts {
    std::string spec_file;
    std::string out;
    std::string binary;
    double timeout_s = 0.0;
};

int run_scenario_cmd(const RunScenarioOpts& o) {
    ScenarioSpec spec;
    std::string err;
    if (!ScenarioSpec::load_file(o.spec_file, &spec, &err)) {
        std::fprintf(stderr, "scenario: %s\n", err.c_str());
        return 1;
    }
    HarnessOptions opts;
    opts.binary = o.binary;
    opts.timeout_s = o.timeout_s;
    opts.run_dir = o.out.empty()
                       ? "runs/" + spec.name + "-" + std::to_string(::getpid())
                       : o.out;
    ScenarioResult result = run_scenario(spec, opts);
    for (const auto& j : result.jobs)
        std::printf("%s: submitted %llu, completed %llu, done at %.1fs%s\n", j.job_id.c_str(),
                    static_cast<unsigned long long>(j.submitted),
                    static_cast<unsigned long long>(j.completed), j.completion_offset_s,
                    j.aborted ? " (aborted)" : "");
    std::printf("peak 1s window: %.0f ops/s; windows over max_rate: %u\n", result.peak_window,
                result.windows_over_max_rate);
    std::printf("artifacts: %s\n", result.run_dir.c_str());
    if (result.failed) {
        std::fprintf(stderr, "scenario failed: %s\n", result.failure.c_str());
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"storage QoS middleware: scenario runner, benchmarks, and components"};
    app.require_subcommand(1);
    int rc = 0;

    auto* sc_scenario = app.add_subcommand("run-scenario", "run a scenario file end to end");
    RunScenarioOpts scenario_opts;
    sc_scenario->add_option("spec", scenario_opts.spec_file, "scenario JSON file")
        ->required()
        ->check(CLI::ExistingFile);
    sc_scenario->add_option("--out", scenario_opts.out, "run directory");
    sc_scenario->add_option("--binary", scenario_opts.binary, "child executable override");
    sc_scenario->add_option("--timeout", scenario_opts.timeout_s, "supervision timeout (s)");
    sc_scenario->callback([&] { rc = run_scenario_cmd(scenario_opts); });

    auto* sc_gen = app.add_subcommand("gen-trace", "generate synthetic rate-curve traces");
    GenTraceOpts gen_opts;
    sc_gen->add_option("--out", gen_opts.out, "output directory")->required();
    sc_gen->add_option("--seconds", gen_opts.seconds, "trace length");
    sc_gen->add_option("--mean", gen_opts.mean, "aggregate mean ops/s");
    sc_gen->add_option("--seed", gen_opts.seed, "generator seed");
    sc_gen->add_option("--burst-prob", gen_opts.burst_prob, "chance a second bursts");
    sc_gen->add_option("--burst-mult", gen_opts.burst_mult, "burst multiple of the mean");
    sc_gen->add_option("--quiet-prob", gen_opts.quiet_prob, "chance a second is quiet");
    sc_gen->add_option("--op", gen_opts.op, "op type for a single trace");
    sc_gen->add_option("--mix", gen_opts.mix, "comma list op:share, shares sum to 1");
    sc_gen->callback([&] { rc = gen_trace_cmd(gen_opts); });

    auto* sc_bs = app.add_subcommand("bench-stage", "closed-loop stage throughput");
    BenchStageOpts bs_opts;
    sc_bs->add_option("--threads", bs_opts.threads, "thread counts (single stage)")
        ->delimiter(',');
    sc_bs->add_option("--stages", bs_opts.stages, "stage counts (one thread each)")
        ->delimiter(',');
    sc_bs->add_option("--requests", bs_opts.requests, "requests per thread");
    sc_bs->callback([&] { rc = bench_stage_cmd(bs_opts); });

    auto* sc_bc = app.add_subcommand("bench-control", "control cycle latency over loopback");
    BenchControlOpts bc_opts;
    sc_bc->add_option("--locals", bc_opts.locals, "local controller count");
    sc_bc->add_option("--iterations", bc_opts.iterations, "cycles to run");
    sc_bc->callback([&] { rc = bench_control_cmd(bc_opts); });

    auto* sc_bo = app.add_subcommand("bench-overhead", "paced sink-direct vs stage passthrough");
    BenchOverheadOpts bo_opts;
    sc_bo->add_option("--seconds", bo_opts.seconds, "trace length");
    sc_bo->add_option("--mean", bo_opts.mean, "paced mean ops/s");
    sc_bo->add_option("--seed", bo_opts.seed, "trace seed");
    sc_bo->add_option("--threads", bo_opts.threads, "submitter threads");
    sc_bo->callback([&] { rc = bench_overhead_cmd(bo_opts); });

    auto* sc_global = app.add_subcommand("run-global", "run the global controller");
    GlobalOpts g_opts;
    sc_global->add_option("--listen", g_opts.listen, "tcp:<ip>:<port> (port 0: ephemeral)");
    sc_global->add_option("--policy", g_opts.policy_file, "policy JSON file")->required();
    sc_global->add_option("--addr-file", g_opts.addr_file, "write the bound address here");
    sc_global->add_option("--cycle-csv", g_opts.cycle_csv, "per-cycle allocation log");
    sc_global->add_option("--stats-timeout-factor", g_opts.stats_timeout_factor,
                          "collect budget as a fraction of the loop interval");
    sc_global->callback([&] { rc = run_global_cmd(g_opts); });

    auto* sc_local = app.add_subcommand("run-local", "run a per-node local controller");
    LocalOpts l_opts;
    sc_local->add_option("--listen", l_opts.listen, "tcp:<ip>:<port> (port 0: ephemeral)");
    sc_local->add_option("--global-addr", l_opts.global_addr, "upstream address");
    sc_local->add_option("--global-addr-file", l_opts.global_addr_file,
                         "read the upstream address from this file");
    sc_local->add_option("--addr-file", l_opts.addr_file, "write the bound address here");
    sc_local->add_option("--node", l_opts.node, "node name");
    sc_local->add_option("--stats-timeout", l_opts.stats_timeout_s,
                         "per-stage collection budget (s)");
    sc_local->callback([&] { rc = run_local_cmd(l_opts); });

    auto* sc_replay = app.add_subcommand("replay", "replay traces through a stage");
    ReplayOpts r_opts;
    sc_replay->add_option("--trace-dir", r_opts.trace_dir, "directory of *_log.txt files")
        ->required();
    sc_replay->add_option("--job", r_opts.job, "job id");
    sc_replay->add_option("--user", r_opts.user, "user id");
    sc_replay->add_option("--threads", r_opts.threads, "submitter threads");
    sc_replay->add_option("--rate-scale", r_opts.rate_scale, "scale per-second counts");
    sc_replay->add_option("--time-compression", r_opts.time_compression,
                          "trace seconds folded into one replay second");
    sc_replay->add_flag("--poisson", r_opts.poisson, "poisson arrivals within each second");
    sc_replay->add_option("--seed", r_opts.seed, "arrival jitter seed");
    sc_replay->add_option("--mountpoint", r_opts.mountpoint, "managed path prefix");
    sc_replay->add_option("--path", r_opts.path, "request target path");
    sc_replay->add_option("--io-size", r_opts.io_size, "bytes per read/write descriptor");
    sc_replay->add_option("--local-addr", r_opts.local_addr, "local controller address");
    sc_replay->add_option("--local-addr-file", r_opts.local_addr_file,
                          "read the local controller address from this file");
    sc_replay->add_flag("--wait-rules", r_opts.wait_rules,
                        "start only after a channel is provisioned");
    sc_replay->add_option("--wait-rules-timeout", r_opts.wait_rules_timeout,
                          "give up waiting after this many seconds");
    sc_replay->add_option("--out", r_opts.out, "per-second CSV (default: stdout)");
    sc_replay->add_option("--meta", r_opts.meta, "write run totals as JSON");
    sc_replay->add_option("--sink", r_opts.sink, "null or dir");
    sc_replay->add_option("--root", r_opts.root, "backing directory for --sink dir");
    sc_replay->callback([&] { rc = replay_cmd(r_opts); });

    auto* sc_policy = app.add_subcommand("set-policy", "push a policy to the global controller");
    SetPolicyOpts p_opts;
    sc_policy->add_option("--addr", p_opts.addr, "controller address");
    sc_policy->add_option("--addr-file", p_opts.addr_file, "read the address from this file");
    sc_policy->add_option("--policy", p_opts.policy_file, "policy JSON file")->required();
    sc_policy->callback([&] { rc = set_policy_cmd(p_opts); });

    CLI11_PARSE(app, argc, argv);
    return rc;
}
