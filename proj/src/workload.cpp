#include "fsqos/workload.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "fsqos/clock.hpp"

namespace fsqos {

namespace {
constexpr int64_t kSecond = 1'000'000'000;
}

std::string trace_file_name(OpType op) {
    return std::string(op_type_name(op)) + "_log.txt";
}

bool load_trace_file(const std::string& path, OpType op, RateCurveTrace* out, std::string* err) {
    std::ifstream in(path);
    if (!in) {
        *err = "cannot open trace file: " + path;
        return false;
    }
    RateCurveTrace trace;
    trace.op_type = op;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        // Tolerate trailing whitespace and blank last lines.
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        errno = 0;
        char* end = nullptr;
        long long v = std::strtoll(line.c_str(), &end, 10);
        if (errno != 0 || end == line.c_str() || *end != '\0' || v < 0) {
            *err = path + ":" + std::to_string(lineno) + ": not a non-negative integer";
            return false;
        }
        trace.samples.push_back(static_cast<uint64_t>(v));
    }
    if (trace.samples.empty()) {
        *err = path + ": trace has no samples";
        return false;
    }
    *out = std::move(trace);
    return true;
}

bool save_trace_file(const std::string& path, const RateCurveTrace& trace, std::string* err) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        *err = "cannot write trace file: " + path;
        return false;
    }
    for (uint64_t v : trace.samples) out << v << '\n';
    out.flush();
    if (!out) {
        *err = "short write: " + path;
        return false;
    }
    return true;
}

bool load_trace_dir(const std::string& dir, std::vector<RateCurveTrace>* out, std::string* err) {
    out->clear();
    for (int i = 0; i < kOpTypeCount; ++i) {
        OpType op = static_cast<OpType>(i);
        std::string path = dir + "/" + trace_file_name(op);
        std::ifstream probe(path);
        if (!probe) continue;
        probe.close();
        RateCurveTrace trace;
        if (!load_trace_file(path, op, &trace, err)) return false;
        out->push_back(std::move(trace));
    }
    if (out->empty()) {
        *err = "no *_log.txt trace files in " + dir;
        return false;
    }
    return true;
}

bool save_trace_dir(const std::string& dir, const std::vector<RateCurveTrace>& traces,
                    std::string* err) {
    for (const auto& t : traces) {
        if (!save_trace_file(dir + "/" + trace_file_name(t.op_type), t, err)) return false;
    }
    return true;
}

RateCurveTrace generate_synthetic_trace(uint64_t seed, uint32_t duration_s, double mean_rate,
                                        const BurstProfile& profile, OpType op) {
    if (duration_s < 1) throw std::invalid_argument("duration_s must be >= 1");
    if (!(mean_rate > 0) || !std::isfinite(mean_rate))
        throw std::invalid_argument("mean_rate must be finite and > 0");
    if (profile.burst_prob < 0 || profile.burst_prob > 1 || profile.quiet_prob < 0 ||
        profile.quiet_prob > 1 || profile.burst_prob + profile.quiet_prob > 1)
        throw std::invalid_argument("burst/quiet probabilities must lie in [0,1] and sum <= 1");
    if (profile.burst_prob > 0 && !(profile.burst_multiplier >= 1))
        throw std::invalid_argument("burst_multiplier must be >= 1");

    enum class Label : uint8_t { normal, burst, quiet };
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_real_distribution<double> burst_margin(1.05, 1.30);
    std::normal_distribution<double> body(1.0, 0.05);

    std::vector<Label> labels(duration_s, Label::normal);
    bool saw_burst = false;
    bool saw_quiet = false;
    for (uint32_t s = 0; s < duration_s; ++s) {
        double u = u01(rng);
        if (u < profile.burst_prob) {
            labels[s] = Label::burst;
            saw_burst = true;
        } else if (u < profile.burst_prob + profile.quiet_prob) {
            labels[s] = Label::quiet;
            saw_quiet = true;
        }
    }
    // Short traces can miss a nonzero-probability label by chance; force one
    // of each into free slots so the promised shape always shows up.
    if (profile.burst_prob > 0 && !saw_burst) {
        labels[rng() % duration_s] = Label::burst;
    }
    if (profile.quiet_prob > 0 && !saw_quiet) {
        std::vector<uint32_t> free_slots;
        for (uint32_t s = 0; s < duration_s; ++s)
            if (labels[s] == Label::normal) free_slots.push_back(s);
        if (!free_slots.empty()) labels[free_slots[rng() % free_slots.size()]] = Label::quiet;
    }

    // Labeled seconds get their values first; the normal body is then scaled
    // so the trace total lands exactly on duration * mean.
    std::vector<uint64_t> samples(duration_s, 0);
    std::vector<double> normal_raw(duration_s, 0.0);
    double labeled_total = 0.0;
    double normal_total = 0.0;
    for (uint32_t s = 0; s < duration_s; ++s) {
        switch (labels[s]) {
            case Label::burst: {
                double floor_v = std::ceil(profile.burst_multiplier * mean_rate);
                double v = std::round(mean_rate * profile.burst_multiplier * burst_margin(rng));
                samples[s] = static_cast<uint64_t>(std::max(v, floor_v));
                labeled_total += static_cast<double>(samples[s]);
                break;
            }
            case Label::quiet: {
                double cap = std::floor(0.25 * mean_rate);
                double v = std::round(cap * u01(rng));
                samples[s] = static_cast<uint64_t>(std::max(0.0, std::min(v, cap)));
                labeled_total += static_cast<double>(samples[s]);
                break;
            }
            case Label::normal: {
                normal_raw[s] = std::max(0.05, body(rng));
                normal_total += normal_raw[s];
                break;
            }
        }
    }

    double budget = duration_s * mean_rate - labeled_total;
    bool has_normal = normal_total > 0.0;
    if (budget < 0 || (budget > 0 && !has_normal))
        throw std::invalid_argument(
            "infeasible profile: labeled seconds cannot average to mean_rate");

    if (has_normal) {
        // Largest-remainder rounding pins the integer total to the budget.
        auto target = static_cast<uint64_t>(std::llround(budget));
        std::vector<std::pair<double, uint32_t>> remainders;
        uint64_t assigned = 0;
        for (uint32_t s = 0; s < duration_s; ++s) {
            if (labels[s] != Label::normal) continue;
            double share = budget * (normal_raw[s] / normal_total);
            auto base = static_cast<uint64_t>(std::floor(share));
            samples[s] = base;
            assigned += base;
            remainders.emplace_back(share - std::floor(share), s);
        }
        std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (size_t i = 0; i < remainders.size() && assigned < target; ++i, ++assigned)
            samples[remainders[i].second] += 1;
    }

    RateCurveTrace trace;
    trace.op_type = op;
    trace.samples = std::move(samples);
    return trace;
}

std::map<OpType, double> mix_report(const std::vector<RateCurveTrace>& traces) {
    std::map<OpType, uint64_t> totals;
    uint64_t all = 0;
    for (const auto& t : traces) {
        uint64_t sum = std::accumulate(t.samples.begin(), t.samples.end(), uint64_t{0});
        totals[t.op_type] += sum;
        all += sum;
    }
    std::map<OpType, double> shares;
    for (const auto& [op, n] : totals)
        shares[op] = all == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(all);
    return shares;
}

void write_replay_csv(const ReplayReport& report, std::FILE* out) {
    std::fputs("second,op_type,submitted,completed\n", out);
    for (const auto& row : report.rows) {
        std::fprintf(out, "%u,%s,%llu,%llu\n", row.second, std::string(op_type_name(row.op_type)).c_str(),
                     static_cast<unsigned long long>(row.submitted),
                     static_cast<unsigned long long>(row.completed));
    }
}

bool write_replay_csv_file(const ReplayReport& report, const std::string& path, std::string* err) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) {
        *err = "cannot write " + path;
        return false;
    }
    write_replay_csv(report, f);
    std::fclose(f);
    return true;
}

Replayer::Replayer(Stage& stage, ReplayerConfig cfg) : stage_(stage), cfg_(std::move(cfg)) {
    if (cfg_.threads < 1) throw std::invalid_argument("threads must be >= 1");
    if (!(cfg_.time_compression > 0)) throw std::invalid_argument("time_compression must be > 0");
    if (!(cfg_.rate_scale > 0)) throw std::invalid_argument("rate_scale must be > 0");
    for (const auto& t : cfg_.traces)
        if (t.samples.empty()) throw std::invalid_argument("trace with no samples");
}

std::vector<Replayer::ScheduledOp> Replayer::build_schedule(
    std::map<std::pair<uint32_t, OpType>, uint64_t>* offered) const {
    // Fold trace seconds onto replay seconds, sum the folded counts, apply
    // the rate scale, then spread each type's count across its second.
    std::map<std::pair<uint32_t, OpType>, uint64_t> counts;
    for (const auto& trace : cfg_.traces) {
        for (size_t u = 0; u < trace.samples.size(); ++u) {
            auto s = static_cast<uint32_t>(static_cast<double>(u) / cfg_.time_compression);
            counts[{s, trace.op_type}] += trace.samples[u];
        }
    }

    std::mt19937_64 jitter(cfg_.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::vector<ScheduledOp> schedule;
    for (const auto& [key, raw] : counts) {
        auto n = static_cast<uint64_t>(std::llround(static_cast<double>(raw) * cfg_.rate_scale));
        if (n == 0) continue;
        (*offered)[key] += n;
        std::vector<double> offsets(n);
        if (cfg_.poisson) {
            for (auto& o : offsets) o = u01(jitter);
            std::sort(offsets.begin(), offsets.end());
        } else {
            for (uint64_t k = 0; k < n; ++k)
                offsets[k] = (static_cast<double>(k) + 0.5) / static_cast<double>(n);
        }
        for (double o : offsets) {
            ScheduledOp op;
            op.due_ns = static_cast<int64_t>((key.first + o) * 1e9);
            op.op = key.second;
            schedule.push_back(op);
        }
    }
    std::stable_sort(schedule.begin(), schedule.end(),
                     [](const ScheduledOp& a, const ScheduledOp& b) { return a.due_ns < b.due_ns; });
    return schedule;
}

ReplayReport Replayer::run() {
    ReplayReport report;

    if (cfg_.wait_rules) {
        int64_t deadline = now_ns() + static_cast<int64_t>(cfg_.wait_rules_timeout_s * 1e9);
        while (stage_.channel_count() == 0) {
            if (now_ns() >= deadline) {
                report.aborted = true;
                report.started_ns = now_ns();
                report.finished_ns = report.started_ns;
                return report;
            }
            sleep_ns(5'000'000);
        }
    }

    std::map<std::pair<uint32_t, OpType>, uint64_t> offered;
    std::vector<ScheduledOp> schedule = build_schedule(&offered);

    // Round-robin partition in due order: thread i takes ops i, i+T, ...
    // so thread count re-shapes nothing but parallelism.
    std::vector<std::vector<ScheduledOp>> slices(cfg_.threads);
    for (size_t i = 0; i < schedule.size(); ++i)
        slices[i % cfg_.threads].push_back(schedule[i]);

    const int64_t start = now_ns();
    std::atomic<bool> abort{false};
    std::atomic<int64_t> abort_ns{INT64_MAX};
    std::mutex merge_mu;
    std::map<std::pair<uint32_t, OpType>, uint64_t> completed;

    auto worker = [&](const std::vector<ScheduledOp>& ops) {
        std::map<std::pair<uint32_t, OpType>, uint64_t> local;
        int64_t last_open_fd = -1;
        for (const auto& item : ops) {
            if (abort.load(std::memory_order_relaxed)) break;
            sleep_until_ns(start + item.due_ns);

            Request req;
            req.op = item.op;
            req.job_id = cfg_.job_id;
            req.user_id = cfg_.user_id;
            if (item.op == OpType::close && last_open_fd >= 0) {
                req.target = last_open_fd;
            } else {
                req.target = cfg_.path;
            }
            if (op_class_of(item.op) == OpClass::data) req.size = cfg_.io_size;

            CompletionRecord rec = stage_.submit(req);
            if (rec.aborted) {
                int64_t t = now_ns();
                int64_t prev = abort_ns.load();
                while (t < prev && !abort_ns.compare_exchange_weak(prev, t)) {
                }
                abort.store(true, std::memory_order_relaxed);
                break;
            }
            if (item.op == OpType::open && rec.sink.fd >= 0) last_open_fd = rec.sink.fd;
            if (item.op == OpType::close) last_open_fd = -1;
            auto sec = static_cast<uint32_t>(std::max<int64_t>(rec.granted_ns - start, 0) / kSecond);
            ++local[{sec, item.op}];
        }
        std::lock_guard lk(merge_mu);
        for (const auto& [key, n] : local) completed[key] += n;
    };

    std::vector<std::thread> threads;
    threads.reserve(cfg_.threads);
    for (uint32_t t = 0; t < cfg_.threads; ++t) threads.emplace_back(worker, std::cref(slices[t]));
    for (auto& th : threads) th.join();
    const int64_t finish = now_ns();

    report.aborted = abort.load();
    report.started_ns = start;
    report.finished_ns = finish;

    // The offered column counts schedule slots whose due time arrived; on a
    // clean run that is the whole schedule.
    int64_t horizon = report.aborted ? abort_ns.load() - start : INT64_MAX;
    std::map<std::pair<uint32_t, OpType>, uint64_t> submitted;
    if (report.aborted) {
        for (const auto& item : schedule)
            if (item.due_ns <= horizon) ++submitted[{static_cast<uint32_t>(item.due_ns / kSecond),
                                                     item.op}];
    } else {
        submitted = offered;
    }

    std::map<std::pair<uint32_t, OpType>, ReplayRow> rows;
    for (const auto& [key, n] : submitted) {
        auto& row = rows[key];
        row.second = key.first;
        row.op_type = key.second;
        row.submitted = n;
        report.total_submitted += n;
    }
    for (const auto& [key, n] : completed) {
        auto& row = rows[key];
        row.second = key.first;
        row.op_type = key.second;
        row.completed = n;
        report.total_completed += n;
    }
    report.rows.reserve(rows.size());
    for (auto& [key, row] : rows) report.rows.push_back(row);
    return report;
}

}  // namespace fsqos
