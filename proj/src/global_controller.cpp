#include "fsqos/global_controller.hpp"

#include <algorithm>
#include <chrono>
#include <map>
#include <set>

#include "fsqos/clock.hpp"
#include "fsqos/control_algorithms.hpp"

namespace fsqos {

namespace {

constexpr int64_t kSecond = 1'000'000'000;

double wall_seconds() {
    return std::chrono::duration<double>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

}  // namespace

GlobalController::GlobalController(GlobalControllerConfig cfg)
    : cfg_(std::move(cfg)), policy_(cfg_.policy) {}

GlobalController::~GlobalController() { stop(); }

bool GlobalController::start(std::string* err) {
    if (!cfg_.cycle_log_path.empty()) {
        csv_ = std::fopen(cfg_.cycle_log_path.c_str(), "w");
        if (!csv_) {
            if (err) *err = "cannot open cycle log " + cfg_.cycle_log_path;
            return false;
        }
        std::fputs("timestamp,job_id,usage,assigned_rate,base_rate,cycle_latency_ns\n", csv_);
        std::fflush(csv_);
    }

    listener_ = Listener::open(cfg_.listen, [this](int fd) { on_connection(fd); }, err);
    if (!listener_) {
        if (csv_) std::fclose(csv_);
        csv_ = nullptr;
        return false;
    }
    policy_epoch_ns_ = now_ns();

    if (cfg_.run_loop) loop_thread_ = std::thread([this] { loop(); });
    return true;
}

void GlobalController::stop() {
    {
        std::lock_guard lk(loop_mu_);
        if (stopping_) return;
        stopping_ = true;
    }
    loop_cv_.notify_all();
    if (loop_thread_.joinable()) loop_thread_.join();
    if (listener_) listener_->stop();

    std::vector<std::shared_ptr<Node>> doomed;
    {
        std::lock_guard lk(mu_);
        doomed.swap(nodes_);
    }
    for (auto& n : doomed)
        if (n->conn) n->conn->close();
    doomed.clear();

    if (csv_) {
        std::fclose(csv_);
        csv_ = nullptr;
    }
}

const Address& GlobalController::listen_address() const { return listener_->local_address(); }

CycleOutcome GlobalController::last_outcome() const {
    std::lock_guard lk(mu_);
    return last_;
}

size_t GlobalController::node_count() const {
    std::lock_guard lk(mu_);
    size_t n = 0;
    for (const auto& node : nodes_)
        if (!node->dead.load(std::memory_order_acquire)) ++n;
    return n;
}

size_t GlobalController::member_count() const {
    std::lock_guard lk(mu_);
    size_t n = 0;
    for (const auto& node : nodes_)
        if (!node->dead.load(std::memory_order_acquire)) n += node->members.size();
    return n;
}

bool GlobalController::set_policy_text(const std::string& json_text, std::string* err) {
    Policy parsed;
    std::string perr;
    if (!Policy::parse_text(json_text, &parsed, &perr)) {
        if (err) *err = perr;
        return false;
    }
    std::lock_guard lk(mu_);
    policy_ = std::move(parsed);
    policy_epoch_ns_ = now_ns();  // schedule restarts at the swap
    return true;
}

void GlobalController::on_connection(int fd) {
    auto node = std::make_shared<Node>();
    Node* raw = node.get();
    {
        std::lock_guard lk(mu_);
        node->node_id = next_node_id_++;
    }
    node->conn = std::make_unique<PeerConnection>(
        fd, [this, raw](const MessageBody& m) { return handle_node_msg(raw, m); },
        "node-" + std::to_string(node->node_id));
    node->conn->set_on_close([raw] { raw->dead.store(true, std::memory_order_release); });
    std::lock_guard lk(mu_);
    nodes_.push_back(std::move(node));
}

MessageBody GlobalController::handle_node_msg(Node* node, const MessageBody& msg) {
    if (const auto* reg = std::get_if<RegisterStage>(&msg)) {
        // Stage ids are assigned by the local controller; the pair
        // (connection, stage_id) addresses a member from here on.
        if (reg->info.stage_id == 0 || reg->info.job_id.empty()) return RegisterAck{0};
        std::lock_guard lk(mu_);
        for (const auto& m : node->members)
            if (m.stage_id == reg->info.stage_id) return RegisterAck{0};
        Member m;
        m.stage_id = reg->info.stage_id;
        m.job_id = reg->info.job_id;
        m.user_id = reg->info.user_id;
        node->members.push_back(std::move(m));
        return RegisterAck{reg->info.stage_id};
    }
    if (const auto* pol = std::get_if<SetPolicy>(&msg)) {
        std::string text(pol->blob.begin(), pol->blob.end());
        std::string err;
        if (set_policy_text(text, &err)) return PolicyAck{AckStatus::ok, ""};
        return PolicyAck{AckStatus::rejected, err};
    }
    throw ProtocolViolation("unexpected message type from node");
}

CycleOutcome GlobalController::run_cycle_now() {
    CycleOutcome outcome;
    outcome.started_ns = now_ns();

    // Snapshot policy and membership; network I/O happens without the lock.
    PolicySnapshot snap;
    std::vector<std::shared_ptr<Node>> nodes;
    // Members that existed when the cycle began, per node. Only these are
    // candidates for leave pruning: a stage that registers mid-cycle has no
    // presence row yet and must not be swept.
    std::map<uint64_t, std::set<uint64_t>> member_snapshot;
    {
        std::lock_guard lk(mu_);
        double elapsed_s =
            static_cast<double>(outcome.started_ns - policy_epoch_ns_) / kSecond;
        snap = policy_.resolve(elapsed_s);
        std::erase_if(nodes_, [](const std::shared_ptr<Node>& n) {
            return n->dead.load(std::memory_order_acquire);
        });
        nodes = nodes_;
        for (const auto& n : nodes)
            for (const auto& m : n->members) member_snapshot[n->node_id].insert(m.stage_id);
    }

    int64_t timeout_ns = static_cast<int64_t>(
        std::max(snap.loop_interval_s * cfg_.stats_timeout_factor, 0.05) * 1e9);

    // Collect. Usage is per (node, job); presence counts live sessions so a
    // vanished stage is noticed this cycle.
    struct NodeStats {
        std::map<std::string, double> job_usage;
        std::map<std::string, int> job_presence;
        bool reachable = false;
    };
    std::map<uint64_t, NodeStats> stats;

    for (auto& node : nodes) {
        bool has_members;
        {
            std::lock_guard lk(mu_);
            has_members = !node->members.empty();
        }
        if (!has_members) continue;  // admin connections are not polled
        ++outcome.nodes_polled;

        auto resp = node->conn->request(CollectReq{}, timeout_ns);
        NodeStats& ns = stats[node->node_id];
        if (!resp || !std::holds_alternative<CollectResp>(*resp)) {
            ++outcome.nodes_unreachable;  // usage 0 this cycle, members kept
            continue;
        }
        ns.reachable = true;
        for (const auto& e : std::get<CollectResp>(*resp).entries) {
            if (e.channel_id == 0) {
                ns.job_presence[e.job_id] += 1;
                continue;
            }
            if (e.window_ns == 0) continue;
            double window_s = static_cast<double>(e.window_ns) / kSecond;
            double count = snap.unit == RateUnit::ops ? static_cast<double>(e.ops)
                                                      : static_cast<double>(e.bytes);
            ns.job_usage[e.job_id] += count / window_s;
        }
    }

    // Apply leaves: a reachable node that reports no live session for a job
    // has lost every stage of that job.
    {
        std::lock_guard lk(mu_);
        for (auto& node : nodes) {
            auto it = stats.find(node->node_id);
            if (it == stats.end() || !it->second.reachable) continue;
            auto& presence = it->second.job_presence;
            auto& snapshot = member_snapshot[node->node_id];
            std::erase_if(node->members, [&](const Member& m) {
                return snapshot.count(m.stage_id) > 0 &&
                       presence.find(m.job_id) == presence.end();
            });
        }
    }

    // Compute. Jobs come from surviving membership; usage sums over nodes.
    struct EnforceTarget {
        std::shared_ptr<Node> node;
        uint64_t stage_id;
        double stage_usage;
        double stage_rate = 0.0;
    };
    std::map<std::string, std::vector<EnforceTarget>> targets;
    std::map<std::string, double> job_usage;
    {
        std::lock_guard lk(mu_);
        for (auto& node : nodes) {
            auto it = stats.find(node->node_id);
            std::map<std::string, int> per_job_count;
            for (const auto& m : node->members) per_job_count[m.job_id] += 1;
            for (const auto& m : node->members) {
                double node_usage = 0.0;
                if (it != stats.end()) {
                    auto uit = it->second.job_usage.find(m.job_id);
                    if (uit != it->second.job_usage.end()) node_usage = uit->second;
                }
                // Stage-level usage is not on the wire; a node's job usage
                // divides evenly across its stages of that job.
                double stage_usage = node_usage / per_job_count[m.job_id];
                targets[m.job_id].push_back({node, m.stage_id, stage_usage});
                job_usage[m.job_id] += stage_usage;
            }
        }
    }

    std::vector<JobState> jobs;
    jobs.reserve(targets.size());
    for (const auto& [job_id, tv] : targets) {
        JobState js;
        js.job_id = job_id;
        JobQos qos = snap.qos_for(job_id);
        js.demand = qos.demand;
        js.limit = qos.limit;
        js.usage = job_usage[job_id];
        jobs.push_back(std::move(js));
    }

    AllocConfig acfg{snap.max_rate, snap.epsilon, snap.configured_max_jobs};
    std::vector<Allocation> allocs;
    switch (snap.algorithm) {
        case Algorithm::uniform: allocs = allocate_uniform(acfg, jobs); break;
        case Algorithm::priority: allocs = allocate_priority(acfg, jobs); break;
        case Algorithm::proportional: allocs = allocate_proportional(acfg, jobs); break;
        case Algorithm::adaptive: allocs = allocate_adaptive(acfg, jobs); break;
    }

    // Split each job's rate across its stages in proportion to stage usage.
    for (size_t i = 0; i < jobs.size(); ++i) {
        auto& tv = targets[jobs[i].job_id];
        std::vector<double> usages;
        usages.reserve(tv.size());
        for (const auto& t : tv) usages.push_back(t.stage_usage);
        auto split = split_job_rate(allocs[i].rate, usages);
        for (size_t k = 0; k < tv.size(); ++k) tv[k].stage_rate = split[k];

        outcome.rows.push_back(
            {jobs[i].job_id, jobs[i].usage, allocs[i].rate, allocs[i].base_rate});
    }

    // Enforce. Rule refusals for unknown stages prune the member; timeouts
    // leave it for the next cycle.
    std::vector<std::pair<uint64_t, uint64_t>> to_remove;  // (node, stage)
    for (auto& [job_id, tv] : targets) {
        for (auto& t : tv) {
            bool provisioned = false;
            uint64_t channel_id = 0;
            {
                std::lock_guard lk(mu_);
                for (auto& m : t.node->members) {
                    if (m.stage_id == t.stage_id) {
                        provisioned = m.provisioned;
                        channel_id = m.channel_id;
                        break;
                    }
                }
            }

            if (!provisioned) {
                Rule create;
                create.stage_id = t.stage_id;
                create.kind = RuleKind::create_channel;
                {
                    std::lock_guard lk(mu_);
                    create.channel_id = next_channel_id_++;
                }
                create.granularity = snap.channel.granularity;
                create.matcher_value = snap.channel.value;
                if (create.matcher_value.empty()) {
                    if (snap.channel.granularity == MatchGranularity::job)
                        create.matcher_value = job_id;
                    // user granularity: the stage fills its own identity in
                }
                create.burst_window_s = snap.channel.burst_window_s;

                auto resp = t.node->conn->request(create, timeout_ns);
                if (!resp) continue;  // retry next cycle
                const auto* ack = std::get_if<RuleAck>(&*resp);
                if (!ack) continue;
                if (ack->status == AckStatus::unknown_stage) {
                    to_remove.emplace_back(t.node->node_id, t.stage_id);
                    continue;
                }
                if (ack->status != AckStatus::ok && ack->status != AckStatus::duplicate_channel)
                    continue;
                channel_id = create.channel_id;
                std::lock_guard lk(mu_);
                for (auto& m : t.node->members) {
                    if (m.stage_id == t.stage_id) {
                        m.provisioned = true;
                        m.channel_id = channel_id;
                        break;
                    }
                }
            }

            Rule rate;
            rate.stage_id = t.stage_id;
            rate.kind = RuleKind::set_rate;
            rate.channel_id = channel_id;
            rate.rate = t.stage_rate;
            auto resp = t.node->conn->request(rate, timeout_ns);
            if (!resp) continue;
            if (const auto* ack = std::get_if<RuleAck>(&*resp)) {
                if (ack->status == AckStatus::unknown_stage)
                    to_remove.emplace_back(t.node->node_id, t.stage_id);
            }
        }
    }

    if (!to_remove.empty()) {
        std::lock_guard lk(mu_);
        for (auto& node : nodes) {
            std::erase_if(node->members, [&](const Member& m) {
                return std::find(to_remove.begin(), to_remove.end(),
                                 std::make_pair(node->node_id, m.stage_id)) != to_remove.end();
            });
        }
    }

    outcome.latency_ns = now_ns() - outcome.started_ns;
    write_csv_rows(outcome);

    {
        std::lock_guard lk(mu_);
        last_ = outcome;
    }
    cycles_.fetch_add(1, std::memory_order_release);
    return outcome;
}

void GlobalController::write_csv_rows(const CycleOutcome& outcome) {
    if (!csv_) return;
    double ts = wall_seconds();
    for (const auto& row : outcome.rows) {
        std::fprintf(csv_, "%.3f,%s,%.6f,%.6f,%.6f,%lld\n", ts, row.job_id.c_str(), row.usage,
                     row.assigned_rate, row.base_rate,
                     static_cast<long long>(outcome.latency_ns));
    }
    std::fflush(csv_);
}

void GlobalController::loop() {
    std::unique_lock lk(loop_mu_);
    while (!stopping_) {
        lk.unlock();
        CycleOutcome outcome = run_cycle_now();
        double interval_s;
        {
            std::lock_guard plk(mu_);
            interval_s = policy_.resolve(0.0).loop_interval_s;
        }
        auto remaining = std::chrono::nanoseconds(
            static_cast<int64_t>(interval_s * 1e9) - outcome.latency_ns);
        lk.lock();
        if (remaining.count() > 0)
            loop_cv_.wait_for(lk, remaining, [this] { return stopping_; });
    }
}

}  // namespace fsqos
