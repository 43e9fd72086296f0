#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "fsqos/net.hpp"
#include "fsqos/policy.hpp"
#include "fsqos/protocol.hpp"

namespace fsqos {

struct GlobalControllerConfig {
    Address listen;
    Policy policy;
    std::string cycle_log_path;  // per-cycle CSV; empty disables logging
    double stats_timeout_factor = 0.25;  // fraction of the loop interval
    bool run_loop = true;                // false: cycles are driven manually
};

struct JobCycleRow {
    std::string job_id;
    double usage = 0.0;          // measured over the last window
    double assigned_rate = 0.0;  // after leftover redistribution
    double base_rate = 0.0;      // before redistribution
};

struct CycleOutcome {
    int64_t started_ns = 0;
    int64_t latency_ns = 0;
    int nodes_polled = 0;
    int nodes_unreachable = 0;
    std::vector<JobCycleRow> rows;
};

// Cluster-wide feedback loop: collects per-job usage from every local
// controller, runs the configured allocation algorithm, and pushes per-stage
// rate rules back down. Stage membership is learned from forwarded
// registrations; leaves surface as missing presence rows or refused rules.
class GlobalController {
public:
    explicit GlobalController(GlobalControllerConfig cfg);
    ~GlobalController();

    bool start(std::string* err);
    void stop();

    const Address& listen_address() const;

    // One synchronous collect/compute/enforce pass (manual mode or tests).
    CycleOutcome run_cycle_now();

    uint64_t cycles() const { return cycles_.load(std::memory_order_acquire); }
    CycleOutcome last_outcome() const;
    size_t node_count() const;
    size_t member_count() const;

    // Validates and atomically swaps the policy; the schedule epoch resets.
    bool set_policy_text(const std::string& json_text, std::string* err);

private:
    struct Member {
        uint64_t stage_id = 0;
        std::string job_id;
        std::string user_id;
        bool provisioned = false;
        uint64_t channel_id = 0;
    };

    struct Node {
        uint64_t node_id = 0;
        std::unique_ptr<PeerConnection> conn;
        std::atomic<bool> dead{false};
        std::vector<Member> members;  // guarded by the controller's mu_
    };

    void on_connection(int fd);
    MessageBody handle_node_msg(Node* node, const MessageBody& msg);
    void loop();
    void write_csv_rows(const CycleOutcome& outcome);

    GlobalControllerConfig cfg_;
    std::unique_ptr<Listener> listener_;

    mutable std::mutex mu_;
    std::vector<std::shared_ptr<Node>> nodes_;
    Policy policy_;
    int64_t policy_epoch_ns_ = 0;
    uint64_t next_node_id_ = 1;
    uint64_t next_channel_id_ = 1;
    CycleOutcome last_;

    std::atomic<uint64_t> cycles_{0};
    std::thread loop_thread_;
    std::mutex loop_mu_;
    std::condition_variable loop_cv_;
    bool stopping_ = false;
    std::FILE* csv_ = nullptr;
};

}  // namespace fsqos
