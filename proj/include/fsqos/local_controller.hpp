#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "fsqos/net.hpp"
#include "fsqos/protocol.hpp"

namespace fsqos {

struct LocalControllerConfig {
    Address listen;                 // where stages connect
    std::optional<Address> global;  // upstream; unset runs standalone
    std::string node_name = "node";
    double stats_timeout_s = 0.25;  // per-stage collection budget
};

// Per-node proxy between stages and the global controller. Keeps no policy
// state: registrations are validated and forwarded upward, rules are routed
// downward by stage id, and collections concatenate per-session stats plus
// one presence row per live session so the upstream can see joins and
// leaves within a cycle.
class LocalController {
public:
    explicit LocalController(LocalControllerConfig cfg);
    ~LocalController();

    bool start(std::string* err);
    void stop();

    const Address& listen_address() const;
    size_t live_sessions() const;
    bool upstream_alive() const;

    // Builds the same response a COLLECT_REQ would produce (standalone use).
    CollectResp collect_now();

private:
    struct Session {
        uint64_t stage_id = 0;
        StageInfo info;
        std::unique_ptr<PeerConnection> conn;
        std::atomic<bool> dead{false};
        // set once under mu_ after info is final; readers outside mu_ rely
        // on the release/acquire pair.
        std::atomic<bool> registered{false};
    };

    void on_stage_connection(int fd);
    MessageBody handle_stage_msg(Session* s, const MessageBody& msg);
    MessageBody handle_upstream_msg(const MessageBody& msg);
    MessageBody handle_register(Session* s, const RegisterStage& reg);
    MessageBody handle_rule(const Rule& rule);
    void reap_dead_sessions_locked();

    LocalControllerConfig cfg_;
    std::unique_ptr<Listener> listener_;
    std::unique_ptr<PeerConnection> upstream_;

    mutable std::mutex mu_;
    // shared_ptr so a session can be used outside mu_ while a reap runs;
    // dead sessions are pruned from threads other than their own reader.
    std::vector<std::shared_ptr<Session>> sessions_;
    uint64_t next_stage_id_ = 1;
    std::atomic<bool> started_{false};
};

}  // namespace fsqos
