#pragma once

#include <atomic>
#include <memory>
#include <string>

#include "fsqos/net.hpp"
#include "fsqos/protocol.hpp"
#include "fsqos/stage.hpp"

namespace fsqos {

// Control-plane client embedded next to a Stage: registers the stage with a
// local controller, then serves collection and rule requests against it.
// After registration the agent only ever answers; it never initiates.
class StageAgent {
public:
    StageAgent(Stage& stage, StageInfo info);
    ~StageAgent();

    // Connects (retrying until deadline_ns) and registers. False if the
    // controller is unreachable or rejects the registration.
    bool connect(const Address& local_controller, int64_t deadline_ns, std::string* err);

    uint64_t stage_id() const { return stage_id_.load(std::memory_order_acquire); }
    bool alive() const { return conn_ && conn_->alive(); }
    void disconnect();

private:
    MessageBody handle(const MessageBody& msg);

    Stage& stage_;
    StageInfo info_;
    std::unique_ptr<PeerConnection> conn_;
    std::atomic<uint64_t> stage_id_{0};
};

}  // namespace fsqos
