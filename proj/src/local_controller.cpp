#include "fsqos/local_controller.hpp"

#include <unistd.h>

#include "fsqos/clock.hpp"

namespace fsqos {

namespace {
constexpr int64_t kSecond = 1'000'000'000;
}

LocalController::LocalController(LocalControllerConfig cfg) : cfg_(std::move(cfg)) {}

LocalController::~LocalController() { stop(); }

bool LocalController::start(std::string* err) {
    if (cfg_.global) {
        int fd = connect_to(*cfg_.global, now_ns() + 10 * kSecond, err);
        if (fd < 0) return false;
        upstream_ = std::make_unique<PeerConnection>(
            fd, [this](const MessageBody& m) { return handle_upstream_msg(m); },
            cfg_.node_name + "-upstream");
    }
    listener_ = Listener::open(cfg_.listen, [this](int fd) { on_stage_connection(fd); }, err);
    if (!listener_) {
        if (upstream_) upstream_->close();
        return false;
    }
    started_ = true;
    return true;
}

void LocalController::stop() {
    if (!started_.exchange(false)) {
        if (listener_) listener_->stop();
        return;
    }
    listener_->stop();
    std::vector<std::shared_ptr<Session>> doomed;
    {
        std::lock_guard lk(mu_);
        doomed.swap(sessions_);
    }
    for (auto& s : doomed)
        if (s->conn) s->conn->close();
    doomed.clear();
    if (upstream_) upstream_->close();
}

const Address& LocalController::listen_address() const { return listener_->local_address(); }

size_t LocalController::live_sessions() const {
    std::lock_guard lk(mu_);
    size_t n = 0;
    for (const auto& s : sessions_)
        if (s->registered.load(std::memory_order_acquire) && !s->dead.load()) ++n;
    return n;
}

bool LocalController::upstream_alive() const { return upstream_ && upstream_->alive(); }

void LocalController::on_stage_connection(int fd) {
    auto session = std::make_shared<Session>();
    Session* raw = session.get();
    session->conn = std::make_unique<PeerConnection>(
        fd, [this, raw](const MessageBody& m) { return handle_stage_msg(raw, m); },
        cfg_.node_name + "-stage");
    session->conn->set_on_close([raw] { raw->dead.store(true, std::memory_order_release); });
    std::lock_guard lk(mu_);
    sessions_.push_back(std::move(session));
}

void LocalController::reap_dead_sessions_locked() {
    // Safe from any thread except a dead session's own reader (the reader
    // has already signalled on_close by the time dead is visible).
    std::erase_if(sessions_, [](const std::shared_ptr<Session>& s) {
        return s->dead.load(std::memory_order_acquire);
    });
}

MessageBody LocalController::handle_register(Session* s, const RegisterStage& reg) {
    if (reg.info.job_id.empty()) return RegisterAck{0};

    uint64_t assigned;
    {
        std::lock_guard lk(mu_);
        reap_dead_sessions_locked();
        for (const auto& other : sessions_) {
            if (other.get() == s || !other->registered.load(std::memory_order_acquire)) continue;
            // One stage per (job, pid) on a node.
            if (other->info.job_id == reg.info.job_id && other->info.pid == reg.info.pid)
                return RegisterAck{0};
        }
        assigned = next_stage_id_++;
    }

    StageInfo full = reg.info;
    full.stage_id = assigned;

    if (upstream_) {
        RegisterStage fwd;
        fwd.info = full;
        auto resp = upstream_->request(fwd, 5 * kSecond);
        if (!resp || !std::holds_alternative<RegisterAck>(*resp)) return RegisterAck{0};
        if (std::get<RegisterAck>(*resp).stage_id != assigned) return RegisterAck{0};
    }

    {
        std::lock_guard lk(mu_);
        s->stage_id = assigned;
        s->info = full;
        s->registered.store(true, std::memory_order_release);
    }
    return RegisterAck{assigned};
}

MessageBody LocalController::handle_stage_msg(Session* s, const MessageBody& msg) {
    if (const auto* reg = std::get_if<RegisterStage>(&msg)) return handle_register(s, *reg);
    // Stages only ever initiate registration.
    throw ProtocolViolation("unexpected message type on stage link");
}

CollectResp LocalController::collect_now() {
    std::vector<std::shared_ptr<Session>> snapshot;
    {
        std::lock_guard lk(mu_);
        reap_dead_sessions_locked();
        snapshot = sessions_;
    }

    CollectResp out;
    auto timeout = static_cast<int64_t>(cfg_.stats_timeout_s * 1e9);
    for (auto& s : snapshot) {
        if (!s->registered.load(std::memory_order_acquire) ||
            s->dead.load(std::memory_order_acquire))
            continue;
        auto resp = s->conn->request(CollectReq{}, timeout);
        uint64_t window_ns = 0;
        if (resp && std::holds_alternative<CollectResp>(*resp)) {
            auto& got = std::get<CollectResp>(*resp);
            for (auto& e : got.entries) {
                window_ns = std::max(window_ns, e.window_ns);
                out.entries.push_back(std::move(e));
            }
        }
        // Presence row: one per live session, zero counters. A session that
        // timed out is still alive, so it stays visible with a zeroed
        // window rather than disappearing (which would read as a leave).
        out.entries.push_back(StatsEntry{s->info.job_id, 0, 0, 0, window_ns});
    }
    return out;
}

MessageBody LocalController::handle_rule(const Rule& rule) {
    std::shared_ptr<Session> target;
    {
        std::lock_guard lk(mu_);
        for (const auto& s : sessions_) {
            if (s->registered.load(std::memory_order_acquire) && s->stage_id == rule.stage_id &&
                !s->dead.load(std::memory_order_acquire)) {
                target = s;
                break;
            }
        }
    }
    if (!target) return RuleAck{AckStatus::unknown_stage, "no such stage on this node"};

    auto timeout = static_cast<int64_t>(cfg_.stats_timeout_s * 1e9);
    auto resp = target->conn->request(rule, timeout);
    if (!resp) return RuleAck{AckStatus::rejected, "stage did not answer"};
    if (const auto* ack = std::get_if<RuleAck>(&*resp)) return *ack;
    return RuleAck{AckStatus::rejected, "stage sent a malformed acknowledgement"};
}

MessageBody LocalController::handle_upstream_msg(const MessageBody& msg) {
    if (std::holds_alternative<CollectReq>(msg)) return collect_now();
    if (const auto* rule = std::get_if<Rule>(&msg)) return handle_rule(*rule);
    throw ProtocolViolation("unexpected message type from global controller");
}

}  // namespace fsqos
