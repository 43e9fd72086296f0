#include "fsqos/stage_agent.hpp"

#include "fsqos/clock.hpp"

namespace fsqos {

StageAgent::StageAgent(Stage& stage, StageInfo info) : stage_(stage), info_(std::move(info)) {}

StageAgent::~StageAgent() { disconnect(); }

void StageAgent::disconnect() {
    if (conn_) conn_->close();
}

MessageBody StageAgent::handle(const MessageBody& msg) {
    if (std::holds_alternative<CollectReq>(msg)) {
        StageStatsWindow w = stage_.collect_stats();
        CollectResp resp;
        resp.entries.reserve(w.rows.size());
        for (const auto& row : w.rows) {
            resp.entries.push_back({info_.job_id, row.channel_id, row.ops, row.bytes,
                                    static_cast<uint64_t>(w.window_ns)});
        }
        return resp;
    }
    if (const Rule* rule = std::get_if<Rule>(&msg)) {
        if (rule->stage_id != stage_id_.load(std::memory_order_acquire))
            return RuleAck{AckStatus::unknown_stage, "rule addressed to another stage"};
        AckStatus st;
        if (rule->kind == RuleKind::create_channel) {
            // An empty matcher value at job/user granularity means "this
            // stage's own identity"; the controller may also send it filled.
            std::string value = rule->matcher_value;
            if (value.empty() && rule->granularity == MatchGranularity::job)
                value = info_.job_id;
            else if (value.empty() && rule->granularity == MatchGranularity::user)
                value = info_.user_id;
            st = stage_.create_channel(rule->channel_id, rule->granularity, value,
                                       rule->burst_window_s);
        } else {
            st = stage_.set_channel_rate(rule->channel_id, rule->rate);
        }
        return RuleAck{st, st == AckStatus::ok ? "" : "rule refused"};
    }
    throw ProtocolViolation("unexpected message type on stage link");
}

bool StageAgent::connect(const Address& local_controller, int64_t deadline_ns,
                         std::string* err) {
    int fd = connect_to(local_controller, deadline_ns, err);
    if (fd < 0) return false;
    conn_ = std::make_unique<PeerConnection>(
        fd, [this](const MessageBody& m) { return handle(m); }, "stage-agent");

    RegisterStage reg;
    reg.info = info_;
    reg.info.stage_id = 0;  // assigned by the controller
    auto resp = conn_->request(reg, deadline_ns - now_ns() > int64_t{2'000'000'000}
                                        ? deadline_ns - now_ns()
                                        : int64_t{2'000'000'000});
    if (!resp || !std::holds_alternative<RegisterAck>(*resp)) {
        if (err) *err = "registration got no acknowledgement";
        conn_->close();
        return false;
    }
    uint64_t id = std::get<RegisterAck>(*resp).stage_id;
    if (id == 0) {
        if (err) *err = "registration rejected";
        conn_->close();
        return false;
    }
    stage_id_.store(id, std::memory_order_release);
    info_.stage_id = id;
    return true;
}

}  // namespace fsqos
