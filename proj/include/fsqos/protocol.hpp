#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "fsqos/request.hpp"

namespace fsqos {

// Control-plane wire protocol.
//
// Frame layout: u32 little-endian payload length, then the payload.
// Payload layout: u8 message type, u64 LE correlation id, message body.
// Strings are u16-LE-length-prefixed UTF-8. Doubles are IEEE-754 binary64,
// little-endian. Opaque blobs are u32-LE-length-prefixed bytes.
//
// Responses echo the correlation id of the request they answer. Each side
// keeps at most one request in flight per direction per connection.

inline constexpr uint32_t kMaxFrameBytes = 16u << 20;

enum class MsgType : uint8_t {
    // 0 is reserved as a version sentinel and never sent.
    register_stage = 1,
    register_ack = 2,
    collect_req = 3,
    collect_resp = 4,
    rule = 5,
    rule_ack = 6,
    set_policy = 7,
    policy_ack = 8,
};

struct StageInfo {
    uint64_t stage_id = 0;  // 0 until assigned by the controller
    std::string job_id;
    int64_t pid = 0;
    std::string hostname;
    std::string user_id;
};

struct RegisterStage {
    StageInfo info;
};

// stage_id == 0 means the registration was rejected.
struct RegisterAck {
    uint64_t stage_id = 0;
};

struct CollectReq {};

// One per-channel usage window. window_ns is the elapsed time the counters
// cover; ops/bytes are deltas since the previous collection.
struct StatsEntry {
    std::string job_id;
    uint64_t channel_id = 0;
    uint64_t ops = 0;
    uint64_t bytes = 0;
    uint64_t window_ns = 0;
};

struct CollectResp {
    std::vector<StatsEntry> entries;
};

enum class RuleKind : uint8_t {
    create_channel = 1,
    set_rate = 2,
};

struct Rule {
    uint64_t stage_id = 0;
    RuleKind kind = RuleKind::set_rate;
    uint64_t channel_id = 0;
    // create_channel only:
    MatchGranularity granularity = MatchGranularity::op_type;
    std::string matcher_value;
    double burst_window_s = 0.1;
    // set_rate only:
    double rate = 0.0;
};

enum class AckStatus : uint8_t {
    ok = 0,
    unknown_stage = 1,
    unknown_channel = 2,
    duplicate_channel = 3,
    bad_argument = 4,
    rejected = 5,
};

struct RuleAck {
    AckStatus status = AckStatus::ok;
    std::string message;
};

struct SetPolicy {
    std::vector<uint8_t> blob;
};

struct PolicyAck {
    AckStatus status = AckStatus::ok;
    std::string message;
};

using MessageBody = std::variant<RegisterStage, RegisterAck, CollectReq, CollectResp,
                                 Rule, RuleAck, SetPolicy, PolicyAck>;

struct Envelope {
    uint64_t correlation_id = 0;
    MessageBody body;
};

MsgType msg_type_of(const MessageBody& body);
// True for message types that answer a request (matched by correlation id).
bool is_response(MsgType t);

// Serializes a full frame including the length prefix.
std::vector<uint8_t> encode_frame(const Envelope& env);

enum class DecodeStatus : uint8_t {
    ok,
    need_more,       // buffer holds a prefix of a valid frame
    protocol_error,  // malformed; connection must be torn down
};

struct DecodeResult {
    DecodeStatus status = DecodeStatus::need_more;
    size_t consumed = 0;  // bytes to drop from the front of the buffer (ok only)
    Envelope envelope;
    std::string error;  // protocol_error only
};

// Attempts to decode one frame from the front of [data, data+len).
DecodeResult decode_frame(const uint8_t* data, size_t len);

}  // namespace fsqos
