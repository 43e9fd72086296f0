#include "fsqos/protocol.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

namespace fsqos {

namespace {

// Writers append little-endian regardless of host order.
void put_u8(std::vector<uint8_t>& b, uint8_t v) { b.push_back(v); }

void put_u16(std::vector<uint8_t>& b, uint16_t v) {
    b.push_back(static_cast<uint8_t>(v));
    b.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<uint8_t>& b, double v) {
    put_u64(b, std::bit_cast<uint64_t>(v));
}

void put_str(std::vector<uint8_t>& b, const std::string& s) {
    if (s.size() > 0xffff) throw std::length_error("string field exceeds u16 length");
    put_u16(b, static_cast<uint16_t>(s.size()));
    b.insert(b.end(), s.begin(), s.end());
}

void put_blob(std::vector<uint8_t>& b, const std::vector<uint8_t>& v) {
    put_u32(b, static_cast<uint32_t>(v.size()));
    b.insert(b.end(), v.begin(), v.end());
}

// Cursor over one frame payload. Read failures mark `bad`; the caller turns
// that into a protocol error (the frame is complete, so missing bytes mean a
// malformed body, not a short read).
struct Cursor {
    const uint8_t* p;
    size_t left;
    bool bad = false;

    bool take(void* out, size_t n) {
        if (left < n) {
            bad = true;
            return false;
        }
        std::memcpy(out, p, n);
        p += n;
        left -= n;
        return true;
    }

    uint8_t u8() {
        uint8_t v = 0;
        take(&v, 1);
        return v;
    }
    uint16_t u16() {
        uint8_t raw[2] = {};
        take(raw, 2);
        return static_cast<uint16_t>(raw[0] | (uint16_t{raw[1]} << 8));
    }
    uint32_t u32() {
        uint8_t raw[4] = {};
        take(raw, 4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t{raw[i]} << (8 * i);
        return v;
    }
    uint64_t u64() {
        uint8_t raw[8] = {};
        take(raw, 8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t{raw[i]} << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        uint16_t n = u16();
        std::string s;
        if (bad || left < n) {
            bad = true;
            return s;
        }
        s.assign(reinterpret_cast<const char*>(p), n);
        p += n;
        left -= n;
        return s;
    }
    std::vector<uint8_t> blob() {
        uint32_t n = u32();
        std::vector<uint8_t> v;
        if (bad || left < n) {
            bad = true;
            return v;
        }
        v.assign(p, p + n);
        p += n;
        left -= n;
        return v;
    }
};

void encode_body(std::vector<uint8_t>& out, const MessageBody& body) {
    std::visit(
        [&](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, RegisterStage>) {
                put_u64(out, m.info.stage_id);
                put_str(out, m.info.job_id);
                put_u64(out, static_cast<uint64_t>(m.info.pid));
                put_str(out, m.info.hostname);
                put_str(out, m.info.user_id);
            } else if constexpr (std::is_same_v<T, RegisterAck>) {
                put_u64(out, m.stage_id);
            } else if constexpr (std::is_same_v<T, CollectReq>) {
                // empty body
            } else if constexpr (std::is_same_v<T, CollectResp>) {
                put_u32(out, static_cast<uint32_t>(m.entries.size()));
                for (const auto& e : m.entries) {
                    put_str(out, e.job_id);
                    put_u64(out, e.channel_id);
                    put_u64(out, e.ops);
                    put_u64(out, e.bytes);
                    put_u64(out, e.window_ns);
                }
            } else if constexpr (std::is_same_v<T, Rule>) {
                put_u64(out, m.stage_id);
                put_u8(out, static_cast<uint8_t>(m.kind));
                put_u64(out, m.channel_id);
                if (m.kind == RuleKind::create_channel) {
                    put_u8(out, static_cast<uint8_t>(m.granularity));
                    put_str(out, m.matcher_value);
                    put_f64(out, m.burst_window_s);
                } else {
                    put_f64(out, m.rate);
                }
            } else if constexpr (std::is_same_v<T, RuleAck>) {
                put_u8(out, static_cast<uint8_t>(m.status));
                put_str(out, m.message);
            } else if constexpr (std::is_same_v<T, SetPolicy>) {
                put_blob(out, m.blob);
            } else if constexpr (std::is_same_v<T, PolicyAck>) {
                put_u8(out, static_cast<uint8_t>(m.status));
                put_str(out, m.message);
            }
        },
        body);
}

bool decode_body(Cursor& c, MsgType t, MessageBody& out, std::string& err) {
    switch (t) {
        case MsgType::register_stage: {
            RegisterStage m;
            m.info.stage_id = c.u64();
            m.info.job_id = c.str();
            m.info.pid = static_cast<int64_t>(c.u64());
            m.info.hostname = c.str();
            m.info.user_id = c.str();
            out = std::move(m);
            return true;
        }
        case MsgType::register_ack: {
            RegisterAck m;
            m.stage_id = c.u64();
            out = m;
            return true;
        }
        case MsgType::collect_req:
            out = CollectReq{};
            return true;
        case MsgType::collect_resp: {
            CollectResp m;
            uint32_t n = c.u32();
            // Entry floor is 26 bytes; a count that cannot fit in the
            // remaining payload is malformed, not a short read.
            if (!c.bad && static_cast<uint64_t>(n) * 26 > c.left) {
                err = "collect_resp entry count exceeds frame";
                return false;
            }
            m.entries.reserve(n);
            for (uint32_t i = 0; i < n && !c.bad; ++i) {
                StatsEntry e;
                e.job_id = c.str();
                e.channel_id = c.u64();
                e.ops = c.u64();
                e.bytes = c.u64();
                e.window_ns = c.u64();
                m.entries.push_back(std::move(e));
            }
            out = std::move(m);
            return true;
        }
        case MsgType::rule: {
            Rule m;
            m.stage_id = c.u64();
            uint8_t kind = c.u8();
            if (!c.bad && kind != 1 && kind != 2) {
                err = "rule kind out of range";
                return false;
            }
            m.kind = static_cast<RuleKind>(kind);
            m.channel_id = c.u64();
            if (m.kind == RuleKind::create_channel) {
                uint8_t g = c.u8();
                if (!c.bad && g >= kGranularityCount) {
                    err = "granularity out of range";
                    return false;
                }
                m.granularity = static_cast<MatchGranularity>(g);
                m.matcher_value = c.str();
                m.burst_window_s = c.f64();
            } else {
                m.rate = c.f64();
            }
            out = std::move(m);
            return true;
        }
        case MsgType::rule_ack: {
            RuleAck m;
            m.status = static_cast<AckStatus>(c.u8());
            m.message = c.str();
            out = std::move(m);
            return true;
        }
        case MsgType::set_policy: {
            SetPolicy m;
            m.blob = c.blob();
            out = std::move(m);
            return true;
        }
        case MsgType::policy_ack: {
            PolicyAck m;
            m.status = static_cast<AckStatus>(c.u8());
            m.message = c.str();
            out = std::move(m);
            return true;
        }
    }
    err = "unknown message type";
    return false;
}

}  // namespace

MsgType msg_type_of(const MessageBody& body) {
    return std::visit(
        [](const auto& m) {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, RegisterStage>) return MsgType::register_stage;
            if constexpr (std::is_same_v<T, RegisterAck>) return MsgType::register_ack;
            if constexpr (std::is_same_v<T, CollectReq>) return MsgType::collect_req;
            if constexpr (std::is_same_v<T, CollectResp>) return MsgType::collect_resp;
            if constexpr (std::is_same_v<T, Rule>) return MsgType::rule;
            if constexpr (std::is_same_v<T, RuleAck>) return MsgType::rule_ack;
            if constexpr (std::is_same_v<T, SetPolicy>) return MsgType::set_policy;
            if constexpr (std::is_same_v<T, PolicyAck>) return MsgType::policy_ack;
        },
        body);
}

bool is_response(MsgType t) {
    switch (t) {
        case MsgType::register_ack:
        case MsgType::collect_resp:
        case MsgType::rule_ack:
        case MsgType::policy_ack:
            return true;
        default:
            return false;
    }
}

std::vector<uint8_t> encode_frame(const Envelope& env) {
    std::vector<uint8_t> payload;
    payload.reserve(64);
    put_u8(payload, static_cast<uint8_t>(msg_type_of(env.body)));
    put_u64(payload, env.correlation_id);
    encode_body(payload, env.body);
    if (payload.size() > kMaxFrameBytes) throw std::length_error("frame exceeds size cap");

    std::vector<uint8_t> frame;
    frame.reserve(4 + payload.size());
    put_u32(frame, static_cast<uint32_t>(payload.size()));
    frame.insert(frame.end(), payload.begin(), payload.end());
    return frame;
}

DecodeResult decode_frame(const uint8_t* data, size_t len) {
    DecodeResult res;
    if (len < 4) {
        res.status = DecodeStatus::need_more;
        return res;
    }
    uint32_t payload_len = 0;
    for (int i = 0; i < 4; ++i) payload_len |= uint32_t{data[i]} << (8 * i);
    if (payload_len > kMaxFrameBytes) {
        res.status = DecodeStatus::protocol_error;
        res.error = "frame length exceeds cap";
        return res;
    }
    if (payload_len < 9) {  // type byte + correlation id at minimum
        res.status = DecodeStatus::protocol_error;
        res.error = "frame too short for header";
        return res;
    }
    if (len < 4 + static_cast<size_t>(payload_len)) {
        res.status = DecodeStatus::need_more;
        return res;
    }

    Cursor c{data + 4, payload_len};
    uint8_t type_raw = c.u8();
    uint64_t corr = c.u64();
    if (type_raw < 1 || type_raw > 8) {
        res.status = DecodeStatus::protocol_error;
        res.error = "unknown message type " + std::to_string(type_raw);
        return res;
    }

    MessageBody body;
    std::string err;
    if (!decode_body(c, static_cast<MsgType>(type_raw), body, err) || c.bad) {
        res.status = DecodeStatus::protocol_error;
        res.error = err.empty() ? "truncated message body" : err;
        return res;
    }
    if (c.left != 0) {
        res.status = DecodeStatus::protocol_error;
        res.error = "trailing bytes after message body";
        return res;
    }

    res.status = DecodeStatus::ok;
    res.consumed = 4 + payload_len;
    res.envelope = Envelope{corr, std::move(body)};
    return res;
}

}  // namespace fsqos
