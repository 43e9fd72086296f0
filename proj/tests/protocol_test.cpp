#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "fsqos/protocol.hpp"

using namespace fsqos;

TEST_SUITE_BEGIN("protocol");

namespace {

Envelope roundtrip(const Envelope& in) {
    auto bytes = encode_frame(in);
    auto res = decode_frame(bytes.data(), bytes.size());
    REQUIRE(res.status == DecodeStatus::ok);
    REQUIRE(res.consumed == bytes.size());
    CHECK(res.envelope.correlation_id == in.correlation_id);
    return res.envelope;
}

std::string random_string(std::mt19937_64& rng, size_t max_len) {
    size_t n = std::uniform_int_distribution<size_t>(0, max_len)(rng);
    std::string s(n, '\0');
    for (auto& c : s) c = static_cast<char>(std::uniform_int_distribution<>(0, 255)(rng));
    return s;
}

}  // namespace

TEST_CASE("register messages round-trip") {
    RegisterStage m;
    m.info = {77, "job-a", 4242, "node03", "alice"};
    auto out = roundtrip({9001, m});
    auto& got = std::get<RegisterStage>(out.body);
    CHECK(got.info.stage_id == 77);
    CHECK(got.info.job_id == "job-a");
    CHECK(got.info.pid == 4242);
    CHECK(got.info.hostname == "node03");
    CHECK(got.info.user_id == "alice");

    auto ack = roundtrip({9001, RegisterAck{77}});
    CHECK(std::get<RegisterAck>(ack.body).stage_id == 77);
}

TEST_CASE("collect messages round-trip including empty responses") {
    auto req = roundtrip({5, CollectReq{}});
    CHECK(std::holds_alternative<CollectReq>(req.body));

    CollectResp resp;
    resp.entries.push_back({"job-a", 1, 12345, 0, 1'000'000'000});
    resp.entries.push_back({"job-b", 0, 0, 0, 999'999'999});  // presence row
    resp.entries.push_back({"job-c", 9, 7, uint64_t{1} << 20, 1});
    auto out = roundtrip({6, resp});
    auto& got = std::get<CollectResp>(out.body);
    REQUIRE(got.entries.size() == 3);
    CHECK(got.entries[0].job_id == "job-a");
    CHECK(got.entries[0].ops == 12345);
    CHECK(got.entries[1].channel_id == 0);
    CHECK(got.entries[2].bytes == uint64_t{1} << 20);
    CHECK(got.entries[2].window_ns == 1);

    auto empty = roundtrip({7, CollectResp{}});
    CHECK(std::get<CollectResp>(empty.body).entries.empty());
}

TEST_CASE("rule variants carry their own payloads") {
    Rule create;
    create.stage_id = 3;
    create.kind = RuleKind::create_channel;
    create.channel_id = 11;
    create.granularity = MatchGranularity::op_class;
    create.matcher_value = "metadata";
    create.burst_window_s = 0.02;
    auto out = roundtrip({1, create});
    auto& c = std::get<Rule>(out.body);
    CHECK(c.kind == RuleKind::create_channel);
    CHECK(c.granularity == MatchGranularity::op_class);
    CHECK(c.matcher_value == "metadata");
    CHECK(c.burst_window_s == doctest::Approx(0.02).epsilon(1e-15));

    Rule rate;
    rate.stage_id = 3;
    rate.kind = RuleKind::set_rate;
    rate.channel_id = 11;
    rate.rate = 1500.5;
    out = roundtrip({2, rate});
    auto& r = std::get<Rule>(out.body);
    CHECK(r.kind == RuleKind::set_rate);
    CHECK(r.rate == doctest::Approx(1500.5).epsilon(1e-15));

    auto ack = roundtrip({2, RuleAck{AckStatus::unknown_channel, "no channel 11"}});
    CHECK(std::get<RuleAck>(ack.body).status == AckStatus::unknown_channel);
    CHECK(std::get<RuleAck>(ack.body).message == "no channel 11");
}

TEST_CASE("policy blobs round-trip as raw bytes") {
    SetPolicy p;
    for (int i = 0; i < 70'000; ++i) p.blob.push_back(static_cast<uint8_t>(i * 31));
    auto out = roundtrip({123456789, p});
    CHECK(std::get<SetPolicy>(out.body).blob == p.blob);

    auto ack = roundtrip({123456789, PolicyAck{AckStatus::ok, ""}});
    CHECK(std::get<PolicyAck>(ack.body).status == AckStatus::ok);
}

TEST_CASE("every truncation of a valid frame asks for more bytes") {
    CollectResp resp;
    resp.entries.push_back({"job-x", 4, 9, 100, 42});
    auto bytes = encode_frame(Envelope{77, resp});
    for (size_t n = 0; n < bytes.size(); ++n) {
        auto res = decode_frame(bytes.data(), n);
        CHECK(res.status == DecodeStatus::need_more);
    }
}

TEST_CASE("consumed length leaves following frames intact") {
    auto a = encode_frame({1, CollectReq{}});
    auto b = encode_frame({2, RegisterAck{5}});
    std::vector<uint8_t> buf = a;
    buf.insert(buf.end(), b.begin(), b.end());

    auto r1 = decode_frame(buf.data(), buf.size());
    REQUIRE(r1.status == DecodeStatus::ok);
    CHECK(r1.consumed == a.size());
    CHECK(r1.envelope.correlation_id == 1);

    auto r2 = decode_frame(buf.data() + r1.consumed, buf.size() - r1.consumed);
    REQUIRE(r2.status == DecodeStatus::ok);
    CHECK(std::get<RegisterAck>(r2.envelope.body).stage_id == 5);
}

TEST_CASE("malformed frames are rejected as protocol errors") {
    auto valid = encode_frame({8, RegisterAck{5}});

    SUBCASE("unknown message type") {
        auto bad = valid;
        bad[4] = 0;  // version sentinel, never valid on the wire
        CHECK(decode_frame(bad.data(), bad.size()).status == DecodeStatus::protocol_error);
        bad[4] = 200;
        CHECK(decode_frame(bad.data(), bad.size()).status == DecodeStatus::protocol_error);
    }
    SUBCASE("trailing garbage inside the frame") {
        auto bad = valid;
        bad.push_back(0xaa);
        bad[0] += 1;  // length prefix claims the extra byte
        CHECK(decode_frame(bad.data(), bad.size()).status == DecodeStatus::protocol_error);
    }
    SUBCASE("declared length above the cap") {
        std::vector<uint8_t> bad = {0xff, 0xff, 0xff, 0xff, 0, 0, 0, 0};
        CHECK(decode_frame(bad.data(), bad.size()).status == DecodeStatus::protocol_error);
    }
    SUBCASE("payload shorter than the fixed header") {
        std::vector<uint8_t> bad = {3, 0, 0, 0, 1, 2, 3};
        CHECK(decode_frame(bad.data(), bad.size()).status == DecodeStatus::protocol_error);
    }
    SUBCASE("string field runs past the frame") {
        RuleAck ack{AckStatus::ok, "hello"};
        auto bad = encode_frame({1, ack});
        // Inflate the string length prefix beyond the payload.
        bad[4 + 1 + 8 + 1] = 0xff;
        CHECK(decode_frame(bad.data(), bad.size()).status == DecodeStatus::protocol_error);
    }
    SUBCASE("entry count beyond the payload") {
        CollectResp resp;
        resp.entries.push_back({"j", 1, 1, 1, 1});
        auto bad = encode_frame({1, resp});
        bad[4 + 1 + 8] = 0xff;  // count low byte
        bad[4 + 1 + 8 + 1] = 0xff;
        CHECK(decode_frame(bad.data(), bad.size()).status == DecodeStatus::protocol_error);
    }
}

TEST_CASE("randomized messages survive the wire unchanged") {
    std::mt19937_64 rng(2024);
    for (int i = 0; i < 3000; ++i) {
        Envelope in;
        in.correlation_id = rng();
        switch (rng() % 8) {
            case 0: {
                RegisterStage m;
                m.info.stage_id = rng();
                m.info.job_id = random_string(rng, 40);
                m.info.pid = static_cast<int64_t>(rng());
                m.info.hostname = random_string(rng, 64);
                m.info.user_id = random_string(rng, 32);
                in.body = std::move(m);
                break;
            }
            case 1: in.body = RegisterAck{rng()}; break;
            case 2: in.body = CollectReq{}; break;
            case 3: {
                CollectResp m;
                size_t n = rng() % 40;
                for (size_t k = 0; k < n; ++k)
                    m.entries.push_back({random_string(rng, 24), rng(), rng(), rng(), rng()});
                in.body = std::move(m);
                break;
            }
            case 4: {
                Rule m;
                m.stage_id = rng();
                m.channel_id = rng();
                if (rng() % 2) {
                    m.kind = RuleKind::create_channel;
                    m.granularity = static_cast<MatchGranularity>(rng() % kGranularityCount);
                    m.matcher_value = random_string(rng, 30);
                    m.burst_window_s = std::uniform_real_distribution<>(0.0, 10.0)(rng);
                } else {
                    m.kind = RuleKind::set_rate;
                    m.rate = std::uniform_real_distribution<>(0.0, 1e9)(rng);
                }
                in.body = std::move(m);
                break;
            }
            case 5:
                in.body = RuleAck{static_cast<AckStatus>(rng() % 6), random_string(rng, 50)};
                break;
            case 6: {
                SetPolicy m;
                size_t n = rng() % 2000;
                for (size_t k = 0; k < n; ++k) m.blob.push_back(static_cast<uint8_t>(rng()));
                in.body = std::move(m);
                break;
            }
            default:
                in.body = PolicyAck{static_cast<AckStatus>(rng() % 6), random_string(rng, 50)};
                break;
        }

        auto bytes = encode_frame(in);
        auto res = decode_frame(bytes.data(), bytes.size());
        REQUIRE(res.status == DecodeStatus::ok);
        REQUIRE(res.consumed == bytes.size());
        CHECK(res.envelope.correlation_id == in.correlation_id);
        CHECK(msg_type_of(res.envelope.body) == msg_type_of(in.body));
        // Envelope equality via re-encoding: byte-identical frames.
        CHECK(encode_frame(res.envelope) == bytes);
    }
}

TEST_CASE("decoding random garbage never succeeds silently past the cap") {
    std::mt19937_64 rng(4);
    for (int i = 0; i < 2000; ++i) {
        size_t n = rng() % 64;
        std::vector<uint8_t> buf(n);
        for (auto& b : buf) b = static_cast<uint8_t>(rng());
        auto res = decode_frame(buf.data(), buf.size());
        if (res.status == DecodeStatus::ok) {
            CHECK(res.consumed <= buf.size());
            CHECK(res.consumed >= 13);  // length + type + correlation id
        }
    }
}

TEST_CASE("response classification covers the full message set") {
    CHECK_FALSE(is_response(MsgType::register_stage));
    CHECK(is_response(MsgType::register_ack));
    CHECK_FALSE(is_response(MsgType::collect_req));
    CHECK(is_response(MsgType::collect_resp));
    CHECK_FALSE(is_response(MsgType::rule));
    CHECK(is_response(MsgType::rule_ack));
    CHECK_FALSE(is_response(MsgType::set_policy));
    CHECK(is_response(MsgType::policy_ack));
}

TEST_SUITE_END();
