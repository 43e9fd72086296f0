#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "fsqos/clock.hpp"
#include "fsqos/net.hpp"

using namespace fsqos;

TEST_SUITE_BEGIN("net");

namespace {

constexpr int64_t kSecond = 1'000'000'000;

// Minimal raw TCP acceptor for peers that misbehave on purpose.
struct RawListener {
    RawListener() {
        fd = ::socket(AF_INET, SOCK_STREAM, 0);
        REQUIRE(fd >= 0);
        sockaddr_in sa{};
        sa.sin_family = AF_INET;
        sa.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) == 0);
        REQUIRE(::listen(fd, 4) == 0);
        socklen_t len = sizeof(sa);
        REQUIRE(::getsockname(fd, reinterpret_cast<sockaddr*>(&sa), &len) == 0);
        addr = *Address::parse("tcp:127.0.0.1:" + std::to_string(ntohs(sa.sin_port)));
    }
    ~RawListener() {
        if (fd >= 0) ::close(fd);
    }
    int accept() { return ::accept(fd, nullptr, nullptr); }
    int fd = -1;
    Address addr;
};

}  // namespace

TEST_CASE("requests and responses round-trip with concurrent callers") {
    std::unique_ptr<PeerConnection> server;
    std::string err;
    auto listener = Listener::open(
        *Address::parse("tcp:127.0.0.1:0"),
        [&](int fd) {
            server = std::make_unique<PeerConnection>(
                fd,
                [](const MessageBody& msg) -> MessageBody {
                    const auto* rule = std::get_if<Rule>(&msg);
                    if (!rule) throw ProtocolViolation("want rule");
                    return RuleAck{AckStatus::ok, std::to_string(rule->channel_id)};
                },
                "server");
        },
        &err);
    REQUIRE_MESSAGE(listener != nullptr, err);

    int cfd = connect_to(listener->local_address(), now_ns() + kSecond, &err);
    REQUIRE(cfd >= 0);
    PeerConnection client(
        cfd, [](const MessageBody&) -> MessageBody { throw ProtocolViolation("unexpected"); },
        "client");

    std::atomic<int> bad{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t) {
        threads.emplace_back([&, t] {
            for (int i = 0; i < 50; ++i) {
                Rule r;
                r.kind = RuleKind::set_rate;
                r.channel_id = static_cast<uint64_t>(t * 1000 + i);
                r.rate = 1.0;
                auto resp = client.request(r, 2 * kSecond);
                if (!resp || !std::holds_alternative<RuleAck>(*resp) ||
                    std::get<RuleAck>(*resp).message != std::to_string(r.channel_id))
                    ++bad;
            }
        });
    }
    for (auto& th : threads) th.join();
    CHECK(bad.load() == 0);
}

TEST_CASE("a silent peer turns into a timeout, not a hang") {
    RawListener raw;
    std::thread sink_thread;
    std::atomic<int> peer_fd{-1};
    sink_thread = std::thread([&] {
        int c = raw.accept();
        peer_fd = c;
        char buf[256];
        while (::recv(c, buf, sizeof(buf), 0) > 0) {
        }
    });

    std::string err;
    int cfd = connect_to(raw.addr, now_ns() + kSecond, &err);
    REQUIRE(cfd >= 0);
    PeerConnection client(
        cfd, [](const MessageBody&) -> MessageBody { throw ProtocolViolation("unexpected"); },
        "client");

    int64_t t0 = now_ns();
    auto resp = client.request(CollectReq{}, 150'000'000);
    int64_t waited = now_ns() - t0;
    CHECK_FALSE(resp.has_value());
    CHECK(waited >= 140'000'000);
    CHECK(waited < kSecond);
    CHECK(client.alive());  // timeout alone does not kill the link

    client.close();
    if (peer_fd >= 0) ::close(peer_fd.load());
    sink_thread.join();
}

TEST_CASE("closing the peer releases in-flight requests early") {
    RawListener raw;
    std::thread dropper([&] {
        int c = raw.accept();
        char buf[64];
        ::recv(c, buf, sizeof(buf), 0);  // swallow the request frame
        ::close(c);                      // then vanish
    });

    std::string err;
    int cfd = connect_to(raw.addr, now_ns() + kSecond, &err);
    REQUIRE(cfd >= 0);
    PeerConnection client(
        cfd, [](const MessageBody&) -> MessageBody { throw ProtocolViolation("unexpected"); },
        "client");

    int64_t t0 = now_ns();
    auto resp = client.request(CollectReq{}, 10 * kSecond);
    int64_t waited = now_ns() - t0;
    CHECK_FALSE(resp.has_value());
    CHECK(waited < 2 * kSecond);  // nowhere near the 10s budget
    CHECK_FALSE(client.alive());
    dropper.join();
}

TEST_CASE("connect_to gives up at the deadline when nobody listens") {
    // Port from a listener we immediately closed: likely nothing there.
    Address dead;
    {
        RawListener raw;
        dead = raw.addr;
    }
    std::string err;
    int64_t t0 = now_ns();
    int fd = connect_to(dead, now_ns() + 200'000'000, &err);
    int64_t waited = now_ns() - t0;
    if (fd >= 0) {
        ::close(fd);  // something grabbed the port; nothing to assert
    } else {
        CHECK_FALSE(err.empty());
        CHECK(waited >= 150'000'000);
    }
}

TEST_SUITE_END();
