#include "fsqos/net.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>

#include "fsqos/clock.hpp"

namespace fsqos {

std::optional<Address> Address::parse(const std::string& text) {
    Address a;
    if (text.rfind("unix:", 0) == 0) {
        a.is_unix = true;
        a.path = text.substr(5);
        if (a.path.empty() || a.path.size() >= sizeof(sockaddr_un{}.sun_path)) return std::nullopt;
        return a;
    }
    if (text.rfind("tcp:", 0) == 0) {
        std::string rest = text.substr(4);
        size_t colon = rest.rfind(':');
        if (colon == std::string::npos) return std::nullopt;
        a.host = rest.substr(0, colon);
        std::string port = rest.substr(colon + 1);
        if (a.host.empty() || port.empty()) return std::nullopt;
        char* end = nullptr;
        long p = std::strtol(port.c_str(), &end, 10);
        if (end == nullptr || *end != '\0' || p < 0 || p > 65535) return std::nullopt;
        a.port = static_cast<uint16_t>(p);
        in_addr tmp{};
        if (inet_pton(AF_INET, a.host.c_str(), &tmp) != 1) return std::nullopt;
        return a;
    }
    return std::nullopt;
}

std::string Address::str() const {
    if (is_unix) return "unix:" + path;
    return "tcp:" + host + ":" + std::to_string(port);
}

namespace {

void set_nodelay(int fd) {
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

bool write_all(int fd, const uint8_t* data, size_t len) {
    while (len > 0) {
        ssize_t n = ::send(fd, data, len, MSG_NOSIGNAL);
        if (n < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        data += n;
        len -= static_cast<size_t>(n);
    }
    return true;
}

}  // namespace

PeerConnection::PeerConnection(int fd, RequestHandler handler, std::string label)
    : fd_(fd), label_(std::move(label)), handler_(std::move(handler)) {
    reader_ = std::thread([this] { reader_loop(); });
}

PeerConnection::~PeerConnection() {
    close();
    if (reader_.joinable()) reader_.join();
}

void PeerConnection::close() {
    bool was_alive = alive_.exchange(false, std::memory_order_acq_rel);
    if (was_alive) ::shutdown(fd_, SHUT_RDWR);
    fail_all_pending();
}

void PeerConnection::fail_all_pending() {
    std::unordered_map<uint64_t, std::shared_ptr<Pending>> doomed;
    {
        std::lock_guard lk(pending_mu_);
        doomed.swap(pending_);
    }
    for (auto& [corr, p] : doomed) {
        std::lock_guard lk(p->mu);
        p->done = true;
        p->cv.notify_all();
    }
}

bool PeerConnection::send_frame(const Envelope& env) {
    auto bytes = encode_frame(env);
    std::lock_guard lk(send_mu_);
    if (!alive_.load(std::memory_order_acquire)) return false;
    return write_all(fd_, bytes.data(), bytes.size());
}

std::optional<MessageBody> PeerConnection::request(const MessageBody& msg, int64_t timeout_ns) {
    uint64_t corr = next_corr_.fetch_add(1, std::memory_order_relaxed);
    auto slot = std::make_shared<Pending>();
    {
        std::lock_guard lk(pending_mu_);
        pending_[corr] = slot;
    }
    if (!send_frame(Envelope{corr, msg})) {
        std::lock_guard lk(pending_mu_);
        pending_.erase(corr);
        return std::nullopt;
    }

    std::unique_lock lk(slot->mu);
    bool ok = slot->cv.wait_for(lk, std::chrono::nanoseconds(timeout_ns),
                                [&] { return slot->done; });
    std::optional<MessageBody> out = std::move(slot->result);
    lk.unlock();
    {
        // Late responses after a timeout find no slot and are dropped.
        std::lock_guard plk(pending_mu_);
        pending_.erase(corr);
    }
    if (!ok) return std::nullopt;
    return out;
}

void PeerConnection::reader_loop() {
    std::vector<uint8_t> buf;
    buf.reserve(64 * 1024);
    uint8_t chunk[64 * 1024];

    while (alive_.load(std::memory_order_acquire)) {
        ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
        if (n == 0) break;
        if (n < 0) {
            if (errno == EINTR) continue;
            break;
        }
        buf.insert(buf.end(), chunk, chunk + n);

        size_t off = 0;
        bool dead = false;
        while (true) {
            auto res = decode_frame(buf.data() + off, buf.size() - off);
            if (res.status == DecodeStatus::need_more) break;
            if (res.status == DecodeStatus::protocol_error) {
                dead = true;  // malformed peer: tear the connection down
                break;
            }
            off += res.consumed;
            MsgType t = msg_type_of(res.envelope.body);
            if (is_response(t)) {
                std::shared_ptr<Pending> slot;
                {
                    std::lock_guard lk(pending_mu_);
                    auto it = pending_.find(res.envelope.correlation_id);
                    if (it != pending_.end()) {
                        slot = it->second;
                        pending_.erase(it);
                    }
                }
                if (slot) {
                    std::lock_guard lk(slot->mu);
                    slot->result = std::move(res.envelope.body);
                    slot->done = true;
                    slot->cv.notify_all();
                }
                // No slot: a response nobody waits for anymore; dropped.
            } else {
                try {
                    MessageBody reply = handler_(res.envelope.body);
                    if (!send_frame(Envelope{res.envelope.correlation_id, reply})) {
                        dead = true;
                        break;
                    }
                } catch (const ProtocolViolation&) {
                    dead = true;
                    break;
                }
            }
        }
        if (off > 0) buf.erase(buf.begin(), buf.begin() + static_cast<long>(off));
        if (dead) break;
    }

    bool was_alive = alive_.exchange(false, std::memory_order_acq_rel);
    if (was_alive) ::shutdown(fd_, SHUT_RDWR);
    fail_all_pending();
    if (on_close_) on_close_();
    ::close(fd_);
    fd_ = -1;
}

Listener::~Listener() { stop(); }

void Listener::stop() {
    if (!stopping_.exchange(true) && fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
    if (thread_.joinable()) thread_.join();
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
        if (local_.is_unix) ::unlink(local_.path.c_str());
    }
}

std::unique_ptr<Listener> Listener::open(const Address& addr,
                                         std::function<void(int fd)> on_accept,
                                         std::string* error) {
    auto fail = [&](const std::string& msg) {
        if (error) *error = msg + ": " + std::strerror(errno);
        return nullptr;
    };

    auto l = std::unique_ptr<Listener>(new Listener());
    l->on_accept_ = std::move(on_accept);
    l->local_ = addr;

    if (addr.is_unix) {
        l->fd_ = ::socket(AF_UNIX, SOCK_STREAM, 0);
        if (l->fd_ < 0) return fail("socket");
        ::unlink(addr.path.c_str());
        sockaddr_un sa{};
        sa.sun_family = AF_UNIX;
        std::strncpy(sa.sun_path, addr.path.c_str(), sizeof(sa.sun_path) - 1);
        if (::bind(l->fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0)
            return fail("bind " + addr.path);
    } else {
        l->fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        if (l->fd_ < 0) return fail("socket");
        int one = 1;
        ::setsockopt(l->fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in sa{};
        sa.sin_family = AF_INET;
        sa.sin_port = htons(addr.port);
        if (inet_pton(AF_INET, addr.host.c_str(), &sa.sin_addr) != 1)
            return fail("bad host " + addr.host);
        if (::bind(l->fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0)
            return fail("bind " + addr.str());
        sockaddr_in actual{};
        socklen_t len = sizeof(actual);
        ::getsockname(l->fd_, reinterpret_cast<sockaddr*>(&actual), &len);
        l->local_.port = ntohs(actual.sin_port);
    }

    if (::listen(l->fd_, 64) != 0) return fail("listen");
    l->thread_ = std::thread([p = l.get()] { p->accept_loop(); });
    return l;
}

void Listener::accept_loop() {
    while (!stopping_.load(std::memory_order_acquire)) {
        int cfd = ::accept(fd_, nullptr, nullptr);
        if (cfd < 0) {
            if (errno == EINTR) continue;
            break;  // shutdown or fatal
        }
        if (!local_.is_unix) set_nodelay(cfd);
        on_accept_(cfd);
    }
}

int connect_to(const Address& addr, int64_t deadline_ns, std::string* error) {
    std::string last_err;
    do {
        int fd;
        int rc;
        if (addr.is_unix) {
            fd = ::socket(AF_UNIX, SOCK_STREAM, 0);
            sockaddr_un sa{};
            sa.sun_family = AF_UNIX;
            std::strncpy(sa.sun_path, addr.path.c_str(), sizeof(sa.sun_path) - 1);
            rc = fd < 0 ? -1 : ::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa));
        } else {
            fd = ::socket(AF_INET, SOCK_STREAM, 0);
            sockaddr_in sa{};
            sa.sin_family = AF_INET;
            sa.sin_port = htons(addr.port);
            inet_pton(AF_INET, addr.host.c_str(), &sa.sin_addr);
            rc = fd < 0 ? -1 : ::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa));
        }
        if (rc == 0) {
            if (!addr.is_unix) set_nodelay(fd);
            return fd;
        }
        last_err = std::strerror(errno);
        if (fd >= 0) ::close(fd);
        sleep_ns(20'000'000);
    } while (now_ns() < deadline_ns);
    if (error) *error = "connect " + addr.str() + ": " + last_err;
    return -1;
}

bool write_address_file(const std::string& file, const Address& addr) {
    // Write-then-rename so readers never observe a partial address.
    std::string tmp = file + ".tmp";
    FILE* f = std::fopen(tmp.c_str(), "w");
    if (!f) return false;
    std::string s = addr.str() + "\n";
    bool ok = std::fwrite(s.data(), 1, s.size(), f) == s.size();
    ok = std::fclose(f) == 0 && ok;
    if (ok) ok = std::rename(tmp.c_str(), file.c_str()) == 0;
    return ok;
}

std::optional<Address> wait_address_file(const std::string& file, int64_t deadline_ns) {
    do {
        FILE* f = std::fopen(file.c_str(), "r");
        if (f) {
            char line[512] = {};
            bool got = std::fgets(line, sizeof(line), f) != nullptr;
            std::fclose(f);
            if (got) {
                std::string s(line);
                while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
                auto a = Address::parse(s);
                if (a) return a;
            }
        }
        sleep_ns(20'000'000);
    } while (now_ns() < deadline_ns);
    return std::nullopt;
}

}  // namespace fsqos
