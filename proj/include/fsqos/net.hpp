#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "fsqos/protocol.hpp"

namespace fsqos {

// Endpoint notation: "tcp:<ipv4>:<port>" or "unix:<path>".
struct Address {
    bool is_unix = false;
    std::string host;  // tcp only
    uint16_t port = 0;
    std::string path;  // unix only

    static std::optional<Address> parse(const std::string& text);
    std::string str() const;
};

// Thrown by a request handler to indicate the peer broke the protocol;
// the connection is torn down in response.
struct ProtocolViolation : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One framed, bidirectional control-plane connection. A reader thread
// decodes frames: responses are matched to waiting request() calls by
// correlation id, everything else is handed to the request handler whose
// return value is sent back under the same correlation id.
//
// The handler runs on the reader thread; while it runs, no other frame from
// this peer is processed (requests on one connection are serialized by
// design: each side keeps at most one request in flight per direction).
class PeerConnection {
public:
    using RequestHandler = std::function<MessageBody(const MessageBody&)>;

    // Takes ownership of a connected socket.
    PeerConnection(int fd, RequestHandler handler, std::string label);
    ~PeerConnection();

    PeerConnection(const PeerConnection&) = delete;
    PeerConnection& operator=(const PeerConnection&) = delete;

    // Sends a request and blocks for its response. nullopt on timeout or a
    // dead connection. Safe from any thread.
    std::optional<MessageBody> request(const MessageBody& msg, int64_t timeout_ns);

    bool alive() const { return alive_.load(std::memory_order_acquire); }
    const std::string& label() const { return label_; }

    // Runs once when the reader exits (peer closed, protocol error, or local
    // close). Set before traffic starts.
    void set_on_close(std::function<void()> fn) { on_close_ = std::move(fn); }

    void close();

private:
    struct Pending {
        std::mutex mu;
        std::condition_variable cv;
        std::optional<MessageBody> result;
        bool done = false;
    };

    void reader_loop();
    bool send_frame(const Envelope& env);
    void fail_all_pending();

    int fd_;
    std::string label_;
    RequestHandler handler_;
    std::function<void()> on_close_;
    std::thread reader_;
    std::atomic<bool> alive_{true};
    std::atomic<uint64_t> next_corr_{1};

    std::mutex send_mu_;
    std::mutex pending_mu_;
    std::unordered_map<uint64_t, std::shared_ptr<Pending>> pending_;
};

// Accept loop on its own thread. The callback owns the accepted fd.
class Listener {
public:
    ~Listener();

    // Binds (tcp port 0 picks an ephemeral port) and starts accepting.
    static std::unique_ptr<Listener> open(const Address& addr,
                                          std::function<void(int fd)> on_accept,
                                          std::string* error);

    const Address& local_address() const { return local_; }
    void stop();

private:
    Listener() = default;
    void accept_loop();

    int fd_ = -1;
    Address local_;
    std::function<void(int)> on_accept_;
    std::thread thread_;
    std::atomic<bool> stopping_{false};
};

// Blocking connect; nullopt-style: returns -1 on failure. Retries until the
// deadline so dependents can start before their controller finishes binding.
int connect_to(const Address& addr, int64_t deadline_ns, std::string* error);

// Port-discovery files: a process binds an ephemeral port, writes the
// resulting address, and dependents poll for the file.
bool write_address_file(const std::string& file, const Address& addr);
std::optional<Address> wait_address_file(const std::string& file, int64_t deadline_ns);

}  // namespace fsqos
