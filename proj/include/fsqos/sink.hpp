#pragma once

#include <atomic>
#include <cstdint>
#include <string>

#include "fsqos/request.hpp"

namespace fsqos {

// Result of handing a request to the backing store. status is 0 on success,
// an errno value otherwise. fd is meaningful for successful open-like ops.
struct SinkResult {
    int status = 0;
    int64_t fd = -1;
    uint64_t bytes = 0;
};

// Downstream executor a stage forwards granted requests to.
class Sink {
public:
    virtual ~Sink() = default;
    virtual SinkResult apply(const Request& req) = 0;
};

// Accepts everything, touches nothing. Open returns synthetic descriptors
// from a private range so they cannot collide with real ones.
class NullSink : public Sink {
public:
    SinkResult apply(const Request& req) override;
    uint64_t ops_applied() const { return ops_.load(std::memory_order_relaxed); }

private:
    std::atomic<uint64_t> ops_{0};
    std::atomic<int64_t> next_fd_{1'000'000};
};

// Executes requests against a real directory tree: the request path is
// appended under root. Paths containing ".." are refused (EINVAL) so a
// replayed trace cannot escape the sandbox directory.
class DirectorySink : public Sink {
public:
    explicit DirectorySink(std::string root);
    ~DirectorySink() override;
    SinkResult apply(const Request& req) override;

private:
    std::string resolve(const std::string& path, int* err) const;

    std::string root_;
    int root_fd_ = -1;
};

}  // namespace fsqos
