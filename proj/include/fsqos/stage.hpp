#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "fsqos/protocol.hpp"
#include "fsqos/request.hpp"
#include "fsqos/sink.hpp"
#include "fsqos/token_bucket.hpp"

namespace fsqos {

struct StageConfig {
    std::string job_id;
    std::string user_id;
    // Absolute paths. A request path is managed when it equals a mountpoint
    // or extends one at a component boundary ("/scratch" covers
    // "/scratch/f1" but not "/scratchy").
    std::vector<std::string> mountpoints;
};

struct CompletionRecord {
    int64_t enqueued_ns = 0;
    int64_t granted_ns = 0;
    uint64_t channel_id = 0;  // 0: bypassed (unmanaged or no matching channel)
    bool aborted = false;     // stage shut down while the request waited
    SinkResult sink;
};

struct ChannelStatsRow {
    uint64_t channel_id = 0;
    uint64_t ops = 0;
    uint64_t bytes = 0;
};

// Delta since the previous collection; window_ns is the elapsed span the
// deltas cover.
struct StageStatsWindow {
    int64_t window_ns = 0;
    std::vector<ChannelStatsRow> rows;
};

// Data-plane interposition point: classifies each managed request into at
// most one channel (token-bucket + FIFO), forwards it to the sink once
// admitted, and tracks descriptor lineage so fd-based requests inherit the
// managed/unmanaged decision of the open that produced them.
//
// submit() is safe from many threads; the control surface (create_channel,
// set_channel_rate, collect_stats) is safe concurrently with traffic.
class Stage {
public:
    Stage(StageConfig cfg, Sink& sink);
    ~Stage();

    Stage(const Stage&) = delete;
    Stage& operator=(const Stage&) = delete;

    // Blocks until the request is admitted (or returns immediately for
    // bypass traffic), applies it to the sink, and reports timing.
    CompletionRecord submit(const Request& req);

    // Control surface. Channels are never removed; a second channel with the
    // same matcher or id is rejected.
    AckStatus create_channel(uint64_t channel_id, MatchGranularity granularity,
                             const std::string& matcher_value, double burst_window_s);
    AckStatus set_channel_rate(uint64_t channel_id, double rate);
    StageStatsWindow collect_stats();

    // Releases every queued submitter (their records come back aborted) and
    // refuses further throttled admissions. Idempotent.
    void shutdown();

    size_t channel_count() const;
    size_t fd_table_size() const;
    bool fd_is_managed(int64_t fd) const;
    uint64_t bypass_ops() const;

private:
    struct Channel {
        Channel(uint64_t id_, int64_t now, double burst_window_s)
            : id(id_), bucket(0.0, now, burst_window_s) {}

        const uint64_t id;
        TokenBucket bucket;  // rate 0 until the first set_rate rule arrives
        std::mutex mu;
        std::condition_variable cv;
        uint64_t next_ticket = 0;
        uint64_t serving = 0;
        bool closed = false;
        uint64_t ops = 0;
        uint64_t bytes = 0;
    };

    struct FdEntry {
        std::string path;
        bool managed = false;
    };

    bool path_is_managed(const std::string& path) const;
    Channel* match_channel(const Request& req);
    bool admit(Channel& ch, double cost, uint64_t counted_bytes);
    static double cost_of(const Request& req);

    StageConfig cfg_;
    Sink& sink_;

    mutable std::shared_mutex channels_mu_;
    std::unordered_map<uint64_t, Channel*> by_matcher_;  // token -> channel
    std::unordered_map<uint64_t, std::unique_ptr<Channel>> by_id_;
    uint8_t granularity_mask_ = 0;

    mutable std::mutex fd_mu_;
    std::unordered_map<int64_t, FdEntry> fds_;

    std::atomic<int64_t> last_collect_ns_;
    std::atomic<uint64_t> bypass_ops_{0};
    std::atomic<bool> closed_{false};
};

}  // namespace fsqos
