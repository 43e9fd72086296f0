#include "fsqos/stage.hpp"

#include <chrono>

#include "fsqos/clock.hpp"

namespace fsqos {

namespace {
// Trailing slashes make prefix matching ambiguous; strip them up front.
std::string normalize_mountpoint(std::string mp) {
    while (mp.size() > 1 && mp.back() == '/') mp.pop_back();
    return mp;
}
}  // namespace

Stage::Stage(StageConfig cfg, Sink& sink) : cfg_(std::move(cfg)), sink_(sink) {
    for (auto& mp : cfg_.mountpoints) mp = normalize_mountpoint(std::move(mp));
    last_collect_ns_.store(now_ns(), std::memory_order_relaxed);
}

Stage::~Stage() { shutdown(); }

bool Stage::path_is_managed(const std::string& path) const {
    for (const auto& mp : cfg_.mountpoints) {
        if (mp == "/") {
            if (!path.empty() && path.front() == '/') return true;
            continue;
        }
        if (path.size() < mp.size()) continue;
        if (path.compare(0, mp.size(), mp) != 0) continue;
        // Component boundary: exact match or a '/' right after the prefix,
        // so "/scratch" does not capture "/scratchy".
        if (path.size() == mp.size() || path[mp.size()] == '/') return true;
    }
    return false;
}

double Stage::cost_of(const Request& req) {
    if (op_class_of(req.op) == OpClass::data) {
        // A zero-length data op still occupies one admission slot.
        return req.size > 0 ? static_cast<double>(req.size) : 1.0;
    }
    return 1.0;
}

Stage::Channel* Stage::match_channel(const Request& req) {
    // Probes granularities most-specific first; the first hit wins, which
    // makes multi-granularity rule sets deterministic.
    for (int g = 0; g < kGranularityCount; ++g) {
        if (!(granularity_mask_ & (1u << g))) continue;
        ClassifierToken tok = classify(req, static_cast<MatchGranularity>(g));
        auto it = by_matcher_.find(tok.value);
        if (it != by_matcher_.end()) return it->second;
    }
    return nullptr;
}

bool Stage::admit(Channel& ch, double cost, uint64_t counted_bytes) {
    std::unique_lock lk(ch.mu);
    const uint64_t my = ch.next_ticket++;
    double remaining = cost;
    while (!ch.closed) {
        if (my != ch.serving) {
            ch.cv.wait(lk);
            continue;
        }
        // At the head of the FIFO. Costs above bucket capacity are drawn in
        // capacity-sized chunks; the head position is held across chunks so
        // an oversized request cannot be starved or overtaken.
        int64_t now = now_ns();
        double cap = ch.bucket.capacity();
        double chunk = remaining < cap ? remaining : cap;
        Grant g = ch.bucket.try_consume(chunk, now);
        switch (g.kind) {
            case Grant::Kind::granted:
                remaining -= chunk;
                if (remaining <= 1e-9) {
                    ch.ops += 1;
                    ch.bytes += counted_bytes;
                    ++ch.serving;
                    lk.unlock();
                    ch.cv.notify_all();
                    return true;
                }
                break;
            case Grant::Kind::wait:
                ch.cv.wait_for(lk, std::chrono::nanoseconds(g.wait_ns));
                break;
            case Grant::Kind::blocked:
                ch.cv.wait(lk);  // a rate change or shutdown notifies
                break;
            case Grant::Kind::oversize:
                // Capacity shrank between the chunk computation and the
                // draw (concurrent set_rate); recompute and retry.
                break;
        }
    }
    if (my == ch.serving) {
        ++ch.serving;
        lk.unlock();
        ch.cv.notify_all();
    }
    return false;
}

CompletionRecord Stage::submit(const Request& req) {
    CompletionRecord rec;
    rec.enqueued_ns = now_ns();

    bool managed;
    if (req.has_path()) {
        managed = path_is_managed(req.path());
    } else {
        std::lock_guard lk(fd_mu_);
        auto it = fds_.find(req.fd());
        managed = it != fds_.end() && it->second.managed;
    }

    Channel* ch = nullptr;
    if (managed && !closed_.load(std::memory_order_relaxed)) {
        std::shared_lock lk(channels_mu_);
        ch = match_channel(req);
        if (ch) {
            uint64_t counted = op_class_of(req.op) == OpClass::data ? req.size : 0;
            if (!admit(*ch, cost_of(req), counted)) {
                rec.aborted = true;
                rec.granted_ns = now_ns();
                return rec;
            }
            rec.channel_id = ch->id;
        }
    }
    if (!ch) {
        // Fail-open: unmanaged paths and managed traffic with no installed
        // channel reach the sink unthrottled and uncounted.
        bypass_ops_.fetch_add(1, std::memory_order_relaxed);
    }
    rec.granted_ns = ch ? now_ns() : rec.enqueued_ns;

    rec.sink = sink_.apply(req);

    if (req.op == OpType::open && rec.sink.status == 0 && rec.sink.fd >= 0) {
        std::lock_guard lk(fd_mu_);
        fds_[rec.sink.fd] = FdEntry{req.path(), managed};
    } else if (req.op == OpType::close && !req.has_path()) {
        // The descriptor is spent whether or not the sink close succeeded.
        std::lock_guard lk(fd_mu_);
        fds_.erase(req.fd());
    }
    return rec;
}

AckStatus Stage::create_channel(uint64_t channel_id, MatchGranularity granularity,
                                const std::string& matcher_value, double burst_window_s) {
    if (channel_id == 0) return AckStatus::bad_argument;  // 0 is the presence marker
    auto tok = make_matcher(granularity, matcher_value);
    if (!tok || burst_window_s < 0.0) return AckStatus::bad_argument;

    std::unique_lock lk(channels_mu_);
    if (by_id_.count(channel_id) || by_matcher_.count(tok->value))
        return AckStatus::duplicate_channel;
    auto ch = std::make_unique<Channel>(channel_id, now_ns(), burst_window_s);
    by_matcher_[tok->value] = ch.get();
    by_id_[channel_id] = std::move(ch);
    granularity_mask_ |= static_cast<uint8_t>(1u << static_cast<int>(granularity));
    return AckStatus::ok;
}

AckStatus Stage::set_channel_rate(uint64_t channel_id, double rate) {
    std::shared_lock lk(channels_mu_);
    auto it = by_id_.find(channel_id);
    if (it == by_id_.end()) return AckStatus::unknown_channel;
    Channel& ch = *it->second;
    if (rate < 0.0) return AckStatus::bad_argument;
    {
        std::lock_guard cl(ch.mu);
        ch.bucket.set_rate(rate, now_ns());
    }
    ch.cv.notify_all();  // waiters re-evaluate their hints at the new rate
    return AckStatus::ok;
}

StageStatsWindow Stage::collect_stats() {
    StageStatsWindow w;
    int64_t now = now_ns();
    w.window_ns = now - last_collect_ns_.exchange(now, std::memory_order_relaxed);
    std::shared_lock lk(channels_mu_);
    w.rows.reserve(by_id_.size());
    for (auto& [id, ch] : by_id_) {
        std::lock_guard cl(ch->mu);
        w.rows.push_back({id, ch->ops, ch->bytes});
        ch->ops = 0;
        ch->bytes = 0;
    }
    return w;
}

void Stage::shutdown() {
    closed_.store(true, std::memory_order_relaxed);
    std::shared_lock lk(channels_mu_);
    for (auto& [id, ch] : by_id_) {
        {
            std::lock_guard cl(ch->mu);
            ch->closed = true;
        }
        ch->cv.notify_all();
    }
}

size_t Stage::channel_count() const {
    std::shared_lock lk(channels_mu_);
    return by_id_.size();
}

size_t Stage::fd_table_size() const {
    std::lock_guard lk(fd_mu_);
    return fds_.size();
}

bool Stage::fd_is_managed(int64_t fd) const {
    std::lock_guard lk(fd_mu_);
    auto it = fds_.find(fd);
    return it != fds_.end() && it->second.managed;
}

uint64_t Stage::bypass_ops() const { return bypass_ops_.load(std::memory_order_relaxed); }

}  // namespace fsqos
