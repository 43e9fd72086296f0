#include "fsqos/token_bucket.hpp"

#include <cassert>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fsqos {

namespace {
void check_finite_nonneg(double v, const char* what) {
    if (!std::isfinite(v) || v < 0.0)
        throw std::invalid_argument(std::string(what) + " must be finite and >= 0");
}
}  // namespace

double TokenBucket::capacity_for(double rate, double burst_window_s) {
    double c = rate * burst_window_s;
    return c > 1.0 ? c : 1.0;
}

TokenBucket::TokenBucket(double rate, int64_t now_ns, double burst_window_s) {
    check_finite_nonneg(rate, "rate");
    check_finite_nonneg(burst_window_s, "burst_window_s");
    rate_ = rate;
    burst_window_s_ = burst_window_s;
    capacity_ = capacity_for(rate, burst_window_s);
    tokens_ = capacity_;  // starts full: first burst is admitted immediately
    last_refill_ns_ = now_ns;
}

void TokenBucket::refill_locked(int64_t now_ns) {
    // Time must not run backwards; a violated clock is a caller bug. Release
    // builds clamp instead of corrupting the fill.
    assert(now_ns >= last_refill_ns_ && "monotonic clock violation");
    if (now_ns <= last_refill_ns_) return;
    double dt_s = static_cast<double>(now_ns - last_refill_ns_) * 1e-9;
    tokens_ += rate_ * dt_s;
    if (tokens_ > capacity_) tokens_ = capacity_;
    last_refill_ns_ = now_ns;
}

Grant TokenBucket::try_consume(double cost, int64_t now_ns) {
    if (!std::isfinite(cost) || cost <= 0.0)
        throw std::invalid_argument("cost must be finite and > 0");
    std::lock_guard lk(mu_);
    if (cost > capacity_) return {Grant::Kind::oversize, 0};
    refill_locked(now_ns);
    if (tokens_ >= cost) {
        tokens_ -= cost;
        return {Grant::Kind::granted, 0};
    }
    if (rate_ <= 0.0) return {Grant::Kind::blocked, 0};
    double missing = cost - tokens_;
    double wait_s = missing / rate_;
    auto wait_ns = static_cast<int64_t>(std::ceil(wait_s * 1e9));
    if (wait_ns < 1) wait_ns = 1;
    return {Grant::Kind::wait, wait_ns};
}

void TokenBucket::set_rate(double rate, int64_t now_ns) {
    check_finite_nonneg(rate, "rate");
    std::lock_guard lk(mu_);
    refill_locked(now_ns);  // accrue at the old rate up to the switch point
    rate_ = rate;
    capacity_ = capacity_for(rate, burst_window_s_);
    if (tokens_ > capacity_) tokens_ = capacity_;
}

double TokenBucket::rate() const {
    std::lock_guard lk(mu_);
    return rate_;
}

double TokenBucket::capacity() const {
    std::lock_guard lk(mu_);
    return capacity_;
}

double TokenBucket::fill(int64_t now_ns) {
    std::lock_guard lk(mu_);
    refill_locked(now_ns);
    return tokens_;
}

}  // namespace fsqos
