#pragma once

#include <cstdint>
#include <mutex>

namespace fsqos {

// Outcome of a single admission attempt.
struct Grant {
    enum class Kind : uint8_t {
        granted,    // cost deducted
        wait,       // insufficient fill; retry after wait_ns
        blocked,    // rate is zero; only a rate change can unblock
        oversize,   // cost exceeds capacity; caller must split the request
    };
    Kind kind;
    int64_t wait_ns = 0;

    explicit operator bool() const { return kind == Kind::granted; }
};

// Token bucket with lazy refill. Callers pass monotonic now_ns explicitly so
// tests can drive simulated time. All methods are safe under concurrent
// invocation; each is linearizable (one lock, no partial refills observable).
//
// capacity = max(1, rate * burst_window). The floor keeps a positive-rate
// bucket from rounding to an unpassable zero-capacity gate.
class TokenBucket {
public:
    static constexpr double kDefaultBurstWindowS = 0.1;

    // rate in tokens/s, may be 0 (fully closed until set_rate).
    // Throws std::invalid_argument on negative or non-finite arguments.
    explicit TokenBucket(double rate, int64_t now_ns,
                         double burst_window_s = kDefaultBurstWindowS);

    // Attempts to deduct cost (> 0). Never blocks. wait_ns on Kind::wait is
    // the refill time for the missing fill at the current rate; it is a hint,
    // not a reservation.
    Grant try_consume(double cost, int64_t now_ns);

    // Refills at the old rate up to now_ns, then applies the new rate and
    // recomputes capacity. Fill is preserved, clamped to the new capacity.
    // Throws std::invalid_argument on negative or non-finite rate.
    void set_rate(double rate, int64_t now_ns);

    double rate() const;
    double capacity() const;
    // Fill after refilling to now_ns (observation only; mutates refill state
    // like any other access).
    double fill(int64_t now_ns);

private:
    void refill_locked(int64_t now_ns);
    static double capacity_for(double rate, double burst_window_s);

    mutable std::mutex mu_;
    double rate_;
    double capacity_;
    double tokens_;
    int64_t last_refill_ns_;
    double burst_window_s_;
};

}  // namespace fsqos
