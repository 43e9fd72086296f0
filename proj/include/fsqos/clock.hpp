#pragma once

#include <chrono>
#include <cstdint>
#include <thread>

namespace fsqos {

// Monotonic nanoseconds. All rate-limiter and controller timing uses this
// clock; wall time appears only in log output.
inline int64_t now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

inline void sleep_until_ns(int64_t t_ns) {
    std::this_thread::sleep_until(
        std::chrono::steady_clock::time_point(std::chrono::nanoseconds(t_ns)));
}

inline void sleep_ns(int64_t d_ns) {
    if (d_ns > 0) std::this_thread::sleep_for(std::chrono::nanoseconds(d_ns));
}

}  // namespace fsqos
