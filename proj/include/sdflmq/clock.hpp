#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>

namespace sdflmq {

using TimePoint = std::chrono::steady_clock::time_point;
using Duration = std::chrono::steady_clock::duration;

// Time source used by everything that keeps deadlines. Tests inject a ManualClock.
class Clock {
public:
    virtual ~Clock() = default;
    virtual TimePoint now() const = 0;
};

class SteadyClock final : public Clock {
public:
    TimePoint now() const override { return std::chrono::steady_clock::now(); }

    static SteadyClock& instance() {
        static SteadyClock clock;
        return clock;
    }
};

// Manually advanced clock, safe to read from multiple threads.
class ManualClock final : public Clock {
public:
    explicit ManualClock(TimePoint start = TimePoint{}) : nanos_(to_nanos(start)) {}

    TimePoint now() const override {
        return TimePoint(std::chrono::nanoseconds(nanos_.load(std::memory_order_acquire)));
    }

    void advance(Duration d) {
        nanos_.fetch_add(std::chrono::duration_cast<std::chrono::nanoseconds>(d).count(),
                         std::memory_order_acq_rel);
    }

    void set(TimePoint t) { nanos_.store(to_nanos(t), std::memory_order_release); }

private:
    static std::int64_t to_nanos(TimePoint t) {
        return std::chrono::duration_cast<std::chrono::nanoseconds>(t.time_since_epoch()).count();
    }

    std::atomic<std::int64_t> nanos_;
};

} // namespace sdflmq
