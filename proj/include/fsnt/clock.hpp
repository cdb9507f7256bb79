#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>

namespace fsnt {

// Monotonic time source, injectable so timing-dependent code can be tested
// against a deterministic clock.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::chrono::nanoseconds now() = 0;

  double seconds_since(std::chrono::nanoseconds start) {
    return std::chrono::duration<double>(now() - start).count();
  }
};

class SteadyClock final : public Clock {
 public:
  std::chrono::nanoseconds now() override {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
        std::chrono::steady_clock::now().time_since_epoch());
  }
};

// Returns the current fake time, then advances it by `tick` on every read.
class FakeClock final : public Clock {
 public:
  explicit FakeClock(std::chrono::nanoseconds tick = std::chrono::nanoseconds{0})
      : tick_(tick.count()) {}

  std::chrono::nanoseconds now() override {
    return std::chrono::nanoseconds{now_.fetch_add(tick_)};
  }
  void advance(std::chrono::nanoseconds d) { now_.fetch_add(d.count()); }

 private:
  std::atomic<std::int64_t> now_{0};
  std::int64_t tick_;
};

// Process-wide real clock.
Clock& default_clock();

}  // namespace fsnt
