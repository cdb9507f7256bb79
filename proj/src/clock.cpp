#include "fsnt/clock.hpp"

namespace fsnt {

Clock& default_clock() {
  static SteadyClock clock;
  return clock;
}

}  // namespace fsnt
