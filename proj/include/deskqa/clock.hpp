#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>

namespace deskqa {

/// Microseconds since the Unix epoch, UTC.
using Timestamp = std::int64_t;

Timestamp now_micros();
std::string format_rfc3339(Timestamp ts);
Timestamp parse_rfc3339(const std::string& text);

using Clock = std::function<Timestamp()>;
Clock system_clock();

/// Deterministic clock for tests: starts at `start` and advances by `step`
/// on every read.
Clock manual_clock(Timestamp start, Timestamp step = 1000);

}  // namespace deskqa
