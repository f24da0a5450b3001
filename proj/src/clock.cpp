#include "deskqa/clock.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <ctime>
#include <memory>

#include "deskqa/error.hpp"

namespace deskqa {

Timestamp now_micros() {
  using namespace std::chrono;
  return duration_cast<microseconds>(system_clock::now().time_since_epoch()).count();
}

std::string format_rfc3339(Timestamp ts) {
  std::time_t secs = static_cast<std::time_t>(ts / 1000000);
  long micros = static_cast<long>(ts % 1000000);
  if (micros < 0) {
    micros += 1000000;
    --secs;
  }
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%06ldZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, micros);
  return buf;
}

Timestamp parse_rfc3339(const std::string& text) {
  std::tm tm{};
  int year = 0, mon = 0, day = 0, hour = 0, min = 0, sec = 0;
  int consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &year, &mon, &day, &hour, &min, &sec, &consumed) < 6) {
    throw Error(ErrorCode::ParseError, "bad RFC3339 timestamp: " + text);
  }
  long micros = 0;
  std::size_t pos = static_cast<std::size_t>(consumed);
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    long scale = 100000;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      micros += (text[pos] - '0') * scale;
      scale /= 10;
      ++pos;
    }
  }
  tm.tm_year = year - 1900;
  tm.tm_mon = mon - 1;
  tm.tm_mday = day;
  tm.tm_hour = hour;
  tm.tm_min = min;
  tm.tm_sec = sec;
  std::time_t secs = timegm(&tm);
  return static_cast<Timestamp>(secs) * 1000000 + micros;
}

Clock system_clock() {
  // Strictly increasing so that updated_at > created_at holds even for
  // writes landing within the same microsecond.
  auto last = std::make_shared<std::atomic<Timestamp>>(0);
  return [last] {
    Timestamp prev = last->load();
    Timestamp t = 0;
    do {
      t = std::max(now_micros(), prev + 1);
    } while (!last->compare_exchange_weak(prev, t));
    return t;
  };
}

Clock manual_clock(Timestamp start, Timestamp step) {
  auto cur = std::make_shared<Timestamp>(start - step);
  return [cur, step] {
    *cur += step;
    return *cur;
  };
}

}  // namespace deskqa
