#pragma once

#include <charconv>
#include <chrono>
#include <cstdio>
#include <string>
#include <string_view>

#include "memtier/errors.hpp"

namespace memtier {

using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

namespace detail {

class Cursor {
 public:
  explicit Cursor(std::string_view text) : text_(text) {}

  bool done() const { return pos_ >= text_.size(); }
  char peek() const { return done() ? '\0' : text_[pos_]; }
  bool accept(char c) {
    if (peek() != c) return false;
    ++pos_;
    return true;
  }
  void skip_spaces() {
    while (!done() && text_[pos_] == ' ') ++pos_;
  }
  // Reads exactly `width` digits.
  bool digits(int width, int& out) {
    if (pos_ + static_cast<std::size_t>(width) > text_.size()) return false;
    const char* first = text_.data() + pos_;
    for (int i = 0; i < width; ++i) {
      if (first[i] < '0' || first[i] > '9') return false;
    }
    std::from_chars(first, first + width, out);
    pos_ += static_cast<std::size_t>(width);
    return true;
  }
  std::string_view rest() const { return text_.substr(pos_); }
  void advance(std::size_t n) { pos_ += n; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

inline Timestamp make_timestamp(int y, int mo, int d, int h, int mi, int s, int ms,
                                std::string_view original) {
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)},
                           day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) {
    throw ValidationError("timestamp out of range: '" + std::string(original) + "'");
  }
  return time_point_cast<milliseconds>(sys_days{ymd}) + hours{h} + minutes{mi} + seconds{s} +
         milliseconds{ms};
}

[[noreturn]] inline void bad_timestamp(std::string_view text) {
  throw ValidationError("malformed timestamp: '" + std::string(text) + "'");
}

}  // namespace detail

/// Parses an ISO-8601 instant: `YYYY-MM-DD[(T| )hh:mm[:ss[.fff]]][Z|±hh:mm]`.
/// A missing offset is read as UTC. Fractional seconds beyond milliseconds are truncated.
inline Timestamp parse_timestamp(std::string_view text) {
  detail::Cursor c(text);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0, ms = 0;
  if (!c.digits(4, y) || !c.accept('-') || !c.digits(2, mo) || !c.accept('-') ||
      !c.digits(2, d)) {
    detail::bad_timestamp(text);
  }
  if (c.accept('T') || c.accept(' ')) {
    if (!c.digits(2, h) || !c.accept(':') || !c.digits(2, mi)) detail::bad_timestamp(text);
    if (c.accept(':')) {
      if (!c.digits(2, s)) detail::bad_timestamp(text);
      if (c.accept('.')) {
        int scale = 100;
        bool any = false;
        while (!c.done() && c.peek() >= '0' && c.peek() <= '9') {
          ms += (c.peek() - '0') * scale;
          scale /= 10;
          c.advance(1);
          any = true;
        }
        if (!any) detail::bad_timestamp(text);
      }
    }
  }
  int offset_minutes = 0;
  if (c.accept('Z') || c.accept('z')) {
  } else if (c.peek() == '+' || c.peek() == '-') {
    const int sign = c.peek() == '-' ? -1 : 1;
    c.advance(1);
    int oh = 0, om = 0;
    if (!c.digits(2, oh)) detail::bad_timestamp(text);
    c.accept(':');
    if (!c.digits(2, om)) detail::bad_timestamp(text);
    offset_minutes = sign * (oh * 60 + om);
  }
  if (!c.done()) detail::bad_timestamp(text);
  return detail::make_timestamp(y, mo, d, h, mi, s, ms, text) -
         std::chrono::minutes{offset_minutes};
}

/// Parses the haystack date style used by long-memory QA datasets,
/// e.g. `2023/05/20 (Sat) 02:21`. ISO-8601 input is accepted as well.
inline Timestamp parse_dataset_date(std::string_view text) {
  detail::Cursor c(text);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0;
  if (!c.digits(4, y) || !c.accept('/')) return parse_timestamp(text);
  if (!c.digits(2, mo) || !c.accept('/') || !c.digits(2, d)) detail::bad_timestamp(text);
  c.skip_spaces();
  if (c.accept('(')) {
    while (!c.done() && c.peek() != ')') c.advance(1);
    if (!c.accept(')')) detail::bad_timestamp(text);
  }
  c.skip_spaces();
  if (!c.done()) {
    if (!c.digits(2, h) || !c.accept(':') || !c.digits(2, mi)) detail::bad_timestamp(text);
  }
  if (!c.done()) detail::bad_timestamp(text);
  return detail::make_timestamp(y, mo, d, h, mi, 0, 0, text);
}

/// `YYYY-MM-DDThh:mm:ssZ`, with `.mmm` inserted only when the instant has a millisecond part.
inline std::string format_timestamp(Timestamp ts) {
  using namespace std::chrono;
  const auto day_point = floor<days>(ts);
  const year_month_day ymd{day_point};
  const hh_mm_ss tod{ts - day_point};
  char buf[40];
  const auto ms = tod.subseconds().count();
  if (ms != 0) {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lld.%03lldZ",
                  static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()), static_cast<long long>(tod.hours().count()),
                  static_cast<long long>(tod.minutes().count()),
                  static_cast<long long>(tod.seconds().count()), static_cast<long long>(ms));
  } else {
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lldZ",
                  static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()), static_cast<long long>(tod.hours().count()),
                  static_cast<long long>(tod.minutes().count()),
                  static_cast<long long>(tod.seconds().count()));
  }
  return buf;
}

/// UTC calendar day, `YYYY-MM-DD`; names the daily episodic file.
inline std::string day_key(Timestamp ts) { return format_timestamp(ts).substr(0, 10); }

/// Age of `then` measured at `as_of`, in fractional days. Negative when `then` is in the future.
inline double age_days(Timestamp then, Timestamp as_of) {
  using days_f = std::chrono::duration<double, std::ratio<86400>>;
  return std::chrono::duration_cast<days_f>(as_of - then).count();
}

inline Timestamp now_utc() {
  return std::chrono::time_point_cast<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

}  // namespace memtier
