#include "pricelab/calendar.hpp"

#include <charconv>
#include <cstdio>
#include <vector>

#include "pricelab/error.hpp"

namespace pricelab {
namespace {

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  std::size_t begin = 0;
  while (true) {
    auto pos = s.find(sep, begin);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(begin));
      return parts;
    }
    parts.push_back(s.substr(begin, pos - begin));
    begin = pos + 1;
  }
}

Date make_date(int y, int m, int d, std::string_view original) {
  using namespace std::chrono;
  year_month_day ymd{year{y}, month{static_cast<unsigned>(m)},
                     day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) {
    throw ParseError("invalid calendar date: '" + std::string(original) + "'");
  }
  return sys_days{ymd};
}

std::chrono::seconds parse_clock(std::string_view s,
                                 std::string_view original) {
  auto parts = split(s, ':');
  int h = 0, mi = 0, se = 0;
  if (parts.size() < 2 || parts.size() > 3 || !parse_int(parts[0], h) ||
      !parse_int(parts[1], mi) ||
      (parts.size() == 3 && !parse_int(parts[2], se)) || h < 0 || h > 23 ||
      mi < 0 || mi > 59 || se < 0 || se > 60) {
    throw ParseError("invalid time of day in '" + std::string(original) + "'");
  }
  return std::chrono::hours{h} + std::chrono::minutes{mi} +
         std::chrono::seconds{se};
}

}  // namespace

Date parse_date(std::string_view text) {
  auto parts = split(text, '-');
  int y = 0, m = 0, d = 0;
  if (parts.size() != 3 || parts[0].size() != 4 || !parse_int(parts[0], y) ||
      !parse_int(parts[1], m) || !parse_int(parts[2], d)) {
    throw ParseError("expected YYYY-MM-DD date, got '" + std::string(text) +
                     "'");
  }
  return make_date(y, m, d, text);
}

std::string format_date(Date d) {
  std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()));
  return buf;
}

DateTime parse_datetime(std::string_view text) {
  std::string_view s = text;
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);

  auto sep = s.find_first_of(" T");
  std::string_view date_part = s.substr(0, sep);
  std::string_view time_part =
      sep == std::string_view::npos ? std::string_view{} : s.substr(sep + 1);

  Date day;
  if (date_part.find('/') != std::string_view::npos) {
    auto parts = split(date_part, '/');
    int m = 0, d = 0, y = 0;
    if (parts.size() != 3 || !parse_int(parts[0], m) ||
        !parse_int(parts[1], d) || !parse_int(parts[2], y)) {
      throw ParseError("unparseable date '" + std::string(text) + "'");
    }
    if (y < 100) y += 2000;
    day = make_date(y, m, d, text);
  } else {
    try {
      day = parse_date(date_part);
    } catch (const ParseError&) {
      throw ParseError("unparseable date '" + std::string(text) + "'");
    }
  }
  std::chrono::seconds tod{0};
  if (!time_part.empty()) tod = parse_clock(time_part, text);
  return DateTime{day} + tod;
}

std::string format_datetime(DateTime t) {
  const Date d = date_of(t);
  std::chrono::hh_mm_ss hms{t - DateTime{d}};
  char buf[16];
  std::snprintf(buf, sizeof buf, " %02d:%02d:%02d",
                static_cast<int>(hms.hours().count()),
                static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return format_date(d) + buf;
}

int weekday_index(Date d) {
  // iso_encoding: Monday = 1 ... Sunday = 7.
  return static_cast<int>(std::chrono::weekday{d}.iso_encoding()) - 1;
}

int month_index(Date d) {
  return static_cast<int>(
             static_cast<unsigned>(std::chrono::year_month_day{d}.month())) -
         1;
}

}  // namespace pricelab
