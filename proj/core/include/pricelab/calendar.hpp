#ifndef PRICELAB_CALENDAR_HPP_
#define PRICELAB_CALENDAR_HPP_

#include <chrono>
#include <string>
#include <string_view>

namespace pricelab {

using Date = std::chrono::sys_days;
using DateTime = std::chrono::sys_seconds;

// "YYYY-MM-DD".
Date parse_date(std::string_view text);
std::string format_date(Date d);

// Accepts "YYYY-MM-DD HH:MM[:SS]" (also with a 'T' separator) and the
// spreadsheet export form "M/D/YYYY H:MM". Throws ParseError otherwise.
DateTime parse_datetime(std::string_view text);
std::string format_datetime(DateTime t);

inline Date date_of(DateTime t) {
  return std::chrono::floor<std::chrono::days>(t);
}

// Monday = 0 ... Sunday = 6.
int weekday_index(Date d);
// January = 0 ... December = 11.
int month_index(Date d);

inline int days_between(Date from, Date to) {
  return static_cast<int>((to - from).count());
}

inline Date add_days(Date d, int n) { return d + std::chrono::days{n}; }

// Inclusive calendar range.
struct DateRange {
  Date start;
  Date end;

  int num_days() const { return days_between(start, end) + 1; }
  bool contains(Date d) const { return d >= start && d <= end; }
  bool valid() const { return start <= end; }

  friend bool operator==(const DateRange&, const DateRange&) = default;
};

}  // namespace pricelab

#endif  // PRICELAB_CALENDAR_HPP_
