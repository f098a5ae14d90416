#include <sstream>

#include <gtest/gtest.h>

#include "pricelab/calendar.hpp"
#include "pricelab/csv.hpp"
#include "pricelab/error.hpp"

namespace pricelab {
namespace {

TEST(CalendarTest, ParsesAndFormatsDates) {
  const Date d = parse_date("2011-11-21");
  EXPECT_EQ(format_date(d), "2011-11-21");
  EXPECT_EQ(weekday_index(d), 0);  // a Monday
  EXPECT_EQ(month_index(d), 10);
  EXPECT_EQ(days_between(parse_date("2011-11-21"), parse_date("2011-12-09")), 18);
  EXPECT_THROW(parse_date("2011-02-30"), ParseError);
  EXPECT_THROW(parse_date("yesterday"), ParseError);
}

TEST(CalendarTest, ParsesBothDatetimeLayouts) {
  EXPECT_EQ(format_datetime(parse_datetime("2010-12-01 07:45:00")),
            "2010-12-01 07:45:00");
  EXPECT_EQ(format_datetime(parse_datetime("12/1/2010 7:45")),
            "2010-12-01 07:45:00");
  EXPECT_EQ(format_date(date_of(parse_datetime("2011-07-01T23:59:59"))),
            "2011-07-01");
  EXPECT_THROW(parse_datetime("2011-13-01 00:00:00"), ParseError);
}

TEST(CalendarTest, DateRange) {
  const DateRange r{parse_date("2011-07-01"), parse_date("2011-12-09")};
  EXPECT_EQ(r.num_days(), 162);
  EXPECT_TRUE(r.contains(parse_date("2011-07-01")));
  EXPECT_FALSE(r.contains(parse_date("2011-12-10")));
  EXPECT_FALSE((DateRange{r.end, r.start}).valid());
}

TEST(CsvTest, QuotedFieldsRoundTrip) {
  std::stringstream ss;
  csv::write_record(ss, {"a", "b,c", "say \"hi\"", "line\nbreak", ""});
  std::vector<std::string> f;
  ASSERT_TRUE(csv::read_record(ss, f));
  ASSERT_EQ(f.size(), 5u);
  EXPECT_EQ(f[1], "b,c");
  EXPECT_EQ(f[2], "say \"hi\"");
  EXPECT_EQ(f[3], "line\nbreak");
  EXPECT_EQ(f[4], "");
  EXPECT_FALSE(csv::read_record(ss, f));
}

TEST(CsvTest, CrLfAndBom) {
  std::stringstream ss("\xEF\xBB\xBFInvoice,Price\r\n1,2\r\n");
  std::vector<std::string> h, f;
  ASSERT_TRUE(csv::read_record(ss, h));
  EXPECT_EQ(csv::column_index(h, "Invoice"), 0);
  EXPECT_EQ(csv::column_index(h, "Price"), 1);
  EXPECT_EQ(csv::column_index(h, "Nope"), -1);
  ASSERT_TRUE(csv::read_record(ss, f));
  EXPECT_EQ(f[1], "2");
}

TEST(CsvTest, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456789.125, -2.5}) {
    EXPECT_EQ(std::stod(csv::format_double(v)), v);
  }
}

}  // namespace
}  // namespace pricelab
