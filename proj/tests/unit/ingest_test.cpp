#include "pricelab/ingest.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include <gtest/gtest.h>

#include "pricelab/error.hpp"

namespace pricelab {
namespace {

constexpr const char* kHeader =
    "Invoice,StockCode,Description,Quantity,InvoiceDate,Price,Customer ID,Country\n";

LoadResult parse(const std::string& body) {
  std::stringstream ss(std::string(kHeader) + body);
  return parse_transactions(ss);
}

Transaction tx(std::string invoice, std::string sku, std::int64_t q, double p,
               std::string when, std::optional<std::string> customer = "1") {
  Transaction t;
  t.invoice_id = std::move(invoice);
  t.sku = std::move(sku);
  t.quantity = q;
  t.unit_price = p;
  t.timestamp = parse_datetime(when);
  t.customer_id = std::move(customer);
  return t;
}

TEST(LoadTransactionsTest, WellFormedFiveRows) {
  const auto r = parse(
      "1,A,x,2,2011-07-01 10:00:00,1.5,13085.0,UK\n"
      "1,B,\"y, z\",1,2011-07-01 10:00:00,2.5,13085.0,UK\n"
      "2,A,x,3,2011-07-02 11:00:00,1.5,12000,UK\n"
      "3,C,x,1,7/3/2011 9:05,4.25,12001,France\n"
      "4,A,x,6,2011-07-04 12:30:00,1.25,12002,UK\n");
  ASSERT_EQ(r.rows.size(), 5u);
  EXPECT_TRUE(r.rejects.empty());
  EXPECT_EQ(r.rows[0].customer_id.value(), "13085");
  EXPECT_EQ(r.rows[1].unit_price, 2.5);
  EXPECT_EQ(r.rows[3].country, "France");
  EXPECT_EQ(format_date(r.rows[3].day()), "2011-07-03");
}

TEST(LoadTransactionsTest, EmptyCustomerIdIsRejected) {
  const auto r = parse(
      "1,A,x,2,2011-07-01 10:00:00,1.5,,UK\n"
      "2,A,x,2,2011-07-01 10:00:00,1.5,12,UK\n");
  ASSERT_EQ(r.rows.size(), 1u);
  ASSERT_EQ(r.rejects.size(), 1u);
  EXPECT_EQ(r.rejects[0].row_index, 1u);
  EXPECT_EQ(r.rejects[0].reason, "missing_customer_id");
}

TEST(LoadTransactionsTest, MalformedNumbersAreRejectedNotDropped) {
  const auto r = parse(
      "1,A,x,two,2011-07-01 10:00:00,1.5,1,UK\n"
      "2,A,x,2,2011-07-01 10:00:00,abc,1,UK\n"
      "3,A,x\n");
  EXPECT_TRUE(r.rows.empty());
  ASSERT_EQ(r.rejects.size(), 3u);
  EXPECT_EQ(r.rejects[0].reason, "bad_quantity");
  EXPECT_EQ(r.rejects[1].reason, "bad_price");
  EXPECT_EQ(r.rejects[2].reason, "short_row");
}

TEST(LoadTransactionsTest, BadDateIsHardErrorWithRowIndex) {
  try {
    parse("1,A,x,2,2011-07-01 10:00:00,1.5,1,UK\n2,A,x,2,not-a-date,1.5,1,UK\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos) << e.what();
  }
}

TEST(LoadTransactionsTest, MissingColumnIsHardError) {
  std::stringstream ss("Invoice,StockCode,Quantity,InvoiceDate,Customer ID\n");
  try {
    parse_transactions(ss);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("Price"), std::string::npos);
  }
}

TEST(LoadTransactionsTest, MissingFileNamesThePath) {
  try {
    load_transactions("/nonexistent/retail.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/retail.csv"), std::string::npos);
  }
}

TEST(CleanTest, DropsCancellationsAndNegatives) {
  const std::vector<Transaction> rows = {
      tx("1", "A", 2, 1.0, "2011-07-01 10:00:00"),
      tx("C2", "A", 2, 1.0, "2011-07-01 10:00:00"),
      tx("3", "B", -1, 1.0, "2011-07-01 10:00:00"),
      tx("4", "B", 1, 1.0, "2011-07-01 10:00:00"),
      tx("5", "C", 1, 2.0, "2011-07-01 10:00:00")};
  const auto out = clean(rows);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].invoice_id, "1");
  EXPECT_EQ(out[1].invoice_id, "4");
  EXPECT_EQ(out[2].invoice_id, "5");
}

TEST(CleanTest, EmptyAndIdempotent) {
  EXPECT_TRUE(clean({}).empty());
  const std::vector<Transaction> rows = {
      tx("1", "A", 2, 1.0, "2011-07-01 10:00:00"),
      tx("2", "A", 2, 0.0, "2011-07-01 10:00:00"),
      tx("3", "A", 2, 1.0, "2011-07-01 10:00:00", std::nullopt)};
  const auto once = clean(rows);
  const auto twice = clean(once);
  ASSERT_EQ(once.size(), 1u);
  ASSERT_EQ(twice.size(), once.size());
  EXPECT_EQ(twice[0].invoice_id, once[0].invoice_id);
}

std::vector<Transaction> ranked_fixture() {
  // A: 5 lines, B: 3 lines, C: 1 line.
  std::vector<Transaction> rows;
  for (int i = 0; i < 5; ++i) rows.push_back(tx(std::to_string(i), "A", 1 + i, 1.0 + 0.1 * i, "2011-07-0" + std::to_string(1 + i) + " 10:00:00"));
  for (int i = 0; i < 3; ++i) rows.push_back(tx(std::to_string(10 + i), "B", 2, 3.0, "2011-07-02 10:00:00"));
  rows.push_back(tx("20", "C", 1, 9.0, "2011-07-03 10:00:00"));
  return rows;
}

TrimParams params(std::size_t top_n) {
  TrimParams p;
  p.window = {parse_date("2011-07-01"), parse_date("2011-07-10")};
  p.top_n = top_n;
  return p;
}

TEST(TrimTest, RanksByLineCount) {
  const auto r = trim(ranked_fixture(), params(2));
  ASSERT_EQ(r.catalog.size(), 2u);
  EXPECT_EQ(r.catalog.skus[0], "A");
  EXPECT_EQ(r.catalog.skus[1], "B");
  EXPECT_EQ(r.catalog.activity[0], 5u);
  EXPECT_EQ(r.rows.size(), 8u);
}

TEST(TrimTest, TiesBreakBySkuAscending) {
  std::vector<Transaction> rows = {tx("1", "Z", 1, 1.0, "2011-07-01 10:00:00"),
                                   tx("2", "M", 1, 1.0, "2011-07-01 10:00:00"),
                                   tx("3", "Q", 1, 1.0, "2011-07-01 10:00:00")};
  const auto r = trim(rows, params(3));
  EXPECT_EQ(r.catalog.skus, (std::vector<std::string>{"M", "Q", "Z"}));
}

TEST(TrimTest, SingleSku) {
  std::vector<Transaction> rows = {tx("1", "A", 1, 2.0, "2011-07-01 10:00:00")};
  const auto r = trim(rows, params(1));
  ASSERT_EQ(r.catalog.size(), 1u);
  EXPECT_EQ(r.catalog.skus[0], "A");
}

TEST(TrimTest, ReferencePriceIsMedianAndCostFollowsRatio) {
  const auto r = trim(ranked_fixture(), params(3));
  // A prices 1.0 1.1 1.2 1.3 1.4 -> median 1.2
  EXPECT_NEAR(r.catalog.reference_price[0], 1.2, 1e-12);
  EXPECT_NEAR(r.catalog.unit_cost[0], 0.7 * 1.2, 1e-12);
  for (std::size_t i = 0; i < r.catalog.size(); ++i) {
    EXPECT_GT(r.catalog.unit_cost[i], 0.0);
    EXPECT_LT(r.catalog.unit_cost[i], r.catalog.reference_price[i]);
  }
}

TEST(TrimTest, PanelCoversWindowAndSumsMatch) {
  const auto r = trim(ranked_fixture(), params(3));
  EXPECT_EQ(r.panel.num_days(), 10);
  EXPECT_EQ(r.panel.quantity(0, 9), 0);  // explicit zero day
  EXPECT_TRUE(std::isnan(r.panel.mean_price(0, 9)));
  for (std::size_t i = 0; i < r.catalog.size(); ++i) {
    std::int64_t expected = 0;
    for (const auto& t : r.rows) {
      if (t.sku == r.catalog.skus[i]) expected += t.quantity;
    }
    EXPECT_EQ(r.panel.total_quantity(i), expected);
  }
  EXPECT_EQ(r.panel.quantity(1, 1), 6);
  EXPECT_EQ(r.panel.invoice_count(1, 1), 3);
}

TEST(TrimTest, Errors) {
  EXPECT_THROW(trim(ranked_fixture(), params(0)), Error);
  try {
    trim(ranked_fixture(), params(4));
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("3 distinct"), std::string::npos) << e.what();
  }
  TrimParams late = params(1);
  late.window = {parse_date("2012-01-01"), parse_date("2012-01-31")};
  EXPECT_THROW(trim(ranked_fixture(), late), Error);
}

TEST(TrimTest, ReferenceUntilExcludesLaterLines) {
  TrimParams p = params(1);
  p.reference_until = parse_date("2011-07-03");
  const auto r = trim(ranked_fixture(), p);
  // Only 1.0 and 1.1 precede the cut.
  EXPECT_NEAR(r.catalog.reference_price[0], 1.05, 1e-12);
}

TEST(SummaryTest, CountsDistinctInvoicesAndCustomers) {
  std::vector<Transaction> rows = {tx("1", "A", 1, 1.0, "2011-07-01 10:00:00", "7"),
                                   tx("1", "B", 1, 1.0, "2011-07-01 10:00:00", "7"),
                                   tx("2", "A", 1, 1.0, "2011-07-01 10:00:00", "8")};
  const auto s = summarize(rows);
  EXPECT_EQ(s.transactions, 3u);
  EXPECT_EQ(s.invoices, 2u);
  EXPECT_EQ(s.customers, 2u);
  EXPECT_EQ(s.skus, 2u);
}

TEST(SerializationTest, CatalogAndPanelRoundTrip) {
  const auto r = trim(ranked_fixture(), params(3));
  const auto dir = std::filesystem::temp_directory_path() / "pricelab_ingest_rt";
  std::filesystem::create_directories(dir);
  write_catalog_csv(r.catalog, dir / "catalog.csv");
  write_panel_csv(r.panel, r.catalog, dir / "panel.csv");
  const Catalog c = read_catalog_csv(dir / "catalog.csv");
  EXPECT_EQ(c.skus, r.catalog.skus);
  EXPECT_EQ(c.reference_price, r.catalog.reference_price);
  EXPECT_EQ(c.unit_cost, r.catalog.unit_cost);
  EXPECT_EQ(c.window, r.catalog.window);
  const SalesPanel p = read_panel_csv(dir / "panel.csv", c);
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (int d = 0; d < p.num_days(); ++d) {
      EXPECT_EQ(p.quantity(i, d), r.panel.quantity(i, d));
      EXPECT_EQ(p.invoice_count(i, d), r.panel.invoice_count(i, d));
    }
  }
  write_transactions_csv(r.rows, dir / "tx.csv");
  const auto back = load_transactions(dir / "tx.csv");
  ASSERT_EQ(back.rows.size(), r.rows.size());
  EXPECT_EQ(back.rows[3].unit_price, r.rows[3].unit_price);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace pricelab
