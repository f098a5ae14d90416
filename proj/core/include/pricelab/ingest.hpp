#ifndef PRICELAB_INGEST_HPP_
#define PRICELAB_INGEST_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pricelab/calendar.hpp"

namespace pricelab {

// One invoice line of the Online Retail II layout.
struct Transaction {
  std::string invoice_id;
  std::string sku;
  std::int64_t quantity = 0;
  double unit_price = 0.0;
  DateTime timestamp{};
  std::optional<std::string> customer_id;
  std::string country;

  Date day() const { return date_of(timestamp); }
};

struct RejectedRow {
  std::size_t row_index = 0;  // 1-based data row, header excluded
  std::string reason;         // machine-readable reason code
  std::string detail;
};

struct LoadResult {
  std::vector<Transaction> rows;
  std::vector<RejectedRow> rejects;
};

// Parses an Online Retail II CSV. Required columns: Invoice, StockCode,
// Quantity, InvoiceDate, Price, Customer ID. Rows with an empty customer id or
// an unparseable quantity/price are routed to `rejects` with a reason code; a
// missing column or an unparseable InvoiceDate is a hard error.
LoadResult load_transactions(const std::filesystem::path& path);
LoadResult parse_transactions(std::istream& in);

inline constexpr char kCancellationPrefix = 'C';

// Drops cancelled invoices, non-positive quantities or prices and rows without
// a customer id. Preserves input order; never throws.
std::vector<Transaction> clean(std::span<const Transaction> rows);

struct Catalog {
  std::vector<std::string> skus;          // agent order
  std::vector<double> reference_price;    // median observed unit price
  std::vector<double> unit_cost;          // cost_ratio * reference price
  std::vector<std::size_t> activity;      // line count inside the window
  DateRange window{};

  std::size_t size() const { return skus.size(); }
  // Throws Error when the sku is not in the catalog.
  std::size_t index_of(std::string_view sku) const;
  std::optional<std::size_t> find(std::string_view sku) const;
};

// Dense (sku, day) aggregates over exactly the catalog window. Days without
// sales hold quantity 0, invoice count 0 and a NaN mean price.
class SalesPanel {
 public:
  SalesPanel() = default;
  SalesPanel(DateRange window, std::size_t num_skus);

  const DateRange& window() const { return window_; }
  std::size_t num_skus() const { return num_skus_; }
  int num_days() const { return num_days_; }

  int day_offset(Date d) const;  // throws if outside the window
  Date date_at(int offset) const { return add_days(window_.start, offset); }

  std::int64_t quantity(std::size_t sku, int day) const {
    return quantity_[at(sku, day)];
  }
  double mean_price(std::size_t sku, int day) const {
    return mean_price_[at(sku, day)];
  }
  int invoice_count(std::size_t sku, int day) const {
    return invoices_[at(sku, day)];
  }

  void set(std::size_t sku, int day, std::int64_t quantity, double mean_price,
           int invoice_count);

  std::int64_t total_quantity(std::size_t sku) const;

 private:
  std::size_t at(std::size_t sku, int day) const {
    return sku * static_cast<std::size_t>(num_days_) +
           static_cast<std::size_t>(day);
  }

  DateRange window_{};
  std::size_t num_skus_ = 0;
  int num_days_ = 0;
  std::vector<std::int64_t> quantity_;
  std::vector<double> mean_price_;
  std::vector<int> invoices_;
};

struct TrimParams {
  DateRange window{};
  std::size_t top_n = 60;
  double cost_ratio = 0.7;
  // When set, the reference-price median only uses lines dated before this
  // day (the training part of the window).
  std::optional<Date> reference_until;
};

struct TrimResult {
  Catalog catalog;
  SalesPanel panel;
  std::vector<Transaction> rows;  // cleaned rows inside window and catalog
};

TrimResult trim(std::span<const Transaction> rows, const TrimParams& params);

struct DatasetSummary {
  std::size_t transactions = 0;
  std::size_t invoices = 0;
  std::size_t customers = 0;
  std::size_t skus = 0;
};

DatasetSummary summarize(std::span<const Transaction> rows);

// Serialization. Formats:
//   catalog.csv : sku,reference_price,unit_cost,activity,window_start,window_end
//   panel.csv   : date,sku,quantity,mean_price,invoice_count
//   rejects.csv : row_index,reason,detail
//   transactions.csv : Online Retail II column layout
void write_catalog_csv(const Catalog& catalog, const std::filesystem::path& p);
Catalog read_catalog_csv(const std::filesystem::path& p);
void write_panel_csv(const SalesPanel& panel, const Catalog& catalog,
                     const std::filesystem::path& p);
SalesPanel read_panel_csv(const std::filesystem::path& p,
                          const Catalog& catalog);
void write_rejects_csv(std::span<const RejectedRow> rejects,
                       const std::filesystem::path& p);
void write_transactions_csv(std::span<const Transaction> rows,
                            const std::filesystem::path& p);

}  // namespace pricelab

#endif  // PRICELAB_INGEST_HPP_
