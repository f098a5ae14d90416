#include "pricelab/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>

#include "pricelab/csv.hpp"
#include "pricelab/error.hpp"

namespace pricelab {
namespace {

std::string_view trim_ws(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() &&
         (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

bool parse_double(std::string_view s, double& out) {
  s = trim_ws(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

bool parse_quantity(std::string_view s, std::int64_t& out) {
  s = trim_ws(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec == std::errc{} && ptr == s.data() + s.size()) return true;
  // Spreadsheet exports sometimes write integers as "12.0".
  double d = 0.0;
  if (!parse_double(s, d) || d != std::floor(d) ||
      std::abs(d) > 9.0e15) {
    return false;
  }
  out = static_cast<std::int64_t>(d);
  return true;
}

// "13085.0" and "13085" name the same customer.
std::string normalize_id(std::string_view s) {
  s = trim_ws(s);
  if (s.ends_with(".0")) s.remove_suffix(2);
  return std::string(s);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::ifstream open_input(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open file: " + p.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write file: " + p.string());
  return out;
}

}  // namespace

LoadResult load_transactions(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw Error("transaction file not found: " + path.string());
  }
  auto in = open_input(path);
  return parse_transactions(in);
}

LoadResult parse_transactions(std::istream& in) {
  std::vector<std::string> header;
  if (!csv::read_record(in, header)) throw ParseError("empty transaction file");

  struct Col {
    const char* name;
    int index;
  };
  Col invoice{"Invoice", -1}, code{"StockCode", -1}, qty{"Quantity", -1},
      date{"InvoiceDate", -1}, price{"Price", -1}, customer{"Customer ID", -1};
  for (Col* c : {&invoice, &code, &qty, &date, &price, &customer}) {
    c->index = csv::column_index(header, c->name);
    if (c->index < 0) {
      throw ParseError(std::string("missing required column '") + c->name +
                       "'");
    }
  }
  const int country = csv::column_index(header, "Country");

  LoadResult result;
  std::vector<std::string> f;
  std::size_t row = 0;
  while (csv::read_record(in, f)) {
    ++row;
    if (f.size() == 1 && trim_ws(f[0]).empty()) continue;  // blank line
    if (f.size() < header.size()) {
      result.rejects.push_back({row, "short_row",
                                std::to_string(f.size()) + " fields"});
      continue;
    }
    Transaction t;
    t.invoice_id = std::string(trim_ws(f[invoice.index]));
    t.sku = std::string(trim_ws(f[code.index]));
    try {
      t.timestamp = parse_datetime(f[date.index]);
    } catch (const ParseError& e) {
      throw ParseError("row " + std::to_string(row) + ": " + e.what());
    }
    if (t.invoice_id.empty() || t.sku.empty()) {
      result.rejects.push_back({row, "missing_id", "empty Invoice/StockCode"});
      continue;
    }
    if (!parse_quantity(f[qty.index], t.quantity)) {
      result.rejects.push_back({row, "bad_quantity", f[qty.index]});
      continue;
    }
    if (!parse_double(f[price.index], t.unit_price)) {
      result.rejects.push_back({row, "bad_price", f[price.index]});
      continue;
    }
    std::string cust = normalize_id(f[customer.index]);
    if (cust.empty()) {
      result.rejects.push_back({row, "missing_customer_id", t.invoice_id});
      continue;
    }
    t.customer_id = std::move(cust);
    if (country >= 0) t.country = std::string(trim_ws(f[country]));
    result.rows.push_back(std::move(t));
  }
  return result;
}

std::vector<Transaction> clean(std::span<const Transaction> rows) {
  std::vector<Transaction> out;
  out.reserve(rows.size());
  for (const auto& t : rows) {
    if (!t.invoice_id.empty() && t.invoice_id.front() == kCancellationPrefix) {
      continue;
    }
    if (t.quantity <= 0 || !(t.unit_price > 0.0)) continue;
    if (!t.customer_id || t.customer_id->empty()) continue;
    out.push_back(t);
  }
  return out;
}

std::size_t Catalog::index_of(std::string_view sku) const {
  auto i = find(sku);
  if (!i) throw Error("sku not in catalog: " + std::string(sku));
  return *i;
}

std::optional<std::size_t> Catalog::find(std::string_view sku) const {
  for (std::size_t i = 0; i < skus.size(); ++i) {
    if (skus[i] == sku) return i;
  }
  return std::nullopt;
}

SalesPanel::SalesPanel(DateRange window, std::size_t num_skus)
    : window_(window), num_skus_(num_skus), num_days_(window.num_days()) {
  if (!window.valid()) throw Error("SalesPanel: empty window");
  const std::size_t cells = num_skus * static_cast<std::size_t>(num_days_);
  quantity_.assign(cells, 0);
  mean_price_.assign(cells, std::numeric_limits<double>::quiet_NaN());
  invoices_.assign(cells, 0);
}

int SalesPanel::day_offset(Date d) const {
  if (!window_.contains(d)) {
    throw Error("date " + format_date(d) + " outside panel window " +
                format_date(window_.start) + ".." + format_date(window_.end));
  }
  return days_between(window_.start, d);
}

void SalesPanel::set(std::size_t sku, int day, std::int64_t quantity,
                     double mean_price, int invoice_count) {
  const auto i = at(sku, day);
  quantity_[i] = quantity;
  mean_price_[i] = mean_price;
  invoices_[i] = invoice_count;
}

std::int64_t SalesPanel::total_quantity(std::size_t sku) const {
  std::int64_t total = 0;
  for (int d = 0; d < num_days_; ++d) total += quantity(sku, d);
  return total;
}

TrimResult trim(std::span<const Transaction> rows, const TrimParams& params) {
  if (params.top_n < 1) throw Error("trim: top_n must be >= 1");
  if (!params.window.valid()) throw Error("trim: invalid window");
  if (!(params.cost_ratio > 0.0 && params.cost_ratio < 1.0)) {
    throw Error("trim: cost_ratio must lie in (0, 1)");
  }

  std::map<std::string, std::size_t> lines;
  for (const auto& t : rows) {
    if (params.window.contains(t.day())) ++lines[t.sku];
  }
  if (lines.empty()) {
    throw Error("trim: no rows inside window " +
                format_date(params.window.start) + ".." +
                format_date(params.window.end));
  }
  if (params.top_n > lines.size()) {
    throw Error("trim: top_n=" + std::to_string(params.top_n) +
                " exceeds the " + std::to_string(lines.size()) +
                " distinct SKUs available in the window");
  }

  std::vector<std::pair<std::string, std::size_t>> ranked(lines.begin(),
                                                          lines.end());
  // std::map iteration is sku-ascending, so a stable sort on count keeps the
  // sku-ascending tie order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     return a.second > b.second;
                   });
  ranked.resize(params.top_n);

  TrimResult result;
  Catalog& cat = result.catalog;
  cat.window = params.window;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& [sku, count] : ranked) {
    index.emplace(sku, cat.skus.size());
    cat.skus.push_back(sku);
    cat.activity.push_back(count);
  }
  const std::size_t n = cat.size();

  std::vector<std::vector<double>> prices(n), reference_prices(n);
  SalesPanel& panel = result.panel = SalesPanel(params.window, n);
  const int days = panel.num_days();
  std::vector<std::int64_t> qty(n * days, 0);
  std::vector<double> price_sum(n * days, 0.0);
  std::vector<int> line_count(n * days, 0);
  std::vector<std::set<std::string>> invoices(n * days);

  for (const auto& t : rows) {
    const Date d = t.day();
    if (!params.window.contains(d)) continue;
    auto it = index.find(t.sku);
    if (it == index.end()) continue;
    const std::size_t i = it->second;
    const auto cell = i * days + days_between(params.window.start, d);
    qty[cell] += t.quantity;
    price_sum[cell] += t.unit_price;
    ++line_count[cell];
    invoices[cell].insert(t.invoice_id);
    prices[i].push_back(t.unit_price);
    if (!params.reference_until || d < *params.reference_until) {
      reference_prices[i].push_back(t.unit_price);
    }
    result.rows.push_back(t);
  }

  for (std::size_t i = 0; i < n; ++i) {
    for (int d = 0; d < days; ++d) {
      const auto cell = i * days + d;
      const double mean = line_count[cell] > 0
                              ? price_sum[cell] / line_count[cell]
                              : std::numeric_limits<double>::quiet_NaN();
      panel.set(i, d, qty[cell], mean,
                static_cast<int>(invoices[cell].size()));
    }
    const auto& ref = reference_prices[i].empty() ? prices[i]
                                                  : reference_prices[i];
    const double p = median(ref);
    cat.reference_price.push_back(p);
    cat.unit_cost.push_back(params.cost_ratio * p);
  }
  return result;
}

DatasetSummary summarize(std::span<const Transaction> rows) {
  std::set<std::string> invoices, customers, skus;
  for (const auto& t : rows) {
    invoices.insert(t.invoice_id);
    if (t.customer_id) customers.insert(*t.customer_id);
    skus.insert(t.sku);
  }
  return {rows.size(), invoices.size(), customers.size(), skus.size()};
}

void write_catalog_csv(const Catalog& catalog, const std::filesystem::path& p) {
  auto out = open_output(p);
  out << "sku,reference_price,unit_cost,activity,window_start,window_end\n";
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    csv::write_record(out, {catalog.skus[i],
                            csv::format_double(catalog.reference_price[i]),
                            csv::format_double(catalog.unit_cost[i]),
                            std::to_string(catalog.activity[i]),
                            format_date(catalog.window.start),
                            format_date(catalog.window.end)});
  }
}

Catalog read_catalog_csv(const std::filesystem::path& p) {
  auto in = open_input(p);
  std::vector<std::string> f;
  if (!csv::read_record(in, f) || f.size() < 6) {
    throw ParseError("bad catalog header in " + p.string());
  }
  Catalog cat;
  while (csv::read_record(in, f)) {
    if (f.size() < 6) throw ParseError("short catalog row in " + p.string());
    double ref = 0.0, cost = 0.0;
    if (!parse_double(f[1], ref) || !parse_double(f[2], cost)) {
      throw ParseError("bad catalog price in " + p.string());
    }
    cat.skus.push_back(f[0]);
    cat.reference_price.push_back(ref);
    cat.unit_cost.push_back(cost);
    cat.activity.push_back(std::stoull(f[3]));
    cat.window = {parse_date(f[4]), parse_date(f[5])};
  }
  if (cat.skus.empty()) throw ParseError("empty catalog: " + p.string());
  return cat;
}

void write_panel_csv(const SalesPanel& panel, const Catalog& catalog,
                     const std::filesystem::path& p) {
  auto out = open_output(p);
  out << "date,sku,quantity,mean_price,invoice_count\n";
  for (int d = 0; d < panel.num_days(); ++d) {
    const std::string date = format_date(panel.date_at(d));
    for (std::size_t i = 0; i < panel.num_skus(); ++i) {
      const double mp = panel.mean_price(i, d);
      csv::write_record(out, {date, catalog.skus[i],
                              std::to_string(panel.quantity(i, d)),
                              std::isnan(mp) ? "" : csv::format_double(mp),
                              std::to_string(panel.invoice_count(i, d))});
    }
  }
}

SalesPanel read_panel_csv(const std::filesystem::path& p,
                          const Catalog& catalog) {
  auto in = open_input(p);
  std::vector<std::string> f;
  if (!csv::read_record(in, f) || f.size() < 5) {
    throw ParseError("bad panel header in " + p.string());
  }
  SalesPanel panel(catalog.window, catalog.size());
  while (csv::read_record(in, f)) {
    if (f.size() < 5) throw ParseError("short panel row in " + p.string());
    const int d = panel.day_offset(parse_date(f[0]));
    const std::size_t i = catalog.index_of(f[1]);
    std::int64_t q = 0;
    double mp = std::numeric_limits<double>::quiet_NaN();
    if (!parse_quantity(f[2], q) || (!f[3].empty() && !parse_double(f[3], mp))) {
      throw ParseError("bad panel row in " + p.string());
    }
    panel.set(i, d, q, mp, std::stoi(f[4]));
  }
  return panel;
}

void write_rejects_csv(std::span<const RejectedRow> rejects,
                       const std::filesystem::path& p) {
  auto out = open_output(p);
  out << "row_index,reason,detail\n";
  for (const auto& r : rejects) {
    csv::write_record(out, {std::to_string(r.row_index), r.reason, r.detail});
  }
}

void write_transactions_csv(std::span<const Transaction> rows,
                            const std::filesystem::path& p) {
  auto out = open_output(p);
  out << "Invoice,StockCode,Description,Quantity,InvoiceDate,Price,"
         "Customer ID,Country\n";
  for (const auto& t : rows) {
    csv::write_record(out, {t.invoice_id, t.sku, "", std::to_string(t.quantity),
                            format_datetime(t.timestamp),
                            csv::format_double(t.unit_price),
                            t.customer_id.value_or(""), t.country});
  }
}

}  // namespace pricelab
