#ifndef PRICELAB_SYNTHETIC_HPP_
#define PRICELAB_SYNTHETIC_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "pricelab/calendar.hpp"

namespace pricelab {

struct SyntheticSku {
  std::string sku;
  std::string description;
  double base_price = 1.0;
  double base_demand = 10.0;  // expected units per day at the base price
  double elasticity = -3.0;   // constant own-price elasticity
};

// Small retail transaction log with known constant-elasticity demand.
// Prices move by day-level multipliers of the base price; the base price is
// kept on `hold_probability` of days so it is also the median line price.
struct SyntheticSpec {
  std::vector<SyntheticSku> skus;
  DateRange window{};
  std::vector<double> multipliers = {0.8, 0.9, 1.0, 1.1, 1.2};
  double hold_probability = 0.5;
  std::vector<double> weekday_factor = {1.0, 1.05, 1.1, 1.05, 0.95, 0.8, 0.7};
  double basket_cross_rate = 0.35;  // chance a line joins the previous invoice
  double cancel_rate = 0.02;
  double missing_customer_rate = 0.03;
  std::size_t customers = 400;
  std::uint64_t seed = 7;
};

// Three SKUs (elasticities -3, -4.5, -6) over 2011-07-01..2011-12-09.
SyntheticSpec default_synthetic_spec();

// Writes an Online Retail II style CSV: Invoice, StockCode, Description,
// Quantity, InvoiceDate, Price, Customer ID, Country. Deterministic for a
// given spec.
void write_synthetic_retail(const SyntheticSpec& spec, std::ostream& out);
void write_synthetic_retail(const SyntheticSpec& spec,
                            const std::filesystem::path& p);

}  // namespace pricelab

#endif  // PRICELAB_SYNTHETIC_HPP_
