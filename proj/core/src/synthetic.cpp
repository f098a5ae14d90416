#include "pricelab/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "pricelab/csv.hpp"
#include "pricelab/error.hpp"
#include "pricelab/rng.hpp"

namespace pricelab {

namespace {

std::int64_t poisson(double mean, RngStream& rng) {
  // Knuth's product method; means here stay well below 100.
  const double limit = std::exp(-mean);
  std::int64_t k = 0;
  double prod = rng.uniform_open_low();
  while (prod > limit) {
    ++k;
    prod *= rng.uniform_open_low();
  }
  return k;
}

std::string money(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string clock_time(int minutes) {
  char buf[32];
  std::snprintf(buf, sizeof buf, " %02d:%02d:00", minutes / 60, minutes % 60);
  return buf;
}

}  // namespace

SyntheticSpec default_synthetic_spec() {
  SyntheticSpec s;
  s.skus = {{"SYN001", "CERAMIC MUG", 0.85, 14.0, -3.0},
            {"SYN002", "TEA LIGHT SET", 1.65, 10.0, -4.5},
            {"SYN003", "PICNIC BASKET", 2.95, 8.0, -6.0}};
  s.window = {parse_date("2011-07-01"), parse_date("2011-12-09")};
  return s;
}

void write_synthetic_retail(const SyntheticSpec& spec, std::ostream& out) {
  if (spec.skus.empty()) throw ConfigError("synthetic: no SKUs");
  if (!spec.window.valid()) throw ConfigError("synthetic: invalid window");
  if (spec.multipliers.empty()) throw ConfigError("synthetic: no multipliers");
  RngStream rng(derive_key(hash_string("pricelab-synthetic"), {spec.seed}));

  std::vector<double> moves;
  for (double m : spec.multipliers) {
    if (m != 1.0) moves.push_back(m);
  }

  csv::write_record(out, {"Invoice", "StockCode", "Description", "Quantity",
                          "InvoiceDate", "Price", "Customer ID", "Country"});
  long invoice = 560000;
  for (Date d = spec.window.start; d <= spec.window.end; d = add_days(d, 1)) {
    const double season = spec.weekday_factor[weekday_index(d) % spec.weekday_factor.size()];
    struct Line {
      std::size_t sku;
      std::int64_t qty;
      double price;
    };
    std::vector<Line> lines;
    for (std::size_t i = 0; i < spec.skus.size(); ++i) {
      const auto& s = spec.skus[i];
      double m = 1.0;
      if (!moves.empty() && !rng.bernoulli(spec.hold_probability)) {
        m = moves[rng.uniform_index(moves.size())];
      }
      const double price = std::round(s.base_price * m * 100.0) / 100.0;
      const double mean =
          s.base_demand * season * std::pow(price / s.base_price, s.elasticity);
      std::int64_t remaining = poisson(mean, rng);
      while (remaining > 0) {
        const std::int64_t q =
            std::min<std::int64_t>(remaining, 1 + static_cast<std::int64_t>(rng.uniform_index(4)));
        lines.push_back({i, q, price});
        remaining -= q;
      }
    }
    // Interleave SKUs, then group consecutive lines into baskets.
    for (std::size_t k = lines.size(); k > 1; --k) {
      std::swap(lines[k - 1], lines[rng.uniform_index(k)]);
    }
    int minute = 8 * 60;
    std::string customer;
    for (std::size_t k = 0; k < lines.size(); ++k) {
      const bool join = k > 0 && rng.bernoulli(spec.basket_cross_rate);
      if (!join) {
        ++invoice;
        minute = std::min(minute + 1 + static_cast<int>(rng.uniform_index(6)), 19 * 60);
        customer = rng.bernoulli(spec.missing_customer_rate)
                       ? std::string()
                       : std::to_string(12000 + rng.uniform_index(spec.customers)) + ".0";
      }
      const auto& l = lines[k];
      const auto& s = spec.skus[l.sku];
      const std::string when = format_date(d) + clock_time(minute);
      csv::write_record(out, {std::to_string(invoice), s.sku, s.description,
                              std::to_string(l.qty), when, money(l.price),
                              customer, "United Kingdom"});
      if (rng.bernoulli(spec.cancel_rate)) {
        csv::write_record(out, {"C" + std::to_string(invoice), s.sku,
                                s.description, std::to_string(-l.qty), when,
                                money(l.price), customer, "United Kingdom"});
      }
    }
  }
}

void write_synthetic_retail(const SyntheticSpec& spec,
                            const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  write_synthetic_retail(spec, out);
}

}  // namespace pricelab
