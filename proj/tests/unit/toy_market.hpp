#ifndef PRICELAB_TESTS_TOY_MARKET_HPP_
#define PRICELAB_TESTS_TOY_MARKET_HPP_

#include <cmath>
#include <memory>

#include "pricelab/env.hpp"

namespace pricelab::toy {

// Three SKUs on a directed ring with constant-elasticity demand that sells
// roughly 14, 10 and 8 units a day at the reference price.
inline std::shared_ptr<const MarketModel> toy_market(double sigma = 0.3) {
  const DateRange w{parse_date("2011-07-01"), parse_date("2011-12-09")};
  const double ref[] = {0.85, 1.65, 2.95};
  const double base[] = {14.0, 10.0, 8.0};
  const double elasticity[] = {-3.0, -4.5, -6.0};
  Catalog cat;
  cat.skus = {"T1", "T2", "T3"};
  cat.window = w;
  SalesPanel panel(w, 3);
  std::vector<SkuDemandModel> models;
  for (std::size_t i = 0; i < 3; ++i) {
    cat.reference_price.push_back(ref[i]);
    cat.unit_cost.push_back(0.7 * ref[i]);
    cat.activity.push_back(100);
    SkuDemandModel m{cat.skus[i]};
    m.coef[feature::kLogPrice] = elasticity[i];
    m.intercept = std::log1p(base[i]) - elasticity[i] * std::log(ref[i]);
    m.sigma = sigma;
    models.push_back(m);
    for (int d = 0; d < panel.num_days(); ++d) {
      panel.set(i, d, static_cast<std::int64_t>(base[i]) + d % 3, ref[i], 2);
    }
  }
  std::vector<std::vector<Edge>> adj(3);
  for (std::size_t i = 0; i < 3; ++i) adj[i] = {{(i + 1) % 3, 1.0}};
  return std::make_shared<const MarketModel>(
      cat, panel, ItemGraph(cat.skus, adj, 1, 1.0), DemandOracle(models),
      DateRange{w.start, parse_date("2011-11-20")});
}

inline EnvConfig toy_env(int horizon = 7) {
  EnvConfig c;
  c.horizon = horizon;
  c.window = {parse_date("2011-07-08"), parse_date("2011-11-20")};
  return c;
}

inline Date toy_split() { return parse_date("2011-11-21"); }

}  // namespace pricelab::toy

#endif  // PRICELAB_TESTS_TOY_MARKET_HPP_
