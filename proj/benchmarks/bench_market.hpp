#ifndef PRICELAB_BENCHMARKS_BENCH_MARKET_HPP_
#define PRICELAB_BENCHMARKS_BENCH_MARKET_HPP_

#include <cmath>
#include <memory>
#include <string>

#include "pricelab/env.hpp"

namespace pricelab::bench {

// n SKUs, each linked to the next k SKUs, with flat history.
inline std::shared_ptr<const MarketModel> make_market(std::size_t n, std::size_t k = 12) {
  const DateRange w{parse_date("2011-07-01"), parse_date("2011-12-09")};
  Catalog cat;
  cat.window = w;
  SalesPanel panel(w, n);
  std::vector<SkuDemandModel> models;
  std::vector<std::vector<Edge>> adj(n);
  for (std::size_t i = 0; i < n; ++i) {
    cat.skus.push_back("S" + std::to_string(100 + i));
    const double ref = 1.0 + 0.05 * static_cast<double>(i);
    cat.reference_price.push_back(ref);
    cat.unit_cost.push_back(0.7 * ref);
    cat.activity.push_back(100);
    SkuDemandModel m{cat.skus.back()};
    m.coef[feature::kLogPrice] = -3.0;
    m.coef[feature::kLag1] = 0.2;
    m.intercept = std::log1p(12.0) + 3.0 * std::log(ref);
    m.sigma = 0.3;
    models.push_back(m);
    for (int d = 0; d < panel.num_days(); ++d) panel.set(i, d, 12, ref, 2);
    for (std::size_t j = 1; j <= k && j < n; ++j) {
      adj[i].push_back({(i + j) % n, static_cast<double>(k + 1 - j)});
    }
  }
  return std::make_shared<const MarketModel>(
      cat, panel, ItemGraph(cat.skus, adj, k, 2.0), DemandOracle(models),
      DateRange{w.start, parse_date("2011-11-20")});
}

inline EnvConfig make_env_config() {
  EnvConfig c;
  c.window = {parse_date("2011-07-08"), parse_date("2011-11-20")};
  return c;
}

}  // namespace pricelab::bench

#endif  // PRICELAB_BENCHMARKS_BENCH_MARKET_HPP_
