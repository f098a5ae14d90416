#include "pricelab/demand.hpp"

#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "pricelab/error.hpp"

namespace pricelab {
namespace {

ItemGraph edgeless(std::size_t n) {
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < n; ++i) labels.push_back("S" + std::to_string(i));
  return ItemGraph(labels, std::vector<std::vector<Edge>>(n), 1, 1.0);
}

Catalog catalog_with_prices(std::vector<double> ref) {
  Catalog c;
  for (std::size_t i = 0; i < ref.size(); ++i) c.skus.push_back("S" + std::to_string(i));
  c.reference_price = ref;
  for (double p : ref) c.unit_cost.push_back(0.7 * p);
  c.activity.assign(ref.size(), 1);
  return c;
}

TEST(FeaturizeTest, TenDayFixtureMatchesHandValues) {
  const std::vector<std::int64_t> q = {3, 0, 5, 2, 0, 1, 4, 6, 2, 7};
  SalesPanel panel({parse_date("2011-07-01"), parse_date("2011-07-10")}, 1);
  for (int d = 0; d < 10; ++d) panel.set(0, d, q[d], 2.0, q[d] > 0);
  const auto cat = catalog_with_prices({2.0});
  const std::vector<double> prices = {2.2};
  const auto f = featurize(panel, cat, edgeless(1), 0, parse_date("2011-07-09"), prices);
  // EMA seeded with day 0 then alpha = 0.25 through day 7.
  const double ema = 3.24591064453125;
  EXPECT_DOUBLE_EQ(f[feature::kLag1], std::log1p(6.0));
  EXPECT_DOUBLE_EQ(f[feature::kLag7], std::log1p(0.0));
  EXPECT_DOUBLE_EQ(f[feature::kEma], std::log1p(ema));
  EXPECT_DOUBLE_EQ(f[feature::kLogPrice], std::log(2.2));
  EXPECT_DOUBLE_EQ(f[feature::kPriceRatio], 1.1);
  EXPECT_EQ(f[feature::kNeighborLogPrice], 0.0);
  EXPECT_EQ(f[feature::kWeekday + 5], 1.0);  // 2011-07-09 is a Saturday
  EXPECT_EQ(f[feature::kMonth + 6], 1.0);
  EXPECT_DOUBLE_EQ(f[feature::kTrend], 8.0 / 365.0);
  double onehots = 0.0;
  for (std::size_t k = feature::kWeekday; k < feature::kTrend; ++k) onehots += f[k];
  EXPECT_EQ(onehots, 2.0);
}

TEST(FeaturizeTest, HistoryBufferMatchesPanelFeatures) {
  const std::vector<std::int64_t> q = {3, 0, 5, 2, 0, 1, 4, 6, 2, 7};
  SalesPanel panel({parse_date("2011-07-01"), parse_date("2011-07-10")}, 1);
  for (int d = 0; d < 10; ++d) panel.set(0, d, q[d], 2.0, 1);
  DemandHistoryBuffer buf(panel, 0, 7);
  buf.push(6.0);
  const auto h = buf.view();
  EXPECT_EQ(h.lag1, 6.0);
  EXPECT_EQ(h.lag7, 0.0);
  EXPECT_DOUBLE_EQ(h.ema, 3.24591064453125);
}

TEST(FeaturizeTest, NeighborMeanLogPrice) {
  const std::vector<std::string> labels = {"A", "B", "C"};
  std::vector<std::vector<Edge>> adj(3);
  adj[0] = {{1, 2.0}, {2, 1.0}};
  const ItemGraph g(labels, adj, 2, 1.0);
  const std::vector<double> same = {1.0, 3.0, 3.0};
  EXPECT_DOUBLE_EQ(neighbor_mean_log_price(g, 0, same), std::log(3.0));
  const std::vector<double> mixed = {1.0, 2.0, 8.0};
  EXPECT_DOUBLE_EQ(neighbor_mean_log_price(g, 0, mixed), 0.5 * (std::log(2.0) + std::log(8.0)));
  EXPECT_EQ(neighbor_mean_log_price(g, 1, mixed), 0.0);
}

TEST(FeaturizeTest, ZeroHistoryGivesZeroLags) {
  SalesPanel panel({parse_date("2011-07-01"), parse_date("2011-07-20")}, 1);
  const auto cat = catalog_with_prices({1.0});
  const std::vector<double> prices = {1.0};
  const auto f = featurize(panel, cat, edgeless(1), 0, parse_date("2011-07-15"), prices);
  EXPECT_EQ(f[feature::kLag1], 0.0);
  EXPECT_EQ(f[feature::kLag7], 0.0);
  EXPECT_EQ(f[feature::kEma], 0.0);
}

TEST(FeaturizeTest, InsufficientHistoryNamesEarliestDay) {
  SalesPanel panel({parse_date("2011-07-01"), parse_date("2011-07-20")}, 1);
  const auto cat = catalog_with_prices({1.0});
  const std::vector<double> prices = {1.0};
  try {
    featurize(panel, cat, edgeless(1), 0, parse_date("2011-07-05"), prices);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("2011-07-08"), std::string::npos) << e.what();
  }
  EXPECT_NO_THROW(featurize(panel, cat, edgeless(1), 0, parse_date("2011-07-08"), prices));
}

DemandFeatures features_at(double price) {
  return make_features(price, 1.0, 0.0, {}, parse_date("2011-07-04"),
                       parse_date("2011-07-01"));
}

TEST(OracleTest, ZeroParametersPredictZero) {
  DemandOracle o({SkuDemandModel{"A"}});
  EXPECT_EQ(o.predict(0, features_at(1.3)), 0.0);
}

TEST(OracleTest, HandSetParameters) {
  SkuDemandModel m{"A"};
  m.intercept = 2.0;
  m.coef[feature::kLogPrice] = -1.5;
  m.coef[feature::kWeekday + 0] = 0.25;  // Monday
  DemandOracle o({m});
  const auto x = features_at(2.0);  // 2011-07-04 is a Monday
  const double mu = 2.0 - 1.5 * std::log(2.0) + 0.25;
  EXPECT_DOUBLE_EQ(o.mean_log1p(0, x), mu);
  EXPECT_DOUBLE_EQ(o.predict(0, x), std::expm1(mu));
  EXPECT_LT(o.predict(0, features_at(2.5)), o.predict(0, x));
  EXPECT_DOUBLE_EQ(o.own_price_elasticity(0, 2.0, 1.0), -1.5);
  EXPECT_THROW(o.predict(3, x), Error);
}

TEST(OracleTest, NegativeResponseFloorsAtZero) {
  SkuDemandModel m{"A"};
  m.intercept = -3.0;
  DemandOracle o({m});
  EXPECT_EQ(o.predict(0, features_at(1.0)), 0.0);
  RngStream r(1);
  for (int i = 0; i < 100; ++i) EXPECT_GE(o.sample(0, features_at(1.0), r), 0);
}

TEST(OracleTest, ZeroSigmaSampleIsRoundedPrediction) {
  SkuDemandModel m{"A"};
  m.intercept = 2.3;
  DemandOracle o({m});
  RngStream r(4);
  EXPECT_EQ(o.sample(0, features_at(1.0), r),
            static_cast<std::int64_t>(std::round(o.predict(0, features_at(1.0)))));
}

TEST(OracleTest, SampleDeterministicPerStream) {
  SkuDemandModel m{"A"};
  m.intercept = 2.0;
  m.sigma = 0.5;
  DemandOracle o({m});
  RngStream a(99), b(99);
  for (int i = 0; i < 50; ++i) {
    EXPECT_EQ(o.sample(0, features_at(1.0), a), o.sample(0, features_at(1.0), b));
  }
}

TEST(OracleTest, MonteCarloMeanMatchesLognormalCorrection) {
  SkuDemandModel m{"A"};
  m.intercept = 3.0;
  m.sigma = 0.3;
  DemandOracle o({m});
  RngStream r(2024);
  const int n = 10000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double q = static_cast<double>(o.sample(0, features_at(1.0), r));
    s += q;
    s2 += q * q;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  const double analytic = std::exp(3.0 + 0.5 * 0.3 * 0.3) - 1.0;
  EXPECT_NEAR(mean, analytic, 3.0 * se);
}

TEST(OracleTest, JsonRoundTripIsExact) {
  SkuDemandModel m{"A"};
  m.intercept = 0.1 + 0.2;
  for (std::size_t k = 0; k < feature::kCount; ++k) m.coef[k] = 1.0 / (3.0 + k);
  m.sigma = std::sqrt(2.0);
  m.pooled = true;
  DemandOracle o({m});
  const DemandOracle back = DemandOracle::from_json(o.to_json());
  EXPECT_EQ(back.model(0).intercept, m.intercept);
  EXPECT_EQ(back.model(0).coef, m.coef);
  EXPECT_EQ(back.model(0).sigma, m.sigma);
  EXPECT_TRUE(back.model(0).pooled);
  std::string text = o.to_json();
  text.replace(text.find("\"schema_version\": 1"), 19, "\"schema_version\": 9");
  EXPECT_THROW(DemandOracle::from_json(text), ParseError);
}

TEST(RidgeTest, ExactLinearTargetIsRecovered) {
  RngStream r(5);
  std::vector<std::vector<double>> rows;
  std::vector<double> y;
  for (int i = 0; i < 80; ++i) {
    std::vector<double> x = {r.uniform(), r.normal(), 7.0};  // last column constant
    rows.push_back(x);
    y.push_back(1.5 + 2.0 * x[0] - 0.5 * x[1]);
  }
  const auto [b0, b] = ridge_regression(rows, y, 0.0);
  EXPECT_NEAR(b0, 1.5, 1e-10);
  EXPECT_NEAR(b[0], 2.0, 1e-10);
  EXPECT_NEAR(b[1], -0.5, 1e-10);
  EXPECT_EQ(b[2], 0.0);
  // Refitting on its own predictions leaves no residual: R^2 = 1.
  double ss_res = 0.0, ss_tot = 0.0, mean = 0.0;
  for (double v : y) mean += v / y.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double pred = b0 + b[0] * rows[i][0] + b[1] * rows[i][1];
    ss_res += (pred - y[i]) * (pred - y[i]);
    ss_tot += (y[i] - mean) * (y[i] - mean);
  }
  EXPECT_NEAR(1.0 - ss_res / ss_tot, 1.0, 1e-12);
}

TEST(RidgeTest, PenaltyShrinks) {
  std::vector<std::vector<double>> rows;
  std::vector<double> y;
  for (int i = 0; i < 20; ++i) {
    rows.push_back({static_cast<double>(i)});
    y.push_back(3.0 * i);
  }
  const auto loose = ridge_regression(rows, y, 0.0).second[0];
  const auto tight = ridge_regression(rows, y, 50.0).second[0];
  EXPECT_NEAR(loose, 3.0, 1e-12);
  EXPECT_LT(std::abs(tight), std::abs(loose));
}

// Daily log-linear demand with a known own-price elasticity and no noise.
struct Generated {
  SalesPanel panel;
  Catalog catalog;
};

Generated generate(double elasticity, std::size_t skus, RngKey key) {
  const DateRange w{parse_date("2011-07-01"), parse_date("2011-12-09")};
  Generated g{SalesPanel(w, skus), catalog_with_prices(std::vector<double>(skus, 2.0))};
  RngStream r(key);
  const double mult[] = {0.8, 0.9, 1.0, 1.1, 1.2};
  for (std::size_t i = 0; i < skus; ++i) {
    for (int d = 0; d < g.panel.num_days(); ++d) {
      const double p = 2.0 * mult[r.uniform_index(5)];
      const double mu = 5.0 + elasticity * std::log(p / 2.0);
      const auto q = static_cast<std::int64_t>(std::round(std::expm1(mu)));
      g.panel.set(i, d, q, p, 1);
    }
  }
  return g;
}

TEST(FitTest, RecoversOwnPriceElasticity) {
  auto g = generate(-1.5, 2, 11);
  FitOptions fo;
  fo.split = parse_date("2011-11-21");
  const auto r = fit(g.panel, g.catalog, edgeless(2), fo);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(r.oracle.own_price_elasticity(i, 2.0, 2.0), -1.5, 0.1);
    EXPECT_FALSE(r.oracle.model(i).pooled);
  }
  EXPECT_GT(r.diagnostics.aggregate.r2_log1p, 0.99);
}

TEST(FitTest, DiagnosticsAreWellFormed) {
  auto g = generate(-2.0, 3, 12);
  FitOptions fo;
  fo.split = parse_date("2011-11-21");
  const auto r = fit(g.panel, g.catalog, edgeless(3), fo);
  ASSERT_EQ(r.diagnostics.per_sku.size(), 3u);
  for (const auto& d : r.diagnostics.per_sku) {
    EXPECT_LE(d.r2_log1p, 1.0);
    EXPECT_GE(d.rmse, 0.0);
    EXPECT_GE(d.mape, 0.0);
    EXPECT_GE(d.weighted_rmse, 0.0);
    EXPECT_EQ(d.test_rows, 19u);
  }
  EXPECT_EQ(r.diagnostics.test_window.start, parse_date("2011-11-21"));
  EXPECT_EQ(r.diagnostics.aggregate.test_rows, 57u);
}

TEST(FitTest, SparseSkuFallsBackToPooledModel) {
  auto g = generate(-1.5, 2, 13);
  for (int d = 0; d < g.panel.num_days(); ++d) {
    g.panel.set(1, d, d == 20 ? 3 : 0, d == 20 ? 2.0 : std::nan(""), d == 20);
  }
  FitOptions fo;
  fo.split = parse_date("2011-11-21");
  const auto r = fit(g.panel, g.catalog, edgeless(2), fo);
  EXPECT_TRUE(r.oracle.model(1).pooled);
  EXPECT_TRUE(r.diagnostics.per_sku[1].pooled);
  EXPECT_FALSE(r.oracle.model(0).pooled);
  EXPECT_EQ(r.diagnostics.pooled_fallbacks, 1u);
}

TEST(FitTest, NoLeakageFromTestWindow) {
  auto g = generate(-1.5, 2, 14);
  FitOptions fo;
  fo.split = parse_date("2011-11-21");
  const auto before = fit(g.panel, g.catalog, edgeless(2), fo);
  const int split = g.panel.day_offset(fo.split);
  for (int d = split; d < g.panel.num_days(); ++d) g.panel.set(0, d, 999, 1.0, 1);
  const auto after = fit(g.panel, g.catalog, edgeless(2), fo);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(before.oracle.model(i).coef, after.oracle.model(i).coef);
    EXPECT_EQ(before.oracle.model(i).intercept, after.oracle.model(i).intercept);
    EXPECT_EQ(before.oracle.model(i).sigma, after.oracle.model(i).sigma);
  }
}

TEST(FitTest, RejectsBadSplits) {
  auto g = generate(-1.5, 1, 15);
  FitOptions fo;
  fo.split = parse_date("2012-01-01");
  EXPECT_THROW(fit(g.panel, g.catalog, edgeless(1), fo), Error);
  fo.split = parse_date("2011-07-20");  // fewer than 30 training days
  EXPECT_THROW(fit(g.panel, g.catalog, edgeless(1), fo), Error);
}

}  // namespace
}  // namespace pricelab
