#include "pricelab/env.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "pricelab/error.hpp"

namespace pricelab {
namespace {

// Two SKUs with price-independent demand: A sells 5 units at 10 (cost 6),
// B sells 6 units at 4 (cost 2). Reference-price profit is 20 + 12 = 32.
std::shared_ptr<const MarketModel> fixture_market(double sigma = 0.0,
                                                  std::int64_t qa = 5,
                                                  std::int64_t qb = 6) {
  const DateRange w{parse_date("2011-09-01"), parse_date("2011-10-30")};
  Catalog cat;
  cat.skus = {"A", "B"};
  cat.reference_price = {10.0, 4.0};
  cat.unit_cost = {6.0, 2.0};
  cat.activity = {1, 1};
  cat.window = w;
  SalesPanel panel(w, 2);
  for (int d = 0; d < panel.num_days(); ++d) {
    panel.set(0, d, 4 + d % 3, 10.0, 1);
    panel.set(1, d, 6, 4.0, 1);
  }
  SkuDemandModel a{"A"}, b{"B"};
  a.intercept = std::log1p(static_cast<double>(qa));
  b.intercept = std::log1p(static_cast<double>(qb));
  a.sigma = b.sigma = sigma;
  std::vector<std::vector<Edge>> adj(2);
  adj[0] = {{1, 1.0}};
  adj[1] = {{0, 1.0}};
  return std::make_shared<const MarketModel>(
      cat, panel, ItemGraph({"A", "B"}, adj, 1, 1.0), DemandOracle({a, b}), w);
}

EnvConfig fixture_config(double lambda = 0.0) {
  EnvConfig c;
  c.horizon = 5;
  c.lambda_stab = lambda;
  c.window = {parse_date("2011-10-01"), parse_date("2011-10-30")};
  return c;
}

TEST(EnvConfigTest, ActionSpace) {
  EXPECT_EQ(action_space(fixture_config()), 5u);
  EXPECT_EQ(fixture_config().reference_action(), 2u);
}

TEST(EnvConfigTest, Validation) {
  auto bad = [](auto mutate) {
    EnvConfig c = fixture_config();
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](EnvConfig& c) { c.multipliers.clear(); });
  bad([](EnvConfig& c) { c.multipliers = {0.9, 1.1}; });
  bad([](EnvConfig& c) { c.multipliers = {1.0, 0.9}; });
  bad([](EnvConfig& c) { c.multipliers = {0.4, 1.0}; });
  bad([](EnvConfig& c) { c.multipliers = {1.0, 2.5}; });
  bad([](EnvConfig& c) { c.horizon = 0; });
  bad([](EnvConfig& c) { c.lambda_stab = -0.1; });
  bad([](EnvConfig& c) { c.gamma = 0.0; });
  bad([](EnvConfig& c) { c.gamma = 1.5; });
  EXPECT_NO_THROW(fixture_config().validate());
}

TEST(PricingEnvTest, ReferencePricesEarnHandProfit) {
  PricingEnv env(fixture_market(), fixture_config(0.5));
  env.reset(parse_date("2011-10-01"), 1);
  const std::vector<int> ref = {2, 2};
  const auto r = env.step(ref);
  EXPECT_EQ(r.quantity, (std::vector<std::int64_t>{5, 6}));
  EXPECT_DOUBLE_EQ(r.sku_profit[0], 20.0);
  EXPECT_DOUBLE_EQ(r.sku_profit[1], 12.0);
  EXPECT_DOUBLE_EQ(r.profit, 32.0);
  EXPECT_EQ(r.penalty, 0.0);
  EXPECT_DOUBLE_EQ(r.reward, 32.0);
}

TEST(PricingEnvTest, NoDemandGivesZeroReward) {
  PricingEnv env(fixture_market(0.0, 0, 0), fixture_config());
  env.reset(parse_date("2011-10-01"), 1);
  const std::vector<int> a = {0, 4};
  const auto r = env.step(a);
  EXPECT_EQ(r.reward, 0.0);
  EXPECT_EQ(r.profit, 0.0);
}

TEST(PricingEnvTest, StabilityPenaltyAndDecomposition) {
  const double lambda = 0.5;
  PricingEnv env(fixture_market(), fixture_config(lambda));
  env.reset(parse_date("2011-10-01"), 3);
  const std::vector<int> up = {4, 2};
  const auto r1 = env.step(up);
  EXPECT_NEAR(r1.penalty, lambda * std::log(1.2), 1e-12);
  EXPECT_DOUBLE_EQ(r1.sku_profit[0], (12.0 - 6.0) * 5);
  const auto r2 = env.step(up);
  EXPECT_EQ(r2.penalty, 0.0);
  const std::vector<int> swing = {0, 0};
  const auto r3 = env.step(swing);
  EXPECT_NEAR(r3.penalty, lambda * (std::log(1.2 / 0.8) + std::log(1.0 / 0.8)),
              1e-12);
  for (const auto& r : {r1, r2, r3}) {
    EXPECT_DOUBLE_EQ(r.reward, r.sku_profit[0] + r.sku_profit[1] - r.penalty);
    EXPECT_DOUBLE_EQ(r.profit, r.sku_profit[0] + r.sku_profit[1]);
  }
}

TEST(PricingEnvTest, PricesStayOnTheGrid) {
  PricingEnv env(fixture_market(0.4), fixture_config());
  env.reset(parse_date("2011-10-03"), 4);
  RngStream r(8);
  const auto& ref = env.market().catalog().reference_price;
  while (!env.done()) {
    const std::vector<int> a = {static_cast<int>(r.uniform_index(5)),
                                static_cast<int>(r.uniform_index(5))};
    env.step(a);
    for (std::size_t i = 0; i < 2; ++i) {
      const double p = env.state().price[i];
      EXPECT_GE(p, 0.8 * ref[i] - 1e-12);
      EXPECT_LE(p, 1.2 * ref[i] + 1e-12);
      EXPECT_DOUBLE_EQ(p, env.config().multipliers[a[i]] * ref[i]);
    }
  }
}

TEST(PricingEnvTest, ResetStartsAtReferencePrices) {
  PricingEnv env(fixture_market(), fixture_config());
  const auto o = env.reset(parse_date("2011-10-07"), 9);
  EXPECT_EQ(o.size(), 2 * obs::kDim);
  EXPECT_EQ(env.state().price, env.market().catalog().reference_price);
  EXPECT_EQ(env.state().t, 0);
  EXPECT_EQ(env.progress(), 0.0);
  for (double v : o) EXPECT_TRUE(std::isfinite(v));
}

TEST(PricingEnvTest, ResetIsDeterministic) {
  PricingEnv a(fixture_market(0.6), fixture_config());
  PricingEnv b(fixture_market(0.6), fixture_config());
  EXPECT_EQ(a.reset(parse_date("2011-10-05"), 77),
            b.reset(parse_date("2011-10-05"), 77));
  EXPECT_EQ(a.state(), b.state());
  const std::vector<int> act = {1, 3};
  while (!a.done()) {
    const auto ra = a.step(act);
    const auto rb = b.step(act);
    EXPECT_EQ(ra.quantity, rb.quantity);
    EXPECT_EQ(ra.reward, rb.reward);
    EXPECT_EQ(a.observe(), b.observe());
  }
}

TEST(PricingEnvTest, CommonRandomNumbersAcrossActions) {
  // Demand ignores price here, so equal keys must give equal quantities.
  PricingEnv a(fixture_market(0.6), fixture_config());
  PricingEnv b(fixture_market(0.6), fixture_config());
  a.reset(parse_date("2011-10-05"), 123);
  b.reset(parse_date("2011-10-05"), 123);
  const std::vector<int> lo = {0, 0}, hi = {4, 4};
  bool any_noise = false;
  while (!a.done()) {
    const auto ra = a.step(lo);
    const auto rb = b.step(hi);
    EXPECT_EQ(ra.quantity, rb.quantity);
    any_noise = any_noise || ra.quantity[0] != 5;
  }
  EXPECT_TRUE(any_noise);
}

TEST(PricingEnvTest, StartDayBounds) {
  PricingEnv env(fixture_market(), fixture_config());
  EXPECT_EQ(env.first_start(), parse_date("2011-10-01"));
  EXPECT_EQ(env.last_start(), parse_date("2011-10-26"));
  EXPECT_EQ(env.num_starts(), 26);
  EXPECT_NO_THROW(env.reset(parse_date("2011-10-26"), 1));
  try {
    env.reset(parse_date("2011-10-27"), 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("max valid start 2011-10-26"),
              std::string::npos);
  }
  EXPECT_THROW(env.reset(parse_date("2011-09-30"), 1), Error);
}

TEST(PricingEnvTest, HorizonMustFitWindow) {
  EnvConfig c = fixture_config();
  c.horizon = 31;
  EXPECT_THROW(PricingEnv(fixture_market(), c), ConfigError);
}

TEST(PricingEnvTest, StepContract) {
  PricingEnv env(fixture_market(), fixture_config());
  const std::vector<int> ok = {2, 2};
  EXPECT_THROW(env.step(ok), Error);
  env.reset(parse_date("2011-10-01"), 1);
  const std::vector<int> short_a = {2};
  const std::vector<int> bad = {2, 5};
  EXPECT_THROW(env.step(short_a), Error);
  EXPECT_THROW(env.step(bad), Error);
  for (int t = 0; t < 4; ++t) EXPECT_FALSE(env.step(ok).done);
  EXPECT_TRUE(env.step(ok).done);
  EXPECT_EQ(env.progress(), 1.0);
  EXPECT_THROW(env.step(ok), Error);
}

TEST(PricingEnvTest, HistoryAdvancesWithSimulatedDemand) {
  PricingEnv env(fixture_market(), fixture_config());
  env.reset(parse_date("2011-10-01"), 1);
  const std::vector<int> ok = {2, 2};
  env.step(ok);
  EXPECT_DOUBLE_EQ(env.raw_observation(0)[obs::kLag1], std::log1p(5.0));
  EXPECT_DOUBLE_EQ(env.raw_observation(1)[obs::kLag1], std::log1p(6.0));
}

TEST(TrajectoryTest, CsvHasOneRowPerSkuDay) {
  PricingEnv env(fixture_market(), fixture_config());
  env.reset(parse_date("2011-10-01"), 1);
  std::vector<TrajectoryRow> rows;
  const std::vector<int> a = {1, 3};
  while (!env.done()) append_trajectory(env, env.step(a), rows);
  ASSERT_EQ(rows.size(), 10u);
  EXPECT_EQ(rows[0].day, parse_date("2011-10-01"));
  EXPECT_EQ(rows[9].day, parse_date("2011-10-05"));
  EXPECT_DOUBLE_EQ(rows[0].price, 9.0);
  const auto p = std::filesystem::path(testing::TempDir()) / "traj.csv";
  write_trajectory_csv(rows, env.market().catalog(), p);
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "day,sku,price,quantity,profit");
  std::getline(in, line);
  EXPECT_EQ(line, "2011-10-01,A,9,5,15");
  int n = 1;
  while (std::getline(in, line)) ++n;
  EXPECT_EQ(n, 10);
}

}  // namespace
}  // namespace pricelab
