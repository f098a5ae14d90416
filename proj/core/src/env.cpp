#include "pricelab/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pricelab/csv.hpp"
#include "pricelab/error.hpp"

namespace pricelab {

void EnvConfig::validate() const {
  if (multipliers.empty()) throw ConfigError("env: multiplier set is empty");
  for (std::size_t i = 0; i < multipliers.size(); ++i) {
    const double m = multipliers[i];
    if (!(m >= 0.5 && m <= 2.0)) {
      throw ConfigError("env: multiplier " + csv::format_double(m) +
                        " outside [0.5, 2.0]");
    }
    if (i > 0 && !(m > multipliers[i - 1])) {
      throw ConfigError("env: multipliers must be strictly ascending");
    }
  }
  if (std::find(multipliers.begin(), multipliers.end(), 1.0) ==
      multipliers.end()) {
    throw ConfigError("env: multiplier set must contain 1.0");
  }
  if (horizon < 1) throw ConfigError("env: horizon must be >= 1");
  if (!(lambda_stab >= 0.0)) throw ConfigError("env: lambda_stab must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ConfigError("env: gamma must lie in (0, 1]");
  }
}

std::size_t EnvConfig::reference_action() const {
  auto it = std::find(multipliers.begin(), multipliers.end(), 1.0);
  if (it == multipliers.end()) {
    throw ConfigError("env: multiplier set must contain 1.0");
  }
  return static_cast<std::size_t>(it - multipliers.begin());
}

std::size_t action_space(const EnvConfig& config) {
  config.validate();
  return config.multipliers.size();
}

RawObservation make_observation(double price, double reference_price,
                                const DemandHistory& history, Date day,
                                Date origin) {
  RawObservation o{};
  o[obs::kLogPrice] = std::log(price);
  o[obs::kPriceRatio] = price / reference_price;
  o[obs::kLag1] = std::log1p(history.lag1);
  o[obs::kLag7] = std::log1p(history.lag7);
  o[obs::kEma] = std::log1p(history.ema);
  o[obs::kTrend] = days_between(origin, day) / 365.0;
  o[obs::kWeekday + weekday_index(day)] = 1.0;
  o[obs::kMonth + month_index(day)] = 1.0;
  return o;
}

ObservationNormalizer ObservationNormalizer::fit(const SalesPanel& panel,
                                                 const Catalog& catalog,
                                                 DateRange window) {
  const auto prices = historic_prices(panel, catalog);
  const int first = kMinHistoryDays;
  const int last = std::min(panel.num_days() - 1,
                            days_between(panel.window().start, window.end));
  if (last < first) {
    throw Error("ObservationNormalizer: normalization window has no days with "
                "seven days of history");
  }
  std::array<double, obs::kDim> sum{}, sq{};
  double count = 0.0;
  for (std::size_t i = 0; i < panel.num_skus(); ++i) {
    DemandHistoryBuffer hist(panel, i, first);
    for (int d = first; d <= last; ++d) {
      const auto o = make_observation(prices[d - 1][i], catalog.reference_price[i],
                                      hist.view(), panel.date_at(d),
                                      panel.window().start);
      for (std::size_t k = 0; k < obs::kDim; ++k) {
        sum[k] += o[k];
        sq[k] += o[k] * o[k];
      }
      count += 1.0;
      hist.push(static_cast<double>(panel.quantity(i, d)));
    }
  }
  ObservationNormalizer norm;
  for (std::size_t k = 0; k < obs::kDim; ++k) {
    norm.mean[k] = sum[k] / count;
    const double var = std::max(0.0, sq[k] / count - norm.mean[k] * norm.mean[k]);
    norm.scale[k] = var > 1e-12 ? std::sqrt(var) : 1.0;
  }
  return norm;
}

void ObservationNormalizer::apply(const RawObservation& raw,
                                  std::span<double> out) const {
  for (std::size_t k = 0; k < obs::kDim; ++k) {
    out[k] = (raw[k] - mean[k]) / scale[k];
  }
}

MarketModel::MarketModel(Catalog catalog, SalesPanel panel, ItemGraph graph,
                         DemandOracle oracle, DateRange normalization_window)
    : catalog_(std::move(catalog)),
      panel_(std::move(panel)),
      graph_(std::move(graph)),
      oracle_(std::move(oracle)) {
  const std::size_t n = catalog_.size();
  if (panel_.num_skus() != n || graph_.num_nodes() != n ||
      oracle_.num_skus() != n) {
    throw Error("MarketModel: catalog, panel, graph and oracle disagree on the "
                "number of SKUs");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(catalog_.unit_cost[i] > 0.0 &&
          catalog_.unit_cost[i] < catalog_.reference_price[i])) {
      throw Error("MarketModel: need 0 < unit cost < reference price for " +
                  catalog_.skus[i]);
    }
  }
  normalizer_ = ObservationNormalizer::fit(panel_, catalog_, normalization_window);
}

PricingEnv::PricingEnv(std::shared_ptr<const MarketModel> market,
                       EnvConfig config)
    : market_(std::move(market)), config_(std::move(config)) {
  if (!market_) throw Error("PricingEnv: null market");
  config_.validate();
  const DateRange& pw = market_->panel().window();
  if (!config_.window.valid() || !pw.contains(config_.window.start) ||
      !pw.contains(config_.window.end)) {
    throw ConfigError("env: window " + format_date(config_.window.start) + ".." +
                      format_date(config_.window.end) +
                      " must lie inside the panel window");
  }
  if (last_start() < first_start()) {
    throw ConfigError("env: horizon " + std::to_string(config_.horizon) +
                      " does not fit in the window");
  }
}

Date PricingEnv::first_start() const {
  return std::max(config_.window.start,
                  add_days(market_->panel().window().start, kMinHistoryDays));
}

Date PricingEnv::last_start() const {
  return add_days(config_.window.end, 1 - config_.horizon);
}

Observations PricingEnv::reset(Date start_day, RngKey episode_key) {
  if (start_day < first_start() || start_day > last_start()) {
    throw Error("reset: start day " + format_date(start_day) +
                " invalid for horizon " + std::to_string(config_.horizon) +
                "; valid starts are " + format_date(first_start()) + ".." +
                format_date(last_start()) + " (max valid start " +
                format_date(last_start()) + ")");
  }
  const auto& m = *market_;
  const std::size_t n = num_agents();
  const int offset = m.panel().day_offset(start_day);
  state_.t = 0;
  state_.start_day = start_day;
  state_.action.assign(n, static_cast<int>(config_.reference_action()));
  state_.price = m.catalog().reference_price;
  state_.prev_price = state_.price;
  state_.history.clear();
  for (std::size_t i = 0; i < n; ++i) {
    state_.history.emplace_back(m.panel(), i, offset);
  }
  state_.rng = RngStream(episode_key);
  active_ = true;
  return observe();
}

StepResult PricingEnv::step(std::span<const int> actions) {
  if (!active_) throw Error("step: environment has not been reset");
  if (done()) throw Error("step: episode already finished");
  const std::size_t n = num_agents();
  if (actions.size() != n) {
    throw Error("step: expected " + std::to_string(n) + " actions, got " +
                std::to_string(actions.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (actions[i] < 0 || static_cast<std::size_t>(actions[i]) >= num_actions()) {
      throw Error("step: action index " + std::to_string(actions[i]) +
                  " for agent " + std::to_string(i) + " outside [0, " +
                  std::to_string(num_actions()) + ")");
    }
  }
  const auto& m = *market_;
  const auto& cat = m.catalog();
  const Date day = current_day();

  std::vector<double> price(n);
  for (std::size_t i = 0; i < n; ++i) {
    price[i] = config_.multipliers[actions[i]] * cat.reference_price[i];
  }

  StepResult r;
  r.sku_profit.resize(n);
  r.quantity.resize(n);
  double moved = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = make_features(price[i], cat.reference_price[i],
                                 neighbor_mean_log_price(m.graph(), i, price),
                                 state_.history[i].view(), day,
                                 m.panel().window().start);
    r.quantity[i] = m.oracle().sample(i, f, state_.rng);
    r.sku_profit[i] =
        (price[i] - cat.unit_cost[i]) * static_cast<double>(r.quantity[i]);
    moved += std::abs(std::log(price[i]) - std::log(state_.price[i]));
  }
  r.profit = std::accumulate(r.sku_profit.begin(), r.sku_profit.end(), 0.0);
  r.penalty = config_.lambda_stab * moved;
  r.reward = r.profit - r.penalty;

  for (std::size_t i = 0; i < n; ++i) {
    state_.history[i].push(static_cast<double>(r.quantity[i]));
    state_.action[i] = actions[i];
  }
  state_.prev_price = std::move(state_.price);
  state_.price = std::move(price);
  ++state_.t;
  r.done = done();
  return r;
}

RawObservation PricingEnv::raw_observation(std::size_t sku) const {
  const auto& m = *market_;
  // After the final step the calendar features refer to the day after the
  // horizon, which may fall outside the window; they only feed the
  // bootstrap value and are never acted on.
  return make_observation(state_.price[sku], m.catalog().reference_price[sku],
                          state_.history[sku].view(), current_day(),
                          m.panel().window().start);
}

Observations PricingEnv::observe() const {
  if (!active_) throw Error("observe: environment has not been reset");
  const std::size_t n = num_agents();
  Observations out(n * obs::kDim);
  for (std::size_t i = 0; i < n; ++i) {
    market_->normalizer().apply(
        raw_observation(i), std::span<double>(out).subspan(i * obs::kDim, obs::kDim));
  }
  return out;
}

void append_trajectory(const PricingEnv& env, const StepResult& result,
                       std::vector<TrajectoryRow>& rows) {
  const Date day = add_days(env.current_day(), -1);
  for (std::size_t i = 0; i < env.num_agents(); ++i) {
    rows.push_back({day, i, env.state().price[i], result.quantity[i],
                    result.sku_profit[i]});
  }
}

void write_trajectory_csv(std::span<const TrajectoryRow> rows,
                          const Catalog& catalog,
                          const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << "day,sku,price,quantity,profit\n";
  for (const auto& r : rows) {
    csv::write_record(out, {format_date(r.day), catalog.skus[r.sku],
                            csv::format_double(r.price),
                            std::to_string(r.quantity),
                            csv::format_double(r.profit)});
  }
}

}  // namespace pricelab
