#ifndef PRICELAB_ENV_HPP_
#define PRICELAB_ENV_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "pricelab/calendar.hpp"
#include "pricelab/demand.hpp"
#include "pricelab/graph.hpp"
#include "pricelab/ingest.hpp"
#include "pricelab/rng.hpp"

namespace pricelab {

struct EnvConfig {
  std::vector<double> multipliers = {0.8, 0.9, 1.0, 1.1, 1.2};
  int horizon = 19;
  double lambda_stab = 0.0;
  double gamma = 1.0;
  DateRange window{};

  // Throws ConfigError: multipliers must be non-empty, ascending, contain 1.0
  // and lie in [0.5, 2.0]; horizon >= 1; lambda_stab >= 0; gamma in (0, 1].
  void validate() const;
  std::size_t reference_action() const;  // index of multiplier 1.0
};

std::size_t action_space(const EnvConfig& config);

// Per-agent observation layout (before normalization).
namespace obs {
inline constexpr std::size_t kLogPrice = 0;
inline constexpr std::size_t kPriceRatio = 1;
inline constexpr std::size_t kLag1 = 2;
inline constexpr std::size_t kLag7 = 3;
inline constexpr std::size_t kEma = 4;
inline constexpr std::size_t kTrend = 5;
inline constexpr std::size_t kWeekday = 6;
inline constexpr std::size_t kMonth = 13;
inline constexpr std::size_t kDim = 25;
}  // namespace obs

using RawObservation = std::array<double, obs::kDim>;

RawObservation make_observation(double price, double reference_price,
                                const DemandHistory& history, Date day,
                                Date origin);

// Frozen standardization statistics, estimated once on the training window.
struct ObservationNormalizer {
  std::array<double, obs::kDim> mean{};
  std::array<double, obs::kDim> scale{};

  static ObservationNormalizer fit(const SalesPanel& panel,
                                   const Catalog& catalog, DateRange window);
  void apply(const RawObservation& raw, std::span<double> out) const;
};

// Immutable inputs shared by every environment instance of a run.
class MarketModel {
 public:
  MarketModel(Catalog catalog, SalesPanel panel, ItemGraph graph,
              DemandOracle oracle, DateRange normalization_window);

  const Catalog& catalog() const { return catalog_; }
  const SalesPanel& panel() const { return panel_; }
  const ItemGraph& graph() const { return graph_; }
  const DemandOracle& oracle() const { return oracle_; }
  const ObservationNormalizer& normalizer() const { return normalizer_; }
  std::size_t num_skus() const { return catalog_.size(); }

 private:
  Catalog catalog_;
  SalesPanel panel_;
  ItemGraph graph_;
  DemandOracle oracle_;
  ObservationNormalizer normalizer_;
};

struct EnvState {
  int t = 0;
  Date start_day{};
  std::vector<int> action;
  std::vector<double> price;
  std::vector<double> prev_price;
  std::vector<DemandHistoryBuffer> history;
  RngStream rng{0};

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct StepResult {
  double reward = 0.0;   // profit - penalty
  double profit = 0.0;   // sum of sku_profit
  double penalty = 0.0;  // lambda_stab * sum |d log p|
  std::vector<double> sku_profit;
  std::vector<std::int64_t> quantity;
  bool done = false;
};

// Observations are a flat row-major [num_agents x obs::kDim] matrix.
using Observations = std::vector<double>;

/// Portfolio pricing MDP.
///
/// One agent per catalog SKU. An action is an index into the multiplier grid;
/// the SKU's price becomes multiplier * reference price. Each step draws
/// exactly one demand-noise normal per SKU in catalog order, so two instances
/// reset with the same episode key see the same noise regardless of the
/// actions taken.
class PricingEnv {
 public:
  PricingEnv(std::shared_ptr<const MarketModel> market, EnvConfig config);

  const EnvConfig& config() const { return config_; }
  const MarketModel& market() const { return *market_; }
  std::size_t num_agents() const { return market_->num_skus(); }
  std::size_t num_actions() const { return config_.multipliers.size(); }

  Date first_start() const;
  Date last_start() const;
  int num_starts() const { return days_between(first_start(), last_start()) + 1; }

  Observations reset(Date start_day, RngKey episode_key);
  StepResult step(std::span<const int> actions);

  Observations observe() const;
  RawObservation raw_observation(std::size_t sku) const;

  const EnvState& state() const { return state_; }
  Date current_day() const { return add_days(state_.start_day, state_.t); }
  bool done() const { return state_.t >= config_.horizon; }
  double progress() const {
    return static_cast<double>(state_.t) / config_.horizon;
  }

 private:
  std::shared_ptr<const MarketModel> market_;
  EnvConfig config_;
  EnvState state_;
  bool active_ = false;
};

struct TrajectoryRow {
  Date day{};
  std::size_t sku = 0;
  double price = 0.0;
  std::int64_t quantity = 0;
  double profit = 0.0;
};

void append_trajectory(const PricingEnv& env, const StepResult& result,
                       std::vector<TrajectoryRow>& rows);
void write_trajectory_csv(std::span<const TrajectoryRow> rows,
                          const Catalog& catalog,
                          const std::filesystem::path& p);

}  // namespace pricelab

#endif  // PRICELAB_ENV_HPP_
