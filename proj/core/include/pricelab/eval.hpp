#ifndef PRICELAB_EVAL_HPP_
#define PRICELAB_EVAL_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "pricelab/env.hpp"
#include "pricelab/marl.hpp"

namespace pricelab {

struct EpisodeResult {
  std::uint64_t seed = 0;
  std::size_t episode = 0;
  std::string method;
  Date start_day{};
  double profit = 0.0;              // sum of sku_profit; no stability penalty
  std::vector<double> sku_profit;
  double stability = 0.0;           // mean absolute % price change
  double jain = 1.0;
  bool jain_all_zero = false;
};

// Maps the current environment and its normalized observations to actions.
using ActionFn =
    std::function<std::vector<int>(const PricingEnv&, const Observations&)>;

// Greedy (argmax) actions of a trained actor. The closure owns a copy of it.
ActionFn greedy_policy(const PolicySet& policy);
// Always plays the same action vector.
ActionFn static_policy(std::vector<int> actions);

// Key of evaluation episode e: hash(namespace, seed, e).
RngKey episode_key(std::string_view crn_namespace, std::uint64_t seed,
                   std::size_t episode);
// Start day drawn deterministically from the episode key.
Date episode_start(const PricingEnv& env, RngKey key);

struct EvalOptions {
  std::size_t episodes = 100;
  std::uint64_t seed = 0;
  std::string crn_namespace = "eval";
  std::string method = "policy";
};

// Runs `options.episodes` episodes. Episode e resets the environment with
// episode_key(ns, seed, e), so two methods evaluated with the same namespace
// and seed face identical start days and demand noise. Profit accounting
// ignores lambda_stab. Optional `trajectory` receives per-SKU daily rows.
std::vector<EpisodeResult> evaluate(const ActionFn& act,
                                    std::shared_ptr<const MarketModel> market,
                                    const EnvConfig& config,
                                    const EvalOptions& options,
                                    std::vector<TrajectoryRow>* trajectory = nullptr);

struct JainResult {
  double value = 1.0;
  bool all_zero = false;
};

// (sum x)^2 / (n sum x^2) after clipping negatives to zero. An all-zero
// vector is reported as 1 with `all_zero` set. Throws Error when empty.
JainResult jain_index(std::span<const double> values);

// Mean over t >= 1 and SKUs of |p_t - p_{t-1}| / p_{t-1}, in percent.
// `prices[t]` is the price vector in force at step t. Throws Error for fewer
// than two steps or ragged rows.
double stability_metric(const std::vector<std::vector<double>>& prices);

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

// Percentile bootstrap of the mean: `resamples` draws with replacement from
// `values` using RngStream(key); returns the 2.5% and 97.5% quantiles.
Interval bootstrap_mean_ci(std::span<const double> values,
                           std::size_t resamples, RngKey key,
                           double level = 0.95);

struct SeedSummary {
  std::uint64_t seed = 0;
  std::size_t episodes = 0;
  double mean_a = 0.0;
  double mean_b = 0.0;
  double median_a = 0.0;
  double median_b = 0.0;
  double difference = 0.0;  // mean(B - A)
  double jain_a = 0.0;      // mean per-episode Jain
  double jain_b = 0.0;
  double stability_a = 0.0; // mean per-episode stability (%)
  double stability_b = 0.0;
};

struct EvalReport {
  std::string method_a;
  std::string method_b;
  std::vector<SeedSummary> seeds;         // ascending seed
  std::vector<double> episode_differences;  // B - A, ordered by (seed, episode)
  int wins = 0;
  int losses = 0;
  int ties = 0;
  double mean_difference = 0.0;
  Interval difference_ci;
  Interval ci_a;  // bootstrap CI of the per-seed mean profit of A
  Interval ci_b;
  double mean_a = 0.0;
  double mean_b = 0.0;
  std::size_t resamples = 0;
  std::size_t all_zero_jain_episodes = 0;

  nlohmann::json to_json() const;
};

// Pairs results by (seed, episode). Win when the per-seed mean of B - A is
// positive, tie when it is exactly zero. Throws Error listing unmatched keys.
EvalReport paired_stats(std::span<const EpisodeResult> a,
                        std::span<const EpisodeResult> b,
                        std::size_t resamples = 10000, RngKey key = 0x5eed);

struct FrontierRow {
  double lambda = 0.0;
  double mean_profit = 0.0;
  double mean_stability = 0.0;
  std::size_t seeds = 0;
  std::size_t episodes = 0;  // summed over seeds
  std::string error;  // non-empty when producing a policy failed
};

// For each lambda and seed, `make_policy(lambda, seed)` trains or loads a
// policy; it is then evaluated with lambda_stab = lambda in the environment
// (profits exclude the penalty) and options.seed = seed, so one seed's
// policies see the same episodes at every lambda. Rows average over all
// seeds. A failure at one lambda is recorded in its row.
std::vector<FrontierRow> lambda_sweep(
    std::span<const double> grid, std::span<const std::uint64_t> seeds,
    const std::function<ActionFn(double, std::uint64_t)>& make_policy,
    std::shared_ptr<const MarketModel> market, const EnvConfig& config,
    const EvalOptions& options);

void write_episode_results_csv(std::span<const EpisodeResult> results,
                               const std::filesystem::path& p);
std::vector<EpisodeResult> read_episode_results_csv(const std::filesystem::path& p);
void write_report(const EvalReport& report, const std::filesystem::path& json,
                  const std::filesystem::path& per_seed_csv);
void write_frontier_csv(std::span<const FrontierRow> rows,
                        const std::filesystem::path& p);

// Plot-data CSVs fig1..fig6 in `dir`: mean profit with CI bars, paired
// difference histogram, per-seed differences, win/loss/tie counts, Jain
// deltas and stability deltas.
void write_figure_data(const EvalReport& report, const std::filesystem::path& dir,
                       std::size_t histogram_bins = 20);

}  // namespace pricelab

#endif  // PRICELAB_EVAL_HPP_
