#ifndef PRICELAB_CONFIG_HPP_
#define PRICELAB_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pricelab/calendar.hpp"
#include "pricelab/env.hpp"
#include "pricelab/graph.hpp"
#include "pricelab/marl.hpp"

namespace pricelab {

struct RunConfig {
  // Paths. Relative paths in a config file resolve against its directory.
  std::filesystem::path data;
  std::filesystem::path work_dir = "work";

  // ingest
  DateRange window{};
  std::size_t top_n = 60;
  double cost_ratio = 0.7;

  // graph
  double tau = 2.0;
  std::size_t k = 12;
  EdgeWeight edge_weight = EdgeWeight::kCount;

  // demand
  Date split{};
  double ridge = 1.0;
  std::size_t min_observations = 10;

  // env
  EnvConfig env;

  // train
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {0};
  std::vector<Architecture> architectures = {Architecture::kMappo,
                                             Architecture::kMappoGat};
  int validation_days = 14;

  // eval
  std::size_t episodes = 100;
  std::string crn_namespace = "eval";
  std::vector<double> lambda_grid = {0.0, 0.5, 2.0};
  std::size_t lambda_sweep_steps = 0;  // 0 = train.total_steps
  std::vector<std::uint64_t> lambda_sweep_seeds = {0};
  std::size_t bootstrap_resamples = 10000;

  // Throws ConfigError naming the offending field.
  void validate() const;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j,
                             const std::filesystem::path& base_dir = {});
  static RunConfig load(const std::filesystem::path& p);
};

std::vector<std::uint64_t> parse_seed_list(std::string_view s);  // "0,1,5-9"
std::vector<double> parse_double_list(std::string_view s);       // "0,0.5,2"

}  // namespace pricelab

#endif  // PRICELAB_CONFIG_HPP_
