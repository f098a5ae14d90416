#ifndef PRICELAB_PIPELINE_HPP_
#define PRICELAB_PIPELINE_HPP_

#include <filesystem>
#include <memory>
#include <ostream>
#include <string_view>

#include "pricelab/config.hpp"
#include "pricelab/env.hpp"

// Stage drivers behind the command-line tool. Each stage reads its upstream
// artifacts from the work directory, checks their hashes against the upstream
// manifest and writes its own outputs plus a manifest.
//
//   <work>/ingest  catalog.csv panel.csv transactions.csv rejects.csv summary.json
//   <work>/graph   edges.csv graph.json summary.json
//   <work>/fit     oracle.json diagnostics.csv
//   <work>/train/<arch>/seed_<s>  best.json last.json curve.csv summary.json
//   <work>/eval    <arch>.csv reference.csv report.json per_seed.csv
//   <work>/sweep   lambda_frontier.csv
//   <work>/report  fig1..fig6 CSVs, report.json, per_seed.csv
namespace pricelab {

std::filesystem::path stage_dir(const RunConfig& config, std::string_view stage);

// Environment config for training episodes (catalog window up to the split).
EnvConfig train_env_config(const RunConfig& config);
// Environment config for evaluation on the held-out test window.
EnvConfig test_env_config(const RunConfig& config);

// Catalog, panel, graph and oracle from a finished fit stage.
std::shared_ptr<const MarketModel> load_market(const RunConfig& config);

void cmd_ingest(const RunConfig& config, std::ostream& log);
void cmd_graph(const RunConfig& config, std::ostream& log);
void cmd_fit(const RunConfig& config, std::ostream& log);
// Trains every (architecture, seed). Returns the number of failed runs; a
// failure does not stop the remaining runs.
// Trains every (architecture, seed) run on `jobs` threads (0 = one per core).
// Returns the number of failed runs.
int cmd_train(const RunConfig& config, std::ostream& log, std::size_t jobs = 0);
void cmd_eval(const RunConfig& config, std::ostream& log);
// Trains the first configured architecture at each lambda_stab of the grid
// and writes the profit/stability frontier.
void cmd_sweep(const RunConfig& config, std::ostream& log);
void cmd_report(const RunConfig& config, std::ostream& log);

}  // namespace pricelab

#endif  // PRICELAB_PIPELINE_HPP_
