// pricelab: staged pipeline driver.
//
//   pricelab synth --out data/synthetic_retail.csv
//   pricelab ingest|graph|fit|train|eval|sweep|report --config run.json
//   pricelab run --config run.json     (every stage in order)

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif

#include "pricelab/config.hpp"
#include "pricelab/error.hpp"
#include "pricelab/pipeline.hpp"
#include "pricelab/synthetic.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string seed_list;
  std::vector<std::string> arch;
  std::string lambda_grid;
  std::string out_dir;
  std::size_t jobs = 0;
};

pricelab::RunConfig resolve(const Overrides& o) {
  auto cfg = pricelab::RunConfig::load(o.config);
  if (const char* w = std::getenv("PRICELAB_WORK_DIR"); w && *w) cfg.work_dir = w;
  if (!o.out_dir.empty()) cfg.work_dir = o.out_dir;
  if (!o.seed_list.empty()) cfg.seeds = pricelab::parse_seed_list(o.seed_list);
  if (!o.arch.empty()) {
    cfg.architectures.clear();
    for (const auto& a : o.arch) {
      cfg.architectures.push_back(pricelab::architecture_from_string(a));
    }
  }
  if (!o.lambda_grid.empty()) cfg.lambda_grid = pricelab::parse_double_list(o.lambda_grid);
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "Run configuration (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--seed-list", o.seed_list, "Seeds, e.g. 0,1,2 or 0-14");
  cmd->add_option("--arch", o.arch, "Architecture (repeatable)")
      ->check(CLI::IsMember({"mappo", "mappo-gat"}));
  cmd->add_option("--lambda-grid", o.lambda_grid, "lambda_stab values, e.g. 0,0.5,2");
  cmd->add_option("--out-dir", o.out_dir,
                  "Work directory (overrides PRICELAB_WORK_DIR and the config)");
  cmd->add_option("--jobs", o.jobs, "Parallel training runs (0 = one per core)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pricelab: multi-agent dynamic pricing pipeline"};
  app.require_subcommand(1);
  Overrides o;

  std::string synth_out = "synthetic_retail.csv";
  std::uint64_t synth_seed = pricelab::default_synthetic_spec().seed;
  auto* synth = app.add_subcommand("synth", "Write the bundled synthetic transaction log");
  synth->add_option("--out", synth_out, "Output CSV");
  synth->add_option("--seed", synth_seed, "Generator seed");

  const std::vector<std::pair<std::string, std::string>> stages = {
      {"ingest", "Clean and trim raw transactions"},
      {"graph", "Build the co-purchase graph"},
      {"fit", "Fit the demand oracle"},
      {"train", "Train agents for every (architecture, seed)"},
      {"eval", "CRN-paired evaluation on the test window"},
      {"sweep", "lambda_stab profit/stability frontier"},
      {"report", "Figure data from evaluation outputs"},
      {"run", "All stages in order"}};
  std::vector<CLI::App*> cmds;
  for (const auto& [name, help] : stages) {
    auto* c = app.add_subcommand(name, help);
    add_common(c, o);
    cmds.push_back(c);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      auto spec = pricelab::default_synthetic_spec();
      spec.seed = synth_seed;
      pricelab::write_synthetic_retail(spec, std::filesystem::path(synth_out));
      std::cout << "wrote " << synth_out << "\n";
      return 0;
    }
    const auto cfg = resolve(o);
    auto& log = std::cout;
    const std::string cmd = app.get_subcommands().front()->get_name();
    int failures = 0;
    if (cmd == "ingest" || cmd == "run") pricelab::cmd_ingest(cfg, log);
    if (cmd == "graph" || cmd == "run") pricelab::cmd_graph(cfg, log);
    if (cmd == "fit" || cmd == "run") pricelab::cmd_fit(cfg, log);
    if (cmd == "train" || cmd == "run") {
      failures = pricelab::cmd_train(cfg, log, o.jobs);
    }
    if (cmd == "eval" || cmd == "run") pricelab::cmd_eval(cfg, log);
    if (cmd == "sweep" || cmd == "run") pricelab::cmd_sweep(cfg, log);
    if (cmd == "report" || cmd == "run") pricelab::cmd_report(cfg, log);
    if (failures > 0) {
      std::cerr << "pricelab: " << failures << " training run(s) failed\n";
      return 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "pricelab: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
