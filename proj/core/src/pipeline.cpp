#include "pricelab/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>
#include <vector>

#include "pricelab/csv.hpp"
#include "pricelab/demand.hpp"
#include "pricelab/error.hpp"
#include "pricelab/eval.hpp"
#include "pricelab/graph.hpp"
#include "pricelab/ingest.hpp"
#include "pricelab/manifest.hpp"
#include "pricelab/marl.hpp"

namespace pricelab {

namespace fs = std::filesystem;

namespace {

nlohmann::json manifest_config(const RunConfig& c) {
  auto j = c.to_json();
  j.erase("work_dir");
  return j;
}

void write_json(const nlohmann::json& j, const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

fs::path fresh_dir(const fs::path& p) {
  fs::create_directories(p);
  return p;
}

std::string seed_dir_name(std::uint64_t seed) {
  return "seed_" + std::to_string(seed);
}

fs::path run_dir(const RunConfig& c, Architecture a, std::uint64_t seed) {
  return stage_dir(c, "train") / to_string(a) / seed_dir_name(seed);
}

std::string lambda_label(double l) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", l);
  return buf;
}

std::string sweep_checkpoint_name(double lambda, std::uint64_t seed) {
  return "lambda_" + lambda_label(lambda) + "_" + seed_dir_name(seed) + ".json";
}

// Verified output hashes of the given upstream stages.
std::map<std::string, std::string> verify_upstream(
    const RunConfig& c, std::initializer_list<const char*> stages) {
  std::map<std::string, std::string> all;
  for (const char* s : stages) {
    auto h = verify_stage(stage_dir(c, s), s);
    all.insert(h.begin(), h.end());
  }
  return all;
}

}  // namespace

fs::path stage_dir(const RunConfig& config, std::string_view stage) {
  return config.work_dir / std::string(stage);
}

EnvConfig train_env_config(const RunConfig& config) {
  EnvConfig e = config.env;
  e.window = {config.window.start, add_days(config.split, -1)};
  return e;
}

EnvConfig test_env_config(const RunConfig& config) {
  EnvConfig e = config.env;
  e.window = {config.split, config.window.end};
  return e;
}

std::shared_ptr<const MarketModel> load_market(const RunConfig& config) {
  const fs::path ing = stage_dir(config, "ingest");
  const fs::path gr = stage_dir(config, "graph");
  const fs::path fit = stage_dir(config, "fit");
  Catalog catalog = read_catalog_csv(ing / "catalog.csv");
  SalesPanel panel = read_panel_csv(ing / "panel.csv", catalog);
  ItemGraph graph = load_graph(gr / "edges.csv", gr / "graph.json");
  DemandOracle oracle = DemandOracle::load(fit / "oracle.json");
  const DateRange norm{config.window.start, add_days(config.split, -1)};
  return std::make_shared<const MarketModel>(std::move(catalog), std::move(panel),
                                             std::move(graph), std::move(oracle),
                                             norm);
}

void cmd_ingest(const RunConfig& config, std::ostream& log) {
  config.validate();
  if (!fs::exists(config.data)) {
    throw Error("data file not found: " + config.data.string());
  }
  const fs::path dir = fresh_dir(stage_dir(config, "ingest"));
  const LoadResult loaded = load_transactions(config.data);
  const auto cleaned = clean(loaded.rows);
  TrimParams tp;
  tp.window = config.window;
  tp.top_n = config.top_n;
  tp.cost_ratio = config.cost_ratio;
  tp.reference_until = config.split;
  const TrimResult trimmed = trim(cleaned, tp);
  const DatasetSummary s = summarize(trimmed.rows);

  write_catalog_csv(trimmed.catalog, dir / "catalog.csv");
  write_panel_csv(trimmed.panel, trimmed.catalog, dir / "panel.csv");
  write_transactions_csv(trimmed.rows, dir / "transactions.csv");
  write_rejects_csv(loaded.rejects, dir / "rejects.csv");
  const nlohmann::json summary = {{"raw_rows", loaded.rows.size() + loaded.rejects.size()},
                                  {"rejected_rows", loaded.rejects.size()},
                                  {"clean_rows", cleaned.size()},
                                  {"transactions", s.transactions},
                                  {"invoices", s.invoices},
                                  {"customers", s.customers},
                                  {"skus", s.skus}};
  write_json(summary, dir / "summary.json");

  Manifest m;
  m.stage = "ingest";
  m.config = manifest_config(config);
  m.inputs["data"] = sha256_file(config.data);
  m.details = summary;
  write_manifest(m, dir, {"catalog.csv", "panel.csv", "transactions.csv",
                          "rejects.csv", "summary.json"});
  log << "ingest: " << s.transactions << " transactions, " << s.invoices
      << " invoices, " << s.customers << " customers, " << s.skus << " SKUs\n";
}

void cmd_graph(const RunConfig& config, std::ostream& log) {
  config.validate();
  Manifest m;
  m.stage = "graph";
  m.config = manifest_config(config);
  m.inputs = verify_upstream(config, {"ingest"});
  const fs::path ing = stage_dir(config, "ingest");
  const fs::path dir = fresh_dir(stage_dir(config, "graph"));

  const Catalog catalog = read_catalog_csv(ing / "catalog.csv");
  const LoadResult rows = load_transactions(ing / "transactions.csv");
  const WeightMatrix w = cooccurrence_counts(rows.rows, catalog, config.edge_weight);
  const ItemGraph g = build_graph(w, config.tau, config.k);
  const auto comps = weak_components(g);
  save_graph(g, dir / "edges.csv", dir / "graph.json");
  const nlohmann::json summary = {
      {"nodes", g.num_nodes()},
      {"edges", g.num_edges()},
      {"components", comps.size()},
      {"largest_component", comps.empty() ? 0 : comps.front().size()}};
  write_json(summary, dir / "summary.json");
  m.details = summary;
  write_manifest(m, dir, {"edges.csv", "graph.json", "summary.json"});
  log << "graph: " << g.num_edges() << " directed edges, " << comps.size()
      << " weak component(s)\n";
}

void cmd_fit(const RunConfig& config, std::ostream& log) {
  config.validate();
  Manifest m;
  m.stage = "fit";
  m.config = manifest_config(config);
  m.inputs = verify_upstream(config, {"ingest", "graph"});
  const fs::path ing = stage_dir(config, "ingest");
  const fs::path gr = stage_dir(config, "graph");
  const fs::path dir = fresh_dir(stage_dir(config, "fit"));

  const Catalog catalog = read_catalog_csv(ing / "catalog.csv");
  const SalesPanel panel = read_panel_csv(ing / "panel.csv", catalog);
  const ItemGraph graph = load_graph(gr / "edges.csv", gr / "graph.json");
  FitOptions fo;
  fo.split = config.split;
  fo.ridge = config.ridge;
  fo.min_observations = config.min_observations;
  const FitResult r = fit(panel, catalog, graph, fo);
  r.oracle.save(dir / "oracle.json");
  write_diagnostics_csv(r.diagnostics, dir / "diagnostics.csv");
  const auto& a = r.diagnostics.aggregate;
  m.details = {{"r2_log1p", a.r2_log1p},
               {"rmse", a.rmse},
               {"mape", a.mape},
               {"weighted_rmse", a.weighted_rmse},
               {"weighted_mape", a.weighted_mape},
               {"pooled_fallbacks", r.diagnostics.pooled_fallbacks}};
  write_manifest(m, dir, {"oracle.json", "diagnostics.csv"});
  log << "fit: held-out R2(log1p) " << a.r2_log1p << ", RMSE " << a.rmse
      << ", MAPE " << a.mape << "%\n";
}

int cmd_train(const RunConfig& config, std::ostream& log, std::size_t jobs) {
  config.validate();
  const auto inputs = verify_upstream(config, {"ingest", "graph", "fit"});
  const auto market = load_market(config);
  const TrainingSetup setup = make_training_setup(
      market, train_env_config(config), config.split, config.validation_days);
  const std::size_t actions = config.env.multipliers.size();

  struct Run {
    Architecture arch;
    std::uint64_t seed;
    std::string message;
    bool failed = false;
  };
  std::vector<Run> runs;
  for (Architecture arch : config.architectures) {
    for (std::uint64_t seed : config.seeds) {
      fresh_dir(run_dir(config, arch, seed));
      runs.push_back({arch, seed, {}, false});
    }
  }

  auto execute = [&](Run& run) {
    const Architecture arch = run.arch;
    const std::uint64_t seed = run.seed;
    const fs::path dir = run_dir(config, arch, seed);
    TrainConfig tc = config.train;
    tc.seed = seed;
    std::ostringstream msg;
    try {
      const PolicyOptions po = default_policy_options(arch, actions);
      TrainResult r = train(tc, setup, po);
      const nlohmann::json meta = {{"architecture", to_string(arch)},
                                   {"seed", seed},
                                   {"best_update", r.best_update},
                                   {"validation_profit", r.best_validation_profit}};
      save_checkpoint(*r.best, meta, dir / "best.json");
      save_checkpoint(*r.last, meta, dir / "last.json");
      write_curve_csv(r.curve, dir / "curve.csv");
      const nlohmann::json summary = {
          {"architecture", to_string(arch)},
          {"seed", seed},
          {"updates", r.updates},
          {"best_update", r.best_update},
          {"best_validation_profit", r.best_validation_profit},
          {"reward_scale", r.reward_scale},
          {"parameters", r.best->parameter_count()},
          {"diverged", r.diverged},
          {"divergence", r.divergence_message}};
      write_json(summary, dir / "summary.json");
      Manifest m;
      m.stage = "train";
      m.config = manifest_config(config);
      m.config["train"]["ppo"]["seed"] = seed;
      m.inputs = inputs;
      m.details = summary;
      write_manifest(m, dir, {"best.json", "last.json", "curve.csv", "summary.json"});
      msg << "train " << to_string(arch) << " seed " << seed << ": " << r.updates
          << " updates, best validation profit " << r.best_validation_profit
          << (r.diverged ? " (diverged)" : "") << "\n";
    } catch (const std::exception& e) {
      run.failed = true;
      std::ofstream(dir / "error.txt") << e.what() << '\n';
      msg << "train " << to_string(arch) << " seed " << seed
          << " failed: " << e.what() << "\n";
    }
    run.message = msg.str();
  };

  // Runs are independent and seeded, so the thread count does not change
  // any output. Messages are logged in (architecture, seed) order.
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min(jobs, runs.size());
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < runs.size(); i = next++) execute(runs[i]);
      });
    }
  }
  int failures = 0;
  for (const Run& run : runs) {
    log << run.message;
    failures += run.failed;
  }
  return failures;
}

void cmd_eval(const RunConfig& config, std::ostream& log) {
  config.validate();
  auto inputs = verify_upstream(config, {"ingest", "graph", "fit"});
  const auto market = load_market(config);
  const EnvConfig env = test_env_config(config);
  const fs::path dir = fresh_dir(stage_dir(config, "eval"));
  std::vector<std::string> outputs;
  std::map<Architecture, std::vector<EpisodeResult>> by_arch;

  for (Architecture arch : config.architectures) {
    std::vector<EpisodeResult> all;
    for (std::uint64_t seed : config.seeds) {
      const fs::path rd = run_dir(config, arch, seed);
      const auto h = verify_stage(rd, "train");
      for (const auto& [k, v] : h) {
        inputs[to_string(arch) + "/" + seed_dir_name(seed) + "/" + k] = v;
      }
      const LoadedCheckpoint ck = load_checkpoint(rd / "best.json");
      EvalOptions eo;
      eo.episodes = config.episodes;
      eo.seed = seed;
      eo.crn_namespace = config.crn_namespace;
      eo.method = to_string(arch);
      auto res = evaluate(greedy_policy(ck.model->policy), market, env, eo);
      all.insert(all.end(), res.begin(), res.end());
    }
    const std::string file = to_string(arch) + ".csv";
    write_episode_results_csv(all, dir / file);
    outputs.push_back(file);
    log << "eval " << to_string(arch) << ": " << all.size() << " episodes\n";
    by_arch[arch] = std::move(all);
  }

  // Static reference-price baseline under the same keys.
  std::vector<EpisodeResult> ref;
  const std::vector<int> ref_actions(market->num_skus(),
                                     static_cast<int>(env.reference_action()));
  for (std::uint64_t seed : config.seeds) {
    EvalOptions eo;
    eo.episodes = config.episodes;
    eo.seed = seed;
    eo.crn_namespace = config.crn_namespace;
    eo.method = "reference";
    auto res = evaluate(static_policy(ref_actions), market, env, eo);
    ref.insert(ref.end(), res.begin(), res.end());
  }
  write_episode_results_csv(ref, dir / "reference.csv");
  outputs.push_back("reference.csv");

  if (by_arch.count(Architecture::kMappo) && by_arch.count(Architecture::kMappoGat)) {
    const EvalReport rep =
        paired_stats(by_arch[Architecture::kMappo], by_arch[Architecture::kMappoGat],
                     config.bootstrap_resamples);
    write_report(rep, dir / "report.json", dir / "per_seed.csv");
    outputs.push_back("report.json");
    outputs.push_back("per_seed.csv");
    log << "eval: " << rep.method_b << " vs " << rep.method_a << " wins "
        << rep.wins << ", losses " << rep.losses << ", ties " << rep.ties
        << ", mean difference " << rep.mean_difference << " [" << rep.difference_ci.low
        << ", " << rep.difference_ci.high << "]\n";
  }
  Manifest m;
  m.stage = "eval";
  m.config = manifest_config(config);
  m.inputs = inputs;
  write_manifest(m, dir, outputs);
}

void cmd_sweep(const RunConfig& config, std::ostream& log) {
  config.validate();
  const auto inputs = verify_upstream(config, {"ingest", "graph", "fit"});
  const auto market = load_market(config);
  const Architecture arch = config.architectures.front();
  const fs::path dir = fresh_dir(stage_dir(config, "sweep"));
  TrainConfig tc = config.train;
  if (config.lambda_sweep_steps > 0) tc.total_steps = config.lambda_sweep_steps;
  const PolicyOptions po = default_policy_options(arch, config.env.multipliers.size());

  auto make_policy = [&](double lambda, std::uint64_t seed) {
    TrainConfig tc_seed = tc;
    tc_seed.seed = seed;
    EnvConfig base = train_env_config(config);
    base.lambda_stab = lambda;
    const TrainingSetup setup =
        make_training_setup(market, base, config.split, config.validation_days);
    TrainResult r = train(tc_seed, setup, po);
    if (r.diverged) throw NonFiniteError(r.divergence_message);
    save_checkpoint(*r.best, {{"lambda_stab", lambda}, {"seed", seed}},
                    dir / sweep_checkpoint_name(lambda, seed));
    log << "sweep: lambda " << lambda << " seed " << seed << " trained ("
        << r.updates << " updates)\n";
    return greedy_policy(r.best->policy);
  };
  EvalOptions eo;
  eo.episodes = config.episodes;
  eo.crn_namespace = config.crn_namespace;
  eo.method = to_string(arch);
  const auto rows = lambda_sweep(config.lambda_grid, config.lambda_sweep_seeds,
                                 make_policy, market,
                                 test_env_config(config), eo);
  write_frontier_csv(rows, dir / "lambda_frontier.csv");
  std::vector<std::string> outputs = {"lambda_frontier.csv"};
  for (const auto& r : rows) {
    if (!r.error.empty()) continue;
    for (std::uint64_t seed : config.lambda_sweep_seeds) {
      outputs.push_back(sweep_checkpoint_name(r.lambda, seed));
    }
  }
  Manifest m;
  m.stage = "sweep";
  m.config = manifest_config(config);
  m.inputs = inputs;
  write_manifest(m, dir, outputs);
}

void cmd_report(const RunConfig& config, std::ostream& log) {
  const fs::path ev = stage_dir(config, "eval");
  if (!fs::exists(ev / kManifestFile)) {
    throw Error("no evaluation outputs in " + ev.string() + "; run `pricelab eval` first");
  }
  Manifest m;
  m.stage = "report";
  m.config = manifest_config(config);
  m.inputs = verify_stage(ev, "eval");
  const fs::path a_csv = ev / (to_string(Architecture::kMappo) + ".csv");
  const fs::path b_csv = ev / (to_string(Architecture::kMappoGat) + ".csv");
  if (!fs::exists(a_csv) || !fs::exists(b_csv)) {
    throw Error("report needs evaluations of both mappo and mappo-gat in " +
                ev.string() + "; run `pricelab eval` for both architectures");
  }
  const fs::path dir = fresh_dir(stage_dir(config, "report"));
  const auto a = read_episode_results_csv(a_csv);
  const auto b = read_episode_results_csv(b_csv);
  const EvalReport rep = paired_stats(a, b, config.bootstrap_resamples);
  write_report(rep, dir / "report.json", dir / "per_seed.csv");
  write_figure_data(rep, dir);
  std::vector<std::string> outputs = {
      "report.json", "per_seed.csv", "fig1_profit_ci.csv",
      "fig2_difference_histogram.csv", "fig3_seed_differences.csv",
      "fig4_win_loss.csv", "fig5_jain.csv", "fig6_stability.csv"};
  const fs::path sweep = stage_dir(config, "sweep");
  if (fs::exists(sweep / kManifestFile)) {
    auto h = verify_stage(sweep, "sweep");
    m.inputs.insert(h.begin(), h.end());
    fs::copy_file(sweep / "lambda_frontier.csv", dir / "lambda_frontier.csv",
                  fs::copy_options::overwrite_existing);
    outputs.push_back("lambda_frontier.csv");
  }
  write_manifest(m, dir, outputs);
  log << "report: " << rep.seeds.size() << " seeds, " << rep.method_b
      << " wins " << rep.wins << "/" << rep.seeds.size() << "\n";
}

}  // namespace pricelab
