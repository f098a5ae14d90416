#include "pricelab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "pricelab/csv.hpp"
#include "pricelab/error.hpp"

namespace pricelab {

namespace {

double mean_of(std::span<const double> v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// Linear interpolation between order statistics (R type 7).
double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

}  // namespace

ActionFn greedy_policy(const PolicySet& policy) {
  auto copy = std::make_shared<PolicySet>(policy);
  return [copy](const PricingEnv& env, const Observations& obs) {
    return greedy_actions(*copy, env.market().graph(), obs, env.num_agents());
  };
}

ActionFn static_policy(std::vector<int> actions) {
  return [actions = std::move(actions)](const PricingEnv& env,
                                        const Observations&) {
    if (actions.size() != env.num_agents()) {
      throw Error("static policy has " + std::to_string(actions.size()) +
                  " actions for " + std::to_string(env.num_agents()) + " agents");
    }
    return actions;
  };
}

RngKey episode_key(std::string_view crn_namespace, std::uint64_t seed,
                   std::size_t episode) {
  return derive_key(hash_string(crn_namespace), {seed, episode});
}

Date episode_start(const PricingEnv& env, RngKey key) {
  RngStream r(derive_key(key, {hash_string("start-day")}));
  const auto off = r.uniform_index(static_cast<std::size_t>(env.num_starts()));
  return add_days(env.first_start(), static_cast<int>(off));
}

std::vector<EpisodeResult> evaluate(const ActionFn& act,
                                    std::shared_ptr<const MarketModel> market,
                                    const EnvConfig& config,
                                    const EvalOptions& options,
                                    std::vector<TrajectoryRow>* trajectory) {
  if (options.episodes == 0) throw ConfigError("evaluate: episodes must be >= 1");
  PricingEnv env(std::move(market), config);
  const std::size_t n = env.num_agents();
  std::vector<EpisodeResult> out;
  out.reserve(options.episodes);
  for (std::size_t e = 0; e < options.episodes; ++e) {
    const RngKey key = episode_key(options.crn_namespace, options.seed, e);
    EpisodeResult r;
    r.seed = options.seed;
    r.episode = e;
    r.method = options.method;
    r.start_day = episode_start(env, key);
    r.sku_profit.assign(n, 0.0);
    Observations o = env.reset(r.start_day, key);
    std::vector<std::vector<double>> prices{env.state().price};
    while (!env.done()) {
      const StepResult s = env.step(act(env, o));
      for (std::size_t i = 0; i < n; ++i) r.sku_profit[i] += s.sku_profit[i];
      prices.push_back(env.state().price);
      if (trajectory) append_trajectory(env, s, *trajectory);
      if (!env.done()) o = env.observe();
    }
    r.profit = std::accumulate(r.sku_profit.begin(), r.sku_profit.end(), 0.0);
    r.stability = stability_metric(prices);
    const JainResult j = jain_index(r.sku_profit);
    r.jain = j.value;
    r.jain_all_zero = j.all_zero;
    out.push_back(std::move(r));
  }
  return out;
}

JainResult jain_index(std::span<const double> values) {
  if (values.empty()) throw Error("jain_index: empty vector");
  double sum = 0.0, sq = 0.0;
  for (double v : values) {
    const double x = std::max(v, 0.0);
    sum += x;
    sq += x * x;
  }
  if (sq == 0.0) return {1.0, true};
  return {sum * sum / (static_cast<double>(values.size()) * sq), false};
}

double stability_metric(const std::vector<std::vector<double>>& prices) {
  if (prices.size() < 2) {
    throw Error("stability_metric: need at least 2 steps, got " +
                std::to_string(prices.size()));
  }
  const std::size_t n = prices.front().size();
  double total = 0.0;
  for (std::size_t t = 1; t < prices.size(); ++t) {
    if (prices[t].size() != n || prices[t - 1].size() != n) {
      throw Error("stability_metric: step " + std::to_string(t) +
                  " has a different number of SKUs");
    }
    for (std::size_t i = 0; i < n; ++i) {
      total += std::abs(prices[t][i] - prices[t - 1][i]) / prices[t - 1][i];
    }
  }
  return 100.0 * total / static_cast<double>((prices.size() - 1) * n);
}

Interval bootstrap_mean_ci(std::span<const double> values,
                           std::size_t resamples, RngKey key, double level) {
  if (values.empty()) throw Error("bootstrap: no values");
  if (resamples == 0) throw Error("bootstrap: resamples must be >= 1");
  RngStream rng(key);
  std::vector<double> means(resamples);
  const std::size_t n = values.size();
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += values[rng.uniform_index(n)];
    m = s / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double tail = 0.5 * (1.0 - level);
  return {quantile_sorted(means, tail), quantile_sorted(means, 1.0 - tail)};
}

nlohmann::json EvalReport::to_json() const {
  auto seeds_json = nlohmann::json::array();
  for (const auto& s : seeds) {
    seeds_json.push_back({{"seed", s.seed},
                          {"episodes", s.episodes},
                          {"mean_a", s.mean_a},
                          {"mean_b", s.mean_b},
                          {"median_a", s.median_a},
                          {"median_b", s.median_b},
                          {"difference", s.difference},
                          {"jain_a", s.jain_a},
                          {"jain_b", s.jain_b},
                          {"stability_a", s.stability_a},
                          {"stability_b", s.stability_b}});
  }
  return {{"method_a", method_a},
          {"method_b", method_b},
          {"wins", wins},
          {"losses", losses},
          {"ties", ties},
          {"seed_count", seeds.size()},
          {"mean_a", mean_a},
          {"mean_b", mean_b},
          {"mean_difference", mean_difference},
          {"difference_ci", {difference_ci.low, difference_ci.high}},
          {"ci_a", {ci_a.low, ci_a.high}},
          {"ci_b", {ci_b.low, ci_b.high}},
          {"bootstrap_resamples", resamples},
          {"all_zero_jain_episodes", all_zero_jain_episodes},
          {"seeds", seeds_json}};
}

EvalReport paired_stats(std::span<const EpisodeResult> a,
                        std::span<const EpisodeResult> b,
                        std::size_t resamples, RngKey key) {
  using Key = std::pair<std::uint64_t, std::size_t>;
  auto index = [](std::span<const EpisodeResult> rs, const char* side) {
    std::map<Key, const EpisodeResult*> m;
    for (const auto& r : rs) {
      if (!m.emplace(Key{r.seed, r.episode}, &r).second) {
        throw Error(std::string("paired_stats: duplicate (seed ") +
                    std::to_string(r.seed) + ", episode " +
                    std::to_string(r.episode) + ") in " + side);
      }
    }
    return m;
  };
  const auto ma = index(a, "A");
  const auto mb = index(b, "B");
  std::vector<std::string> missing;
  for (const auto& [k, _] : ma) {
    if (!mb.count(k)) missing.push_back("B lacks (" + std::to_string(k.first) + ", " + std::to_string(k.second) + ")");
  }
  for (const auto& [k, _] : mb) {
    if (!ma.count(k)) missing.push_back("A lacks (" + std::to_string(k.first) + ", " + std::to_string(k.second) + ")");
  }
  if (!missing.empty()) {
    std::string msg = "paired_stats: mismatched (seed, episode) keys:";
    for (std::size_t i = 0; i < missing.size() && i < 10; ++i) msg += " " + missing[i];
    if (missing.size() > 10) msg += " ... (" + std::to_string(missing.size()) + " total)";
    throw Error(msg);
  }
  if (ma.empty()) throw Error("paired_stats: no results");

  EvalReport rep;
  rep.method_a = a.front().method;
  rep.method_b = b.front().method;
  rep.resamples = resamples;

  std::map<std::uint64_t, std::vector<Key>> by_seed;
  for (const auto& [k, _] : ma) by_seed[k.first].push_back(k);
  std::vector<double> diffs, means_a, means_b;
  for (const auto& [seed, keys] : by_seed) {
    SeedSummary s;
    s.seed = seed;
    s.episodes = keys.size();
    std::vector<double> pa, pb, d, ja, jb, sa, sb;
    for (const auto& k : keys) {
      const auto& ra = *ma.at(k);
      const auto& rb = *mb.at(k);
      pa.push_back(ra.profit);
      pb.push_back(rb.profit);
      d.push_back(rb.profit - ra.profit);
      ja.push_back(ra.jain);
      jb.push_back(rb.jain);
      sa.push_back(ra.stability);
      sb.push_back(rb.stability);
      rep.all_zero_jain_episodes += ra.jain_all_zero + rb.jain_all_zero;
    }
    rep.episode_differences.insert(rep.episode_differences.end(), d.begin(), d.end());
    s.mean_a = mean_of(pa);
    s.mean_b = mean_of(pb);
    s.median_a = median_of(pa);
    s.median_b = median_of(pb);
    s.difference = mean_of(d);
    s.jain_a = mean_of(ja);
    s.jain_b = mean_of(jb);
    s.stability_a = mean_of(sa);
    s.stability_b = mean_of(sb);
    if (s.difference > 0.0) {
      ++rep.wins;
    } else if (s.difference < 0.0) {
      ++rep.losses;
    } else {
      ++rep.ties;
    }
    diffs.push_back(s.difference);
    means_a.push_back(s.mean_a);
    means_b.push_back(s.mean_b);
    rep.seeds.push_back(s);
  }
  rep.mean_difference = mean_of(diffs);
  rep.mean_a = mean_of(means_a);
  rep.mean_b = mean_of(means_b);
  rep.difference_ci = bootstrap_mean_ci(diffs, resamples, key);
  rep.ci_a = bootstrap_mean_ci(means_a, resamples, key);
  rep.ci_b = bootstrap_mean_ci(means_b, resamples, key);
  return rep;
}

std::vector<FrontierRow> lambda_sweep(
    std::span<const double> grid, std::span<const std::uint64_t> seeds,
    const std::function<ActionFn(double, std::uint64_t)>& make_policy,
    std::shared_ptr<const MarketModel> market, const EnvConfig& config,
    const EvalOptions& options) {
  if (grid.empty()) throw ConfigError("lambda_sweep: empty lambda grid");
  if (seeds.empty()) throw ConfigError("lambda_sweep: empty seed list");
  for (double l : grid) {
    if (!(l >= 0.0)) throw ConfigError("lambda_sweep: lambda must be >= 0");
  }
  std::vector<FrontierRow> rows;
  for (double l : grid) {
    FrontierRow row;
    row.lambda = l;
    EnvConfig cfg = config;
    cfg.lambda_stab = l;
    double p = 0.0, s = 0.0;
    try {
      for (std::uint64_t seed : seeds) {
        EvalOptions o = options;
        o.seed = seed;
        const auto results = evaluate(make_policy(l, seed), market, cfg, o);
        for (const auto& r : results) {
          p += r.profit;
          s += r.stability;
        }
        row.episodes += results.size();
        ++row.seeds;
      }
      row.mean_profit = p / static_cast<double>(row.episodes);
      row.mean_stability = s / static_cast<double>(row.episodes);
    } catch (const std::exception& e) {
      row = FrontierRow{};
      row.lambda = l;
      row.error = e.what();
    }
    rows.push_back(row);
  }
  return rows;
}

void write_episode_results_csv(std::span<const EpisodeResult> results,
                               const std::filesystem::path& p) {
  auto out = open_out(p);
  using csv::format_double;
  csv::write_record(out, {"seed", "episode", "method", "start_day", "profit",
                          "stability", "jain", "jain_all_zero", "sku_profit"});
  for (const auto& r : results) {
    std::string skus;
    for (std::size_t i = 0; i < r.sku_profit.size(); ++i) {
      if (i) skus += ';';
      skus += format_double(r.sku_profit[i]);
    }
    csv::write_record(out, {std::to_string(r.seed), std::to_string(r.episode),
                            r.method, format_date(r.start_day),
                            format_double(r.profit), format_double(r.stability),
                            format_double(r.jain), r.jain_all_zero ? "1" : "0",
                            skus});
  }
}

std::vector<EpisodeResult> read_episode_results_csv(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  std::vector<std::string> f;
  if (!csv::read_record(in, f)) throw ParseError(p.string() + ": empty file");
  const std::vector<std::string> header = f;
  auto col = [&](std::string_view name) {
    const int c = csv::column_index(header, name);
    if (c < 0) throw ParseError(p.string() + ": missing column " + std::string(name));
    return static_cast<std::size_t>(c);
  };
  const std::size_t cs = col("seed"), ce = col("episode"), cm = col("method"),
                    cd = col("start_day"), cp = col("profit"),
                    cst = col("stability"), cj = col("jain"),
                    cz = col("jain_all_zero"), ck = col("sku_profit");
  std::vector<EpisodeResult> out;
  std::size_t line = 1;
  while (csv::read_record(in, f)) {
    ++line;
    if (f.size() != header.size()) {
      throw ParseError(p.string() + ": row " + std::to_string(line) +
                       " has " + std::to_string(f.size()) + " fields");
    }
    try {
      EpisodeResult r;
      r.seed = std::stoull(f[cs]);
      r.episode = std::stoull(f[ce]);
      r.method = f[cm];
      r.start_day = parse_date(f[cd]);
      r.profit = std::stod(f[cp]);
      r.stability = std::stod(f[cst]);
      r.jain = std::stod(f[cj]);
      r.jain_all_zero = f[cz] == "1";
      std::stringstream ss(f[ck]);
      std::string item;
      while (std::getline(ss, item, ';')) r.sku_profit.push_back(std::stod(item));
      out.push_back(std::move(r));
    } catch (const std::logic_error& e) {
      throw ParseError(p.string() + ": row " + std::to_string(line) + ": " + e.what());
    }
  }
  return out;
}

void write_report(const EvalReport& report, const std::filesystem::path& json,
                  const std::filesystem::path& per_seed_csv) {
  {
    auto out = open_out(json);
    out << report.to_json().dump(2) << '\n';
  }
  auto out = open_out(per_seed_csv);
  using csv::format_double;
  csv::write_record(out, {"seed", "episodes", "mean_a", "mean_b", "median_a",
                          "median_b", "difference", "jain_a", "jain_b",
                          "stability_a", "stability_b"});
  for (const auto& s : report.seeds) {
    csv::write_record(out, {std::to_string(s.seed), std::to_string(s.episodes),
                            format_double(s.mean_a), format_double(s.mean_b),
                            format_double(s.median_a), format_double(s.median_b),
                            format_double(s.difference), format_double(s.jain_a),
                            format_double(s.jain_b), format_double(s.stability_a),
                            format_double(s.stability_b)});
  }
}

void write_frontier_csv(std::span<const FrontierRow> rows,
                        const std::filesystem::path& p) {
  auto out = open_out(p);
  using csv::format_double;
  csv::write_record(out, {"lambda_stab", "mean_profit", "mean_stability",
                          "seeds", "episodes", "error"});
  for (const auto& r : rows) {
    csv::write_record(out, {format_double(r.lambda), format_double(r.mean_profit),
                            format_double(r.mean_stability),
                            std::to_string(r.seeds), std::to_string(r.episodes),
                            r.error});
  }
}

void write_figure_data(const EvalReport& report, const std::filesystem::path& dir,
                       std::size_t histogram_bins) {
  std::filesystem::create_directories(dir);
  using csv::format_double;
  {
    auto out = open_out(dir / "fig1_profit_ci.csv");
    csv::write_record(out, {"method", "mean_profit", "ci_low", "ci_high"});
    csv::write_record(out, {report.method_a, format_double(report.mean_a),
                            format_double(report.ci_a.low),
                            format_double(report.ci_a.high)});
    csv::write_record(out, {report.method_b, format_double(report.mean_b),
                            format_double(report.ci_b.low),
                            format_double(report.ci_b.high)});
    csv::write_record(out, {"difference", format_double(report.mean_difference),
                            format_double(report.difference_ci.low),
                            format_double(report.difference_ci.high)});
  }
  {
    auto out = open_out(dir / "fig2_difference_histogram.csv");
    csv::write_record(out, {"bin_low", "bin_high", "count"});
    const auto& d = report.episode_differences;
    if (!d.empty() && histogram_bins > 0) {
      const auto [lo_it, hi_it] = std::minmax_element(d.begin(), d.end());
      const double lo = *lo_it;
      const double width =
          *hi_it > lo ? (*hi_it - lo) / static_cast<double>(histogram_bins) : 1.0;
      std::vector<std::size_t> counts(histogram_bins, 0);
      for (double x : d) {
        auto b = static_cast<std::size_t>((x - lo) / width);
        counts[std::min(b, histogram_bins - 1)]++;
      }
      for (std::size_t b = 0; b < histogram_bins; ++b) {
        csv::write_record(out, {format_double(lo + width * static_cast<double>(b)),
                                format_double(lo + width * static_cast<double>(b + 1)),
                                std::to_string(counts[b])});
      }
    }
  }
  {
    auto out = open_out(dir / "fig3_seed_differences.csv");
    csv::write_record(out, {"seed", "difference"});
    for (const auto& s : report.seeds) {
      csv::write_record(out, {std::to_string(s.seed), format_double(s.difference)});
    }
  }
  {
    auto out = open_out(dir / "fig4_win_loss.csv");
    csv::write_record(out, {"outcome", "count"});
    csv::write_record(out, {"win", std::to_string(report.wins)});
    csv::write_record(out, {"loss", std::to_string(report.losses)});
    csv::write_record(out, {"tie", std::to_string(report.ties)});
  }
  {
    auto out = open_out(dir / "fig5_jain.csv");
    csv::write_record(out, {"seed", "jain_a", "jain_b", "delta"});
    for (const auto& s : report.seeds) {
      csv::write_record(out, {std::to_string(s.seed), format_double(s.jain_a),
                              format_double(s.jain_b),
                              format_double(s.jain_b - s.jain_a)});
    }
  }
  {
    auto out = open_out(dir / "fig6_stability.csv");
    csv::write_record(out, {"seed", "stability_a", "stability_b", "delta"});
    for (const auto& s : report.seeds) {
      csv::write_record(out, {std::to_string(s.seed), format_double(s.stability_a),
                              format_double(s.stability_b),
                              format_double(s.stability_b - s.stability_a)});
    }
  }
}

}  // namespace pricelab
