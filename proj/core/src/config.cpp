#include "pricelab/config.hpp"

#include <fstream>
#include <sstream>

#include "pricelab/error.hpp"

namespace pricelab {

namespace {

std::vector<std::string> split_commas(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& p,
                              const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config field '") + key + "': " + e.what());
    }
  }
}

}  // namespace

std::vector<std::uint64_t> parse_seed_list(std::string_view s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_commas(s)) {
    if (item.empty()) throw ConfigError("seed list: empty entry in '" + std::string(s) + "'");
    try {
      const auto dash = item.find('-');
      if (dash == std::string::npos) {
        out.push_back(std::stoull(item));
      } else {
        const auto lo = std::stoull(item.substr(0, dash));
        const auto hi = std::stoull(item.substr(dash + 1));
        if (hi < lo) throw ConfigError("seed list: descending range " + item);
        for (auto v = lo; v <= hi; ++v) out.push_back(v);
      }
    } catch (const std::logic_error&) {
      throw ConfigError("seed list: cannot parse '" + item + "'");
    }
  }
  return out;
}

std::vector<double> parse_double_list(std::string_view s) {
  std::vector<double> out;
  for (const auto& item : split_commas(s)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw ConfigError("number list: cannot parse '" + item + "'");
    }
  }
  return out;
}

void RunConfig::validate() const {
  if (data.empty()) throw ConfigError("config: 'data' path is required");
  if (!window.valid()) throw ConfigError("config: ingest window is invalid");
  if (top_n == 0) throw ConfigError("config: top_n must be >= 1");
  if (!(cost_ratio > 0.0 && cost_ratio < 1.0)) {
    throw ConfigError("config: cost_ratio must be in (0, 1)");
  }
  if (!(tau > 0.0)) throw ConfigError("config: tau must be > 0");
  if (k == 0) throw ConfigError("config: k must be >= 1");
  if (!window.contains(split)) throw ConfigError("config: split must lie inside the window");
  if (!(ridge >= 0.0)) throw ConfigError("config: ridge must be >= 0");
  env.validate();
  train.validate();
  if (seeds.empty()) throw ConfigError("config: seeds must be non-empty");
  if (lambda_sweep_seeds.empty()) {
    throw ConfigError("config: lambda_sweep_seeds must be non-empty");
  }
  if (architectures.empty()) throw ConfigError("config: architectures must be non-empty");
  if (episodes == 0) throw ConfigError("config: episodes must be >= 1");
  if (lambda_grid.empty()) throw ConfigError("config: lambda_grid must be non-empty");
  for (double l : lambda_grid) {
    if (!(l >= 0.0)) throw ConfigError("config: lambda_grid values must be >= 0");
  }
  if (bootstrap_resamples == 0) throw ConfigError("config: bootstrap_resamples must be >= 1");
}

nlohmann::json RunConfig::to_json() const {
  std::vector<std::string> archs;
  for (auto a : architectures) archs.push_back(to_string(a));
  return {
      {"data", data.generic_string()},
      {"work_dir", work_dir.generic_string()},
      {"ingest",
       {{"window_start", format_date(window.start)},
        {"window_end", format_date(window.end)},
        {"top_n", top_n},
        {"cost_ratio", cost_ratio}}},
      {"graph",
       {{"tau", tau},
        {"k", k},
        {"weight", edge_weight == EdgeWeight::kCount ? "count" : "lift"}}},
      {"demand",
       {{"split", format_date(split)},
        {"ridge", ridge},
        {"min_observations", min_observations}}},
      {"env",
       {{"multipliers", env.multipliers},
        {"horizon", env.horizon},
        {"lambda_stab", env.lambda_stab},
        {"gamma", env.gamma}}},
      {"train",
       {{"ppo", train.to_json()},
        {"seeds", seeds},
        {"architectures", archs},
        {"validation_days", validation_days}}},
      {"eval",
       {{"episodes", episodes},
        {"crn_namespace", crn_namespace},
        {"lambda_grid", lambda_grid},
        {"lambda_sweep_steps", lambda_sweep_steps},
        {"lambda_sweep_seeds", lambda_sweep_seeds},
        {"bootstrap_resamples", bootstrap_resamples}}}};
}

RunConfig RunConfig::from_json(const nlohmann::json& j,
                               const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  RunConfig c;
  std::string s;
  if (j.contains("data")) {
    read(j, "data", s);
    c.data = resolve(s, base_dir);
  }
  if (j.contains("work_dir")) {
    read(j, "work_dir", s);
    c.work_dir = resolve(s, base_dir);
  } else {
    c.work_dir = resolve(c.work_dir, base_dir);
  }
  const auto empty = nlohmann::json::object();
  const auto& ing = j.contains("ingest") ? j.at("ingest") : empty;
  try {
    if (ing.contains("window_start")) c.window.start = parse_date(ing.at("window_start").get<std::string>());
    if (ing.contains("window_end")) c.window.end = parse_date(ing.at("window_end").get<std::string>());
  } catch (const ParseError& e) {
    throw ConfigError(std::string("config ingest window: ") + e.what());
  }
  read(ing, "top_n", c.top_n);
  read(ing, "cost_ratio", c.cost_ratio);

  const auto& g = j.contains("graph") ? j.at("graph") : empty;
  read(g, "tau", c.tau);
  read(g, "k", c.k);
  if (g.contains("weight")) {
    read(g, "weight", s);
    if (s == "count") {
      c.edge_weight = EdgeWeight::kCount;
    } else if (s == "lift") {
      c.edge_weight = EdgeWeight::kLift;
    } else {
      throw ConfigError("config graph.weight: expected count or lift, got " + s);
    }
  }

  const auto& d = j.contains("demand") ? j.at("demand") : empty;
  if (d.contains("split")) {
    read(d, "split", s);
    c.split = parse_date(s);
  }
  read(d, "ridge", c.ridge);
  read(d, "min_observations", c.min_observations);

  const auto& e = j.contains("env") ? j.at("env") : empty;
  read(e, "multipliers", c.env.multipliers);
  read(e, "horizon", c.env.horizon);
  read(e, "lambda_stab", c.env.lambda_stab);
  read(e, "gamma", c.env.gamma);

  const auto& t = j.contains("train") ? j.at("train") : empty;
  if (t.contains("ppo")) c.train = TrainConfig::from_json(t.at("ppo"));
  c.train.gamma = c.env.gamma;
  read(t, "seeds", c.seeds);
  if (t.contains("architectures")) {
    std::vector<std::string> names;
    read(t, "architectures", names);
    c.architectures.clear();
    for (const auto& n : names) c.architectures.push_back(architecture_from_string(n));
  }
  read(t, "validation_days", c.validation_days);

  const auto& v = j.contains("eval") ? j.at("eval") : empty;
  read(v, "episodes", c.episodes);
  read(v, "crn_namespace", c.crn_namespace);
  read(v, "lambda_grid", c.lambda_grid);
  read(v, "lambda_sweep_steps", c.lambda_sweep_steps);
  read(v, "lambda_sweep_seeds", c.lambda_sweep_seeds);
  read(v, "bootstrap_resamples", c.bootstrap_resamples);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError("cannot open config " + p.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + p.string() + ": " + e.what());
  }
  return from_json(j, p.parent_path());
}

}  // namespace pricelab
