#include "pricelab/marl.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "pricelab/csv.hpp"
#include "pricelab/error.hpp"

namespace pricelab {

namespace {

constexpr const char* kCheckpointFormat = "pricelab-checkpoint";
constexpr int kCheckpointVersion = 1;

nn::Matrix stack_observations(std::span<const double> flat, std::size_t rows) {
  return nn::Matrix(rows, obs::kDim,
                    std::vector<double>(flat.begin(), flat.end()));
}

double finite_or_throw(double v, const std::string& what) {
  if (!std::isfinite(v)) throw NonFiniteError(what);
  return v;
}

}  // namespace

std::string to_string(Architecture a) {
  return a == Architecture::kMappo ? "mappo" : "mappo-gat";
}

Architecture architecture_from_string(std::string_view s) {
  if (s == "mappo") return Architecture::kMappo;
  if (s == "mappo-gat" || s == "mappo_gat") return Architecture::kMappoGat;
  throw ConfigError("unknown architecture '" + std::string(s) +
                    "' (expected mappo or mappo-gat)");
}

nlohmann::json PolicyOptions::to_json() const {
  return {{"architecture", to_string(architecture)},
          {"obs_dim", obs_dim},
          {"num_actions", num_actions},
          {"hidden", hidden},
          {"head_hidden", head_hidden},
          {"gat_heads", gat_heads},
          {"gat_head_dim", gat_head_dim},
          {"leaky_slope", leaky_slope},
          {"attention_dropout", attention_dropout},
          {"edge_drop", edge_drop},
          {"critic_hidden", critic_hidden}};
}

PolicyOptions PolicyOptions::from_json(const nlohmann::json& j) {
  PolicyOptions o;
  o.architecture = architecture_from_string(j.at("architecture").get<std::string>());
  o.obs_dim = j.at("obs_dim");
  o.num_actions = j.at("num_actions");
  o.hidden = j.at("hidden");
  o.head_hidden = j.at("head_hidden");
  o.gat_heads = j.at("gat_heads");
  o.gat_head_dim = j.at("gat_head_dim");
  o.leaky_slope = j.at("leaky_slope");
  o.attention_dropout = j.at("attention_dropout");
  o.edge_drop = j.at("edge_drop");
  o.critic_hidden = j.at("critic_hidden");
  return o;
}

PolicyOptions default_policy_options(Architecture a, std::size_t num_actions) {
  PolicyOptions o;
  o.architecture = a;
  o.num_actions = num_actions;
  if (a == Architecture::kMappo) {
    o.hidden = 96;
    o.head_hidden = 96;
  }
  return o;
}

// ---------------------------------------------------------------------------
// Actor

PolicySet::PolicySet(const PolicyOptions& options) : options_(options) {
  if (options.obs_dim == 0 || options.num_actions == 0 || options.hidden == 0) {
    throw ConfigError("policy: dimensions must be positive");
  }
  encoder_ = nn::Mlp(params_, "actor.encoder",
                     {options.obs_dim, options.hidden, options.hidden},
                     nn::Activation::kTanh, nn::Activation::kTanh);
  std::size_t head_in = options.hidden;
  if (options.architecture == Architecture::kMappoGat) {
    nn::GatOptions g;
    g.in_dim = options.hidden;
    g.heads = options.gat_heads;
    g.head_dim = options.gat_head_dim;
    g.leaky_slope = options.leaky_slope;
    g.attention_dropout = options.attention_dropout;
    g.edge_drop = options.edge_drop;
    gat_.emplace(params_, "actor.gat", g);
    head_in += gat_->out_dim();
  }
  head_ = nn::Mlp(params_, "actor.head",
                  {head_in, options.head_hidden, options.num_actions},
                  nn::Activation::kTanh);
}

PolicySet::Pass PolicySet::forward(nn::Tape& tape, const nn::Matrix& obs,
                                   const nn::AttentionGraph& graph,
                                   std::span<const RngKey> dropout_keys,
                                   bool training) {
  Pass pass;
  nn::Var h = encoder_.forward(tape, params_, tape.constant(obs));
  if (gat_) {
    if (graph.num_nodes() != obs.rows) {
      throw Error("policy: attention graph has " +
                  std::to_string(graph.num_nodes()) + " nodes for " +
                  std::to_string(obs.rows) + " observation rows");
    }
    pass.graph_features =
        gat_->forward(tape, params_, h, graph, dropout_keys, training);
    pass.features = nn::concat_cols(h, pass.graph_features);
  } else {
    pass.features = h;
  }
  pass.logits = head_.forward(tape, params_, pass.features);
  return pass;
}

std::size_t PolicySet::critic_feature_dim() const {
  return options_.obs_dim + (gat_ ? gat_->out_dim() : 0);
}

// ---------------------------------------------------------------------------
// Critic

GlobalState make_global_state(const nn::Matrix& obs,
                              const nn::Matrix* graph_features,
                              std::size_t n_agents,
                              std::span<const double> progress) {
  if (n_agents == 0 || obs.rows != n_agents * progress.size()) {
    throw Error("global state: " + std::to_string(obs.rows) +
                " rows do not split into " + std::to_string(progress.size()) +
                " blocks of " + std::to_string(n_agents));
  }
  GlobalState s;
  const std::size_t extra = graph_features ? graph_features->cols : 0;
  s.agent_features = nn::Matrix(obs.rows, obs.cols + extra);
  for (std::size_t r = 0; r < obs.rows; ++r) {
    auto o = obs.row(r);
    std::copy(o.begin(), o.end(), &s.agent_features(r, 0));
    if (graph_features) {
      auto z = graph_features->row(r);
      std::copy(z.begin(), z.end(), &s.agent_features(r, obs.cols));
    }
  }
  s.offsets.resize(progress.size() + 1);
  for (std::size_t b = 0; b <= progress.size(); ++b) s.offsets[b] = b * n_agents;
  s.progress = nn::Matrix(progress.size(), 1,
                          std::vector<double>(progress.begin(), progress.end()));
  return s;
}

Critic::Critic(std::size_t input_dim, std::size_t hidden) {
  projector_ = nn::Mlp(params_, "critic.projector", {input_dim, hidden},
                       nn::Activation::kTanh, nn::Activation::kTanh);
  value_ = nn::Mlp(params_, "critic.value", {hidden + 1, hidden, 1},
                   nn::Activation::kTanh);
}

nn::Var Critic::forward(nn::Tape& tape, const GlobalState& state) {
  nn::Var x = tape.constant(state.agent_features);
  nn::Var pooled =
      nn::segment_mean(projector_.forward(tape, params_, x), state.offsets);
  nn::Var in = nn::concat_cols(pooled, tape.constant(state.progress));
  return value_.forward(tape, params_, in);
}

AgentModel::AgentModel(const PolicyOptions& options)
    : policy(options),
      critic(policy.critic_feature_dim(), options.critic_hidden) {}

void init_agent_model(AgentModel& model, RngKey key) {
  RngStream actor(derive_key(key, {1}));
  RngStream critic(derive_key(key, {2}));
  model.policy.params().init_uniform_fan_in(actor);
  model.critic.params().init_uniform_fan_in(critic);
}

void save_checkpoint(const AgentModel& model, const nlohmann::json& meta,
                     const std::filesystem::path& p) {
  nlohmann::json j = {{"format", kCheckpointFormat},
                      {"version", kCheckpointVersion},
                      {"options", model.policy.options().to_json()},
                      {"actor", model.policy.params().to_json()},
                      {"critic", model.critic.params().to_json()},
                      {"meta", meta}};
  std::ofstream out(p);
  if (!out) throw Error("cannot write checkpoint " + p.string());
  out << j.dump();
  if (!out) throw Error("failed writing checkpoint " + p.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open checkpoint " + p.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + p.string() + ": " + e.what());
  }
  if (!j.is_object() || j.value("format", "") != kCheckpointFormat ||
      j.value("version", -1) != kCheckpointVersion) {
    throw ParseError("checkpoint " + p.string() +
                     ": incompatible schema (expected " + kCheckpointFormat +
                     " version " + std::to_string(kCheckpointVersion) + ")");
  }
  LoadedCheckpoint out;
  try {
    out.model = std::make_unique<AgentModel>(
        PolicyOptions::from_json(j.at("options")));
    out.model->policy.params().load_json(j.at("actor"));
    out.model->critic.params().load_json(j.at("critic"));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + p.string() + ": " + e.what());
  }
  out.meta = j.value("meta", nlohmann::json::object());
  return out;
}

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train: " + m); };
  if (!(clip_epsilon >= 0.05 && clip_epsilon <= 0.5)) fail("clip_epsilon must be in [0.05, 0.5]");
  if (!(value_coef >= 0.0)) fail("value_coef must be >= 0");
  if (!(entropy_coef >= 0.0)) fail("entropy_coef must be >= 0");
  if (!(gae_lambda > 0.0 && gae_lambda <= 1.0)) fail("gae_lambda must be in (0, 1]");
  if (!(gamma > 0.0 && gamma <= 1.0)) fail("gamma must be in (0, 1]");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be >= 0");
  if (!(max_grad_norm >= 0.0)) fail("max_grad_norm must be >= 0");
  if (epochs < 1) fail("epochs must be >= 1");
  if (minibatch_agent_steps == 0) fail("minibatch must be >= 1");
  if (rollout_steps == 0 || num_envs == 0) fail("rollout_steps and num_envs must be >= 1");
  if (total_steps < rollout_steps * num_envs) {
    fail("total_steps " + std::to_string(total_steps) +
         " is smaller than one rollout (" +
         std::to_string(rollout_steps * num_envs) + ")");
  }
  if (validation_every == 0 || validation_episodes == 0) {
    fail("validation_every and validation_episodes must be >= 1");
  }
  if (!(reward_scale >= 0.0)) fail("reward_scale must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"clip_epsilon", clip_epsilon},
          {"value_coef", value_coef},
          {"entropy_coef", entropy_coef},
          {"gae_lambda", gae_lambda},
          {"gamma", gamma},
          {"learning_rate", learning_rate},
          {"momentum", momentum},
          {"weight_decay", weight_decay},
          {"max_grad_norm", max_grad_norm},
          {"epochs", epochs},
          {"minibatch", minibatch_agent_steps},
          {"rollout_steps", rollout_steps},
          {"num_envs", num_envs},
          {"total_steps", total_steps},
          {"seed", seed},
          {"validation_every", validation_every},
          {"validation_episodes", validation_episodes},
          {"reward_scale", reward_scale}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.clip_epsilon = j.value("clip_epsilon", c.clip_epsilon);
  c.value_coef = j.value("value_coef", c.value_coef);
  c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
  c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
  c.gamma = j.value("gamma", c.gamma);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.epochs = j.value("epochs", c.epochs);
  c.minibatch_agent_steps = j.value("minibatch", c.minibatch_agent_steps);
  c.rollout_steps = j.value("rollout_steps", c.rollout_steps);
  c.num_envs = j.value("num_envs", c.num_envs);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.seed = j.value("seed", c.seed);
  c.validation_every = j.value("validation_every", c.validation_every);
  c.validation_episodes = j.value("validation_episodes", c.validation_episodes);
  c.reward_scale = j.value("reward_scale", c.reward_scale);
  return c;
}

// ---------------------------------------------------------------------------
// Rollouts

std::pair<Date, RngKey> EpisodeScheduler::next(const PricingEnv& env,
                                               std::size_t slot,
                                               std::uint64_t episode) const {
  const RngKey key = derive_key(base_, {slot, episode});
  RngStream r(key);
  const auto offset = r.uniform_index(static_cast<std::size_t>(env.num_starts()));
  return {add_days(env.first_start(), static_cast<int>(offset)),
          derive_key(key, {0})};
}

VecEnv::VecEnv(std::shared_ptr<const MarketModel> market,
               const EnvConfig& config, std::size_t num_envs, RngKey key)
    : scheduler_(derive_key(key, {0})) {
  if (num_envs == 0) throw ConfigError("vec env: need at least one environment");
  slots_.reserve(num_envs);
  for (std::size_t e = 0; e < num_envs; ++e) {
    slots_.push_back(Slot{PricingEnv(market, config),
                          RngStream(derive_key(key, {1, e}))});
  }
}

RolloutBuffer collect_rollouts(AgentModel& model, VecEnv& envs,
                               std::size_t steps, double reward_scale) {
  const std::size_t N = envs.size();
  const std::size_t n = envs.env(0).num_agents();
  const ItemGraph& graph = envs.env(0).market().graph();
  const auto attention = nn::AttentionGraph::from_item_graph(graph, N);
  const bool use_graph = model.policy.has_graph();

  RolloutBuffer buf;
  buf.steps = steps;
  buf.envs = N;
  buf.agents = n;
  buf.obs_dim = obs::kDim;
  buf.entries.resize(steps * N);

  std::vector<double> flat(N * n * obs::kDim);
  std::vector<RngKey> keys(N);
  std::vector<double> progress(N);
  nn::Tape tape;
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t e = 0; e < N; ++e) {
      auto& slot = envs.slots_[e];
      if (slot.needs_reset) {
        auto [start, key] = envs.scheduler_.next(slot.env, e, slot.episodes++);
        slot.env.reset(start, key);
        slot.episode_key = key;
        slot.needs_reset = false;
      }
      auto o = slot.env.observe();
      std::copy(o.begin(), o.end(), flat.begin() + e * n * obs::kDim);
      keys[e] = slot.action_rng.next_u64();
      progress[e] = slot.env.progress();
    }
    const nn::Matrix obs = stack_observations(flat, N * n);
    tape.clear();
    auto pass = model.policy.forward(tape, obs, attention, keys, true);
    const nn::Matrix* z = use_graph ? &pass.graph_features.value() : nullptr;
    auto state = make_global_state(obs, z, n, progress);
    const nn::Matrix& values = model.critic.forward(tape, state).value();
    const nn::Matrix& logits = pass.logits.value();

    for (std::size_t e = 0; e < N; ++e) {
      auto& slot = envs.slots_[e];
      auto& entry = buf.at(t, e);
      entry.obs.assign(flat.begin() + e * n * obs::kDim,
                       flat.begin() + (e + 1) * n * obs::kDim);
      entry.actions.resize(n);
      entry.log_probs.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto draw = nn::categorical_sample(logits.row(e * n + i), slot.action_rng);
        entry.actions[i] = draw.action;
        entry.log_probs[i] = draw.log_prob;
      }
      entry.value = values(e, 0);
      entry.progress = progress[e];
      entry.dropout_key = keys[e];
      entry.episode_key = slot.episode_key;
      entry.start_day = slot.env.state().start_day;
      entry.t = slot.env.state().t;
      const StepResult r = slot.env.step(entry.actions);
      entry.raw_reward = r.reward;
      entry.reward = r.reward * reward_scale;
      entry.done = r.done;
      if (r.done) slot.needs_reset = true;
    }
  }

  // Bootstrap the unfinished tails with a deterministic value estimate.
  buf.bootstrap_values.assign(N, 0.0);
  for (std::size_t e = 0; e < N; ++e) {
    const auto& slot = envs.slots_[e];
    auto o = slot.env.observe();
    std::copy(o.begin(), o.end(), flat.begin() + e * n * obs::kDim);
    progress[e] = slot.env.progress();
  }
  const nn::Matrix obs = stack_observations(flat, N * n);
  tape.clear();
  auto pass = model.policy.forward(tape, obs, attention, keys, false);
  const nn::Matrix* z = use_graph ? &pass.graph_features.value() : nullptr;
  auto state = make_global_state(obs, z, n, progress);
  const nn::Matrix& values = model.critic.forward(tape, state).value();
  for (std::size_t e = 0; e < N; ++e) {
    if (!buf.at(steps - 1, e).done) buf.bootstrap_values[e] = values(e, 0);
  }
  return buf;
}

// ---------------------------------------------------------------------------
// GAE and PPO

GaeResult compute_gae(std::span<const double> rewards,
                      std::span<const double> values,
                      std::span<const std::uint8_t> done, double bootstrap,
                      double gamma, double lambda) {
  const std::size_t T = rewards.size();
  if (values.size() != T || done.size() != T) {
    throw Error("gae: rewards, values and done must have equal length");
  }
  GaeResult r;
  r.advantages.assign(T, 0.0);
  r.returns.assign(T, 0.0);
  double next_adv = 0.0;
  for (std::size_t k = T; k-- > 0;) {
    const double nonterminal = done[k] ? 0.0 : 1.0;
    const double next_value = k + 1 < T ? values[k + 1] : bootstrap;
    const double delta = rewards[k] + gamma * next_value * nonterminal - values[k];
    next_adv = delta + gamma * lambda * nonterminal * next_adv;
    r.advantages[k] = next_adv;
    r.returns[k] = next_adv + values[k];
  }
  return r;
}

void compute_gae(RolloutBuffer& buffer, double gamma, double lambda) {
  if (buffer.bootstrap_values.size() != buffer.envs) {
    throw Error("gae: rollout buffer has no bootstrap values");
  }
  buffer.advantages.assign(buffer.size(), 0.0);
  buffer.returns.assign(buffer.size(), 0.0);
  std::vector<double> r(buffer.steps), v(buffer.steps);
  std::vector<std::uint8_t> d(buffer.steps);
  for (std::size_t e = 0; e < buffer.envs; ++e) {
    for (std::size_t t = 0; t < buffer.steps; ++t) {
      const auto& s = buffer.at(t, e);
      r[t] = s.reward;
      v[t] = s.value;
      d[t] = s.done ? 1 : 0;
    }
    auto g = compute_gae(r, v, d, buffer.bootstrap_values[e], gamma, lambda);
    for (std::size_t t = 0; t < buffer.steps; ++t) {
      buffer.advantages[t * buffer.envs + e] = g.advantages[t];
      buffer.returns[t * buffer.envs + e] = g.returns[t];
    }
  }
}

double clipped_surrogate(double ratio, double advantage, double epsilon) {
  const double clipped = std::clamp(ratio, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(ratio * advantage, clipped * advantage);
}

void standardize(std::span<double> values) {
  if (values.empty()) return;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / n);
  for (double& v : values) v = sd > 1e-8 ? (v - mean) / sd : v - mean;
}

PpoOptimizers make_optimizers(const TrainConfig& config) {
  nn::SgdOptions o;
  o.learning_rate = config.learning_rate;
  o.momentum = config.momentum;
  o.weight_decay = config.weight_decay;
  o.max_grad_norm = config.max_grad_norm;
  return {nn::SgdOptimizer(o), nn::SgdOptimizer(o)};
}

LossStats ppo_update(AgentModel& model, const RolloutBuffer& buffer,
                     const TrainConfig& config, PpoOptimizers& optimizers,
                     const ItemGraph& graph, RngStream& rng) {
  if (buffer.advantages.size() != buffer.size()) {
    throw Error("ppo: advantages have not been computed");
  }
  const std::size_t n = buffer.agents;
  const std::size_t M = buffer.size();
  const std::size_t mb = std::max<std::size_t>(
      1, (config.minibatch_agent_steps + n - 1) / n);
  const bool use_graph = model.policy.has_graph();
  const double eps = config.clip_epsilon;

  std::vector<std::size_t> order(M);
  LossStats stats;
  double clip_count = 0.0, kl_sum = 0.0, samples = 0.0;
  nn::Tape tape;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = M; i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_index(i)]);
    }
    for (std::size_t begin = 0, k = 0; begin < M; begin += mb, ++k) {
      const std::size_t B = std::min(mb, M - begin);
      const std::size_t rows = B * n;
      nn::Matrix obs(rows, buffer.obs_dim);
      std::vector<RngKey> keys(B);
      std::vector<std::size_t> actions(rows);
      nn::Matrix old_logp(rows, 1), adv_rows(rows, 1), returns(B, 1);
      std::vector<double> adv(B), progress(B);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t idx = order[begin + b];
        const auto& s = buffer.entries[idx];
        std::copy(s.obs.begin(), s.obs.end(), &obs(b * n, 0));
        keys[b] = s.dropout_key;
        for (std::size_t i = 0; i < n; ++i) {
          actions[b * n + i] = static_cast<std::size_t>(s.actions[i]);
          old_logp(b * n + i, 0) = s.log_probs[i];
        }
        adv[b] = buffer.advantages[idx];
        returns(b, 0) = buffer.returns[idx];
        progress[b] = s.progress;
      }
      standardize(adv);
      for (std::size_t r = 0; r < rows; ++r) adv_rows(r, 0) = adv[r / n];

      tape.clear();
      const auto attention = nn::AttentionGraph::from_item_graph(graph, B);
      auto pass = model.policy.forward(tape, obs, attention, keys, true);
      nn::Var logp_all = nn::log_softmax_rows(pass.logits);
      nn::Var logp = nn::pick(logp_all, actions);
      nn::Var ratio = nn::exp(nn::sub(logp, tape.constant(old_logp)));
      nn::Var surr = nn::minimum(
          nn::mul_const(ratio, adv_rows),
          nn::mul_const(nn::clip(ratio, 1.0 - eps, 1.0 + eps), adv_rows));
      nn::Var policy_loss = nn::scale(nn::mean_all(surr), -1.0);
      nn::Var entropy = nn::scale(
          nn::mean_all(nn::sum_rows(nn::mul(nn::exp(logp_all), logp_all))), -1.0);

      const nn::Matrix* z = use_graph ? &pass.graph_features.value() : nullptr;
      auto state = make_global_state(obs, z, n, progress);
      nn::Var v = model.critic.forward(tape, state);
      nn::Var value_loss =
          nn::mean_all(nn::square(nn::sub(v, tape.constant(returns))));
      nn::Var loss = nn::sub(
          nn::add(policy_loss, nn::scale(value_loss, config.value_coef)),
          nn::scale(entropy, config.entropy_coef));

      const std::string where = "ppo: non-finite loss in epoch " +
                                std::to_string(epoch) + " minibatch " +
                                std::to_string(k);
      finite_or_throw(loss.scalar(), where);

      double mb_clip = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double q = ratio.value()(r, 0);
        if (std::abs(q - 1.0) > eps) mb_clip += 1.0;
        kl_sum += (q - 1.0) - std::log(q);
      }
      clip_count += mb_clip;
      samples += static_cast<double>(rows);
      if (stats.minibatches == 0) {
        stats.first_clip_fraction = mb_clip / static_cast<double>(rows);
        stats.first_surrogate = -policy_loss.scalar();
        stats.first_mean_advantage =
            std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(B);
      }
      stats.policy_loss += policy_loss.scalar();
      stats.value_loss += value_loss.scalar();
      stats.entropy += entropy.scalar();
      ++stats.minibatches;

      model.policy.params().zero_grad();
      model.critic.params().zero_grad();
      tape.backward(loss);
      optimizers.actor.step(model.policy.params());
      optimizers.critic.step(model.critic.params());
      if (!model.policy.params().all_finite() ||
          !model.critic.params().all_finite()) {
        throw NonFiniteError("ppo: non-finite parameters after epoch " +
                             std::to_string(epoch) + " minibatch " +
                             std::to_string(k));
      }
    }
  }
  const double m = static_cast<double>(stats.minibatches);
  stats.policy_loss /= m;
  stats.value_loss /= m;
  stats.entropy /= m;
  stats.clip_fraction = clip_count / samples;
  stats.approx_kl = kl_sum / samples;
  return stats;
}

std::vector<int> greedy_actions(PolicySet& policy, const ItemGraph& graph,
                                const Observations& obs, std::size_t n_agents) {
  const auto attention = nn::AttentionGraph::from_item_graph(graph, 1);
  const RngKey key = 0;
  nn::Tape tape;
  auto pass = policy.forward(tape, stack_observations(obs, n_agents), attention,
                             std::span<const RngKey>(&key, 1), false);
  std::vector<int> actions(n_agents);
  for (std::size_t i = 0; i < n_agents; ++i) {
    actions[i] = nn::categorical_greedy(pass.logits.value().row(i)).action;
  }
  return actions;
}

// ---------------------------------------------------------------------------
// Training loop

TrainingSetup make_training_setup(std::shared_ptr<const MarketModel> market,
                                  const EnvConfig& base, Date split,
                                  int validation_days) {
  if (validation_days < 1) throw ConfigError("validation_days must be >= 1");
  base.validate();
  const DateRange panel = market->panel().window();
  TrainingSetup s;
  s.market = market;
  s.train_env = base;
  s.validation_env = base;
  const Date start = base.window.valid() ? base.window.start : panel.start;
  s.validation_env.window = {add_days(split, -validation_days), add_days(split, -1)};
  s.validation_env.horizon = std::min(base.horizon, validation_days);
  s.train_env.window = {start, add_days(split, -validation_days - 1)};
  if (!s.train_env.window.valid()) {
    throw ConfigError("training window before " + format_date(split) +
                      " is empty once validation days are held out");
  }
  // Both constructors check that the horizon fits.
  PricingEnv probe_train(market, s.train_env);
  PricingEnv probe_val(market, s.validation_env);
  return s;
}

double validation_profit(PolicySet& policy, const TrainingSetup& setup,
                         std::size_t episodes, RngKey key) {
  PricingEnv env(setup.market, setup.validation_env);
  const std::size_t n = env.num_agents();
  const auto& graph = setup.market->graph();
  double total = 0.0;
  for (std::size_t k = 0; k < episodes; ++k) {
    const RngKey ek = derive_key(key, {k});
    RngStream r(ek);
    const auto off = r.uniform_index(static_cast<std::size_t>(env.num_starts()));
    auto o = env.reset(add_days(env.first_start(), static_cast<int>(off)),
                       derive_key(ek, {0}));
    while (!env.done()) {
      total += env.step(greedy_actions(policy, graph, o, n)).profit;
      o = env.observe();
    }
  }
  return total / static_cast<double>(episodes);
}

namespace {

double probe_reward_scale(const TrainingSetup& setup, RngKey key) {
  PricingEnv env(setup.market, setup.train_env);
  const std::vector<int> ref(env.num_agents(),
                             static_cast<int>(setup.train_env.reference_action()));
  double sum = 0.0;
  std::size_t count = 0;
  for (std::uint64_t k = 0; k < 8; ++k) {
    RngStream r(derive_key(key, {k}));
    const auto off = r.uniform_index(static_cast<std::size_t>(env.num_starts()));
    env.reset(add_days(env.first_start(), static_cast<int>(off)),
              derive_key(key, {k, 1}));
    while (!env.done()) {
      sum += env.step(ref).reward;
      ++count;
    }
  }
  const double mean = std::abs(sum / static_cast<double>(count));
  return mean > 0.0 ? 1.0 / mean : 1.0;
}

}  // namespace

TrainResult train(const TrainConfig& config, const TrainingSetup& setup,
                  const PolicyOptions& options) {
  config.validate();
  const RngKey root = derive_key(hash_string("pricelab-train"), {config.seed});
  AgentModel model(options);
  init_agent_model(model, derive_key(root, {1}));

  TrainResult result;
  result.reward_scale = config.reward_scale > 0.0
                            ? config.reward_scale
                            : probe_reward_scale(setup, derive_key(root, {5}));
  VecEnv envs(setup.market, setup.train_env, config.num_envs,
              derive_key(root, {2}));
  RngStream update_rng(derive_key(root, {3}));
  const RngKey val_key = derive_key(root, {4});
  auto optimizers = make_optimizers(config);
  const auto& graph = setup.market->graph();

  const std::size_t per_update = config.rollout_steps * config.num_envs;
  const std::size_t updates = config.total_steps / per_update;

  result.best_validation_profit =
      validation_profit(model.policy, setup, config.validation_episodes, val_key);
  result.best = std::make_unique<AgentModel>(model);
  result.curve.push_back({0, 0, 0.0, result.best_validation_profit, {}});

  for (std::size_t u = 1; u <= updates; ++u) {
    CurvePoint point;
    point.update = u;
    point.env_steps = u * per_update;
    try {
      auto buffer = collect_rollouts(model, envs, config.rollout_steps,
                                     result.reward_scale);
      double raw = 0.0;
      for (const auto& s : buffer.entries) raw += s.raw_reward;
      point.mean_rollout_reward = raw / static_cast<double>(buffer.size());
      compute_gae(buffer, config.gamma, config.gae_lambda);
      point.loss = ppo_update(model, buffer, config, optimizers, graph, update_rng);
    } catch (const NonFiniteError& e) {
      result.diverged = true;
      result.divergence_message =
          "update " + std::to_string(u) + ": " + e.what();
      break;
    }
    result.updates = u;
    if (u % config.validation_every == 0 || u == updates) {
      const double vp = validation_profit(model.policy, setup,
                                          config.validation_episodes, val_key);
      point.validation_profit = vp;
      if (vp > result.best_validation_profit) {
        result.best_validation_profit = vp;
        result.best_update = u;
        *result.best = model;
      }
    }
    result.curve.push_back(point);
  }
  result.last = std::make_unique<AgentModel>(model);
  return result;
}

void write_curve_csv(std::span<const CurvePoint> curve,
                     const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  csv::write_record(out, {"update", "env_steps", "mean_rollout_reward",
                          "validation_profit", "policy_loss", "value_loss",
                          "entropy", "clip_fraction", "approx_kl"});
  using csv::format_double;
  for (const auto& c : curve) {
    csv::write_record(
        out, {std::to_string(c.update), std::to_string(c.env_steps),
              format_double(c.mean_rollout_reward),
              c.validation_profit ? format_double(*c.validation_profit) : "",
              format_double(c.loss.policy_loss), format_double(c.loss.value_loss),
              format_double(c.loss.entropy), format_double(c.loss.clip_fraction),
              format_double(c.loss.approx_kl)});
  }
}

}  // namespace pricelab
