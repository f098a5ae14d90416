#ifndef PRICELAB_MARL_HPP_
#define PRICELAB_MARL_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pricelab/env.hpp"
#include "pricelab/gat.hpp"
#include "pricelab/nn.hpp"
#include "pricelab/rng.hpp"

namespace pricelab {

enum class Architecture { kMappo, kMappoGat };

std::string to_string(Architecture a);
// "mappo" or "mappo-gat".
Architecture architecture_from_string(std::string_view s);

struct PolicyOptions {
  Architecture architecture = Architecture::kMappo;
  std::size_t obs_dim = obs::kDim;
  std::size_t num_actions = 5;
  std::size_t hidden = 64;        // encoder width
  std::size_t head_hidden = 64;   // actor head width
  std::size_t gat_heads = 4;
  std::size_t gat_head_dim = 16;
  double leaky_slope = 0.2;
  double attention_dropout = 0.1;
  double edge_drop = 0.1;
  std::size_t critic_hidden = 64;

  nlohmann::json to_json() const;
  static PolicyOptions from_json(const nlohmann::json& j);
};

// Capacity-matched defaults: MAPPO widens its MLPs to 96 so that its actor
// plus critic parameter count stays within 20% of the MAPPO+GAT model.
PolicyOptions default_policy_options(Architecture a, std::size_t num_actions);

/// Shared-parameter actor used by every agent.
///
/// MAPPO: logits = head(h), h = encoder(o).
/// MAPPO+GAT: logits = head([h ; z]), z = GAT(h) over the item graph.
/// The actor only ever sees per-agent observations (and, through the GAT,
/// its neighbors' embeddings); it has no access to the critic's inputs.
class PolicySet {
 public:
  explicit PolicySet(const PolicyOptions& options);

  struct Pass {
    nn::Var logits;    // rows = agents in the batch
    nn::Var features;  // actor representation h or [h ; z]
    nn::Var graph_features;  // z (MAPPO+GAT only)
  };

  // `obs` is [blocks * n_agents x obs_dim]; block b is one environment step.
  Pass forward(nn::Tape& tape, const nn::Matrix& obs,
               const nn::AttentionGraph& graph,
               std::span<const RngKey> dropout_keys, bool training);

  const PolicyOptions& options() const { return options_; }
  Architecture architecture() const { return options_.architecture; }
  bool has_graph() const { return gat_.has_value(); }
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }

  // Dimension of the per-agent features the critic receives.
  std::size_t critic_feature_dim() const;

 private:
  PolicyOptions options_;
  nn::ParameterSet params_;
  nn::Mlp encoder_;
  std::optional<nn::GatLayer> gat_;
  nn::Mlp head_;
};

// Centralized-critic input: per-agent rows pooled per block, plus the global
// episode progress t/H of each block.
struct GlobalState {
  nn::Matrix agent_features;          // [blocks * n_agents x d]
  std::vector<std::size_t> offsets;   // block boundaries, size blocks + 1
  nn::Matrix progress;                // [blocks x 1]
};

// Builds the critic input from observations and (detached) graph features.
GlobalState make_global_state(const nn::Matrix& obs,
                              const nn::Matrix* graph_features,
                              std::size_t n_agents,
                              std::span<const double> progress);

/// Centralized value function: per-agent projector, mean pooling over agents
/// (so the value is invariant to agent order), then a value head.
class Critic {
 public:
  Critic(std::size_t input_dim, std::size_t hidden);

  nn::Var forward(nn::Tape& tape, const GlobalState& state);  // blocks x 1
  nn::ParameterSet& params() { return params_; }
  const nn::ParameterSet& params() const { return params_; }
  std::size_t input_dim() const { return projector_.in_dim(); }

 private:
  nn::ParameterSet params_;
  nn::Mlp projector_;
  nn::Mlp value_;
};

struct AgentModel {
  PolicySet policy;
  Critic critic;

  explicit AgentModel(const PolicyOptions& options);
  std::size_t parameter_count() const {
    return policy.params().count() + critic.params().count();
  }
};

void init_agent_model(AgentModel& model, RngKey key);

// Checkpoint file: {"format": "pricelab-checkpoint", "version": 1,
// "options": {...}, "actor": [...], "critic": [...], "meta": {...}}.
// Parameter values are written with round-trip precision, so reloading is
// bit-exact.
void save_checkpoint(const AgentModel& model, const nlohmann::json& meta,
                     const std::filesystem::path& p);
struct LoadedCheckpoint {
  std::unique_ptr<AgentModel> model;
  nlohmann::json meta;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& p);

struct TrainConfig {
  double clip_epsilon = 0.2;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double gae_lambda = 0.95;
  double gamma = 1.0;
  double learning_rate = 3e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;   // GAT projections only
  double max_grad_norm = 0.5;   // 0 disables clipping
  int epochs = 4;
  std::size_t minibatch_agent_steps = 256;
  std::size_t rollout_steps = 128;  // T
  std::size_t num_envs = 8;         // N
  std::size_t total_steps = 60000;  // environment steps summed over envs
  std::uint64_t seed = 0;
  std::size_t validation_every = 5;     // updates between validations
  std::size_t validation_episodes = 8;
  double reward_scale = 0.0;  // 0 = derive from a reference-price probe

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// One (t, env) entry of a rollout. Agent-level columns hold n_agents values.
struct RolloutStep {
  std::vector<double> obs;       // n_agents * obs_dim, normalized
  std::vector<int> actions;
  std::vector<double> log_probs;
  double reward = 0.0;           // team reward, scaled
  double raw_reward = 0.0;       // team reward in currency
  double value = 0.0;
  double progress = 0.0;
  bool done = false;
  RngKey dropout_key = 0;
  RngKey episode_key = 0;
  Date start_day{};
  int t = 0;
};

struct RolloutBuffer {
  std::size_t steps = 0;   // T
  std::size_t envs = 0;    // N
  std::size_t agents = 0;
  std::size_t obs_dim = 0;
  std::vector<RolloutStep> entries;        // index t * envs + e
  std::vector<double> bootstrap_values;    // V(s_T) per env
  std::vector<double> advantages;          // per entry
  std::vector<double> returns;             // per entry

  RolloutStep& at(std::size_t t, std::size_t e) { return entries[t * envs + e]; }
  const RolloutStep& at(std::size_t t, std::size_t e) const {
    return entries[t * envs + e];
  }
  std::size_t size() const { return entries.size(); }
};

// Draws (start day, episode key) for the k-th episode of environment slot e.
class EpisodeScheduler {
 public:
  explicit EpisodeScheduler(RngKey base) : base_(base) {}
  std::pair<Date, RngKey> next(const PricingEnv& env, std::size_t slot,
                               std::uint64_t episode) const;

 private:
  RngKey base_;
};

// N environments stepped in lockstep; each owns its own action-sampling and
// dropout streams so collection is deterministic per slot.
class VecEnv {
 public:
  VecEnv(std::shared_ptr<const MarketModel> market, const EnvConfig& config,
         std::size_t num_envs, RngKey key);

  std::size_t size() const { return slots_.size(); }
  PricingEnv& env(std::size_t e) { return slots_[e].env; }

 private:
  friend RolloutBuffer collect_rollouts(AgentModel&, VecEnv&, std::size_t,
                                        double);
  struct Slot {
    PricingEnv env;
    RngStream action_rng;
    std::uint64_t episodes = 0;
    bool needs_reset = true;
    RngKey episode_key = 0;
  };
  EpisodeScheduler scheduler_;
  std::vector<Slot> slots_;
};

// Runs T synchronized steps in every environment using the current policy in
// sampling mode. Finished episodes are reset from the scheduler.
RolloutBuffer collect_rollouts(AgentModel& model, VecEnv& envs,
                               std::size_t steps, double reward_scale);

// GAE(lambda) along one trajectory column. done[t] marks a terminal
// transition; `bootstrap` is V(s_T) for a non-terminal tail.
struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};
GaeResult compute_gae(std::span<const double> rewards,
                      std::span<const double> values,
                      std::span<const std::uint8_t> done, double bootstrap,
                      double gamma, double lambda);

// Fills buffer.advantages / buffer.returns. Throws Error when bootstrap
// values are missing.
void compute_gae(RolloutBuffer& buffer, double gamma, double lambda);

// min(r * A, clip(r, 1 - eps, 1 + eps) * A).
double clipped_surrogate(double ratio, double advantage, double epsilon);

// Standardizes to mean 0 / std 1 (only centers when the std is ~0).
void standardize(std::span<double> values);

struct LossStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  // Statistics of the very first minibatch, before any parameter update.
  double first_clip_fraction = 0.0;
  double first_surrogate = 0.0;
  double first_mean_advantage = 0.0;
  std::size_t minibatches = 0;
};

struct PpoOptimizers {
  nn::SgdOptimizer actor;
  nn::SgdOptimizer critic;
};

PpoOptimizers make_optimizers(const TrainConfig& config);

// Clipped PPO with entropy bonus and value MSE. Throws NonFiniteError naming
// the minibatch when a loss becomes non-finite.
LossStats ppo_update(AgentModel& model, const RolloutBuffer& buffer,
                     const TrainConfig& config, PpoOptimizers& optimizers,
                     const ItemGraph& graph, RngStream& rng);

// Greedy actions for one environment observation matrix.
std::vector<int> greedy_actions(PolicySet& policy, const ItemGraph& graph,
                                const Observations& obs, std::size_t n_agents);

struct TrainingSetup {
  std::shared_ptr<const MarketModel> market;
  EnvConfig train_env;
  EnvConfig validation_env;
};

// Training episodes roll over [first valid day, split - validation_days - 1];
// validation uses the last `validation_days` days before the split with
// horizon min(H, validation_days).
TrainingSetup make_training_setup(std::shared_ptr<const MarketModel> market,
                                  const EnvConfig& base, Date split,
                                  int validation_days = 14);

struct CurvePoint {
  std::size_t update = 0;
  std::size_t env_steps = 0;
  double mean_rollout_reward = 0.0;  // currency per env step
  std::optional<double> validation_profit;
  LossStats loss;
};

struct TrainResult {
  std::vector<CurvePoint> curve;
  std::unique_ptr<AgentModel> best;
  std::unique_ptr<AgentModel> last;
  double best_validation_profit = 0.0;
  std::size_t best_update = 0;
  std::size_t updates = 0;
  double reward_scale = 1.0;
  bool diverged = false;
  std::string divergence_message;
};

// Mean greedy episode profit (penalty excluded) over fixed validation keys.
double validation_profit(PolicySet& policy, const TrainingSetup& setup,
                         std::size_t episodes, RngKey key);

TrainResult train(const TrainConfig& config, const TrainingSetup& setup,
                  const PolicyOptions& options);

void write_curve_csv(std::span<const CurvePoint> curve,
                     const std::filesystem::path& p);

}  // namespace pricelab

#endif  // PRICELAB_MARL_HPP_
