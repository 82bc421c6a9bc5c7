#ifndef MAST_TRAINING_HPP
#define MAST_TRAINING_HPP

#include "mast/env.hpp"
#include "mast/model.hpp"
#include "mast/tensor.hpp"

#include <memory>
#include <string>
#include <vector>

namespace mast {

struct TrainError : std::runtime_error {
  explicit TrainError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Scene/sound pool the parallel training environments draw from.
struct EnvSpec {
  int height = 10;
  int width = 10;
  double wall_density = 0.15;
  int num_scenes = 20;
  uint64_t scene_seed = 1000;  // scene i uses scene_seed + i
  uint64_t sound_seed = 77;
  bool audio_noise = true;

  void validate() const;
};

struct TrainConfig {
  double gamma = 0.99;
  double lr = 1e-4;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double grad_clip = 0.5;
  int horizon = 128;
  int num_envs = 8;
  long long total_env_steps = 0;
  uint64_t seed = 0;
  int checkpoint_every = 50;  // updates; 0 disables intermediate checkpoints
  int probe_every = 0;        // updates between greedy probe evals; 0 disables
  int probe_episodes = 20;

  void validate() const;
};

/// One transition of one environment: everything indexed per agent.
struct RolloutStep {
  std::vector<AgentObservation> obs;
  std::vector<int> actions;
  std::vector<double> log_probs;
  std::vector<double> values;
  std::vector<double> rewards;
  bool done = false;
};

struct RolloutBuffer {
  int num_envs = 0;
  int horizon = 0;
  int n_agents = 0;
  std::vector<std::vector<RolloutStep>> steps;  // [env][step]
  /// V of the observation after the last step, zero where that step ended
  /// the episode; used to bootstrap non-terminal rollout tails.
  std::vector<std::vector<double>> bootstrap;  // [env][agent]
  /// Total rewards of episodes that finished during collection.
  std::vector<double> finished_returns;
};

/// One training environment slot with auto-reset bookkeeping.
class EnvPool {
 public:
  EnvPool(const EnvSpec& spec, int n_agents, int num_envs, uint64_t seed);

  int num_envs() const { return int(slots_.size()); }
  int n_agents() const { return n_agents_; }
  const std::vector<AgentObservation>& obs(int slot) const { return slots_[slot].obs; }
  Env& env(int slot) { return *slots_[slot].env; }
  /// Steps one slot; on episode end swaps in a fresh scene/sound and
  /// resets. Returns the outcome of the step that was just taken.
  StepOutcome step(int slot, const std::vector<Action>& actions);

 private:
  struct Slot {
    std::unique_ptr<Env> env;
    std::vector<AgentObservation> obs;
    std::mt19937_64 rng;
    uint64_t episodes = 0;
  };
  void respawn(Slot& slot);

  EnvSpec spec_;
  int n_agents_;
  std::vector<Slot> slots_;
};

/// Samples actions from the current policy for `horizon` steps per env.
RolloutBuffer collect_rollout(EnvPool& pool, const ModelConfig& cfg, const ParamMap& params,
                              int horizon, std::mt19937_64& rng);

/// Discounted return targets G_t = r_t + gamma * G_{t+1}, restarted at
/// episode boundaries; non-terminal tails bootstrap with the supplied
/// values. Result is [env][step][agent].
std::vector<std::vector<std::vector<double>>> compute_returns(
    const RolloutBuffer& buffer, double gamma, const std::vector<std::vector<double>>& bootstrap);

/// Per-agent loss terms for a single transition, built on the tape so
/// backward() reaches the parameters. The advantage enters as a constant
/// (stop-gradient); the critic term differentiates through `value`.
struct AgentLossTerms {
  Tensor actor;
  Tensor critic;
  Tensor entropy;
  Tensor total;  // actor + critic + entropy
};
AgentLossTerms agent_loss(Tape& tape, const Tensor& probs, const Tensor& value, int action,
                          double advantage, double return_target, double value_coef,
                          double entropy_coef);

/// Arithmetic mean of the per-agent losses.
Tensor total_loss(Tape& tape, const std::vector<Tensor>& per_agent);

struct LossReport {
  std::vector<double> actor, critic, entropy, per_agent_total;
  double total = 0.0;
  double grad_norm = 0.0;  // pre-clip global norm
};

struct TrainResult {
  ParamMap params;
  AdamState adam;
  long long env_steps = 0;
  int updates = 0;
  /// CSV rows (no header): update, env_steps, L_actor, L_critic,
  /// L_entropy, L_total, mean_return, probe_SR (empty when not measured).
  std::vector<std::string> metrics_rows;
};

/// Full optimization loop. When out_dir is non-empty, writes metrics.csv,
/// periodic checkpoints, and ckpt_final.json there (the directory must
/// exist). NaN loss aborts with a diagnostic dump of the offending batch.
TrainResult train(const TrainConfig& tcfg, const ModelConfig& mcfg, const EnvSpec& spec,
                  const std::string& out_dir);

/// Greedy success rate on a held-out probe set; also used by train() for
/// the probe_SR column.
double probe_success_rate(const ModelConfig& cfg, const ParamMap& params, const EnvSpec& spec,
                          int episodes, uint64_t seed);

}  // namespace mast

#endif  // MAST_TRAINING_HPP
