#ifndef MAST_METRICS_HPP
#define MAST_METRICS_HPP

#include "mast/checkpoint.hpp"
#include "mast/env.hpp"
#include "mast/model.hpp"

#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mast {

struct MetricsError : std::runtime_error {
  explicit MetricsError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Everything the metrics need from one episode, recorded with
/// first-finisher semantics: path/action numbers describe the winner.
struct EpisodeRecord {
  std::string scene_id;
  int sound_id = 0;
  std::vector<AgentPose> starts;
  std::optional<int> winner;
  int winner_path_cells = 0;     // cells actually traversed by the winner
  int winner_actions = 0;        // actions the winner executed (incl. Stop)
  int shortest_path_cells = 0;   // geodesic from the winner's start
  int min_actions = 0;           // optimal action count from the winner's start
  std::vector<int> step_counts;  // per agent

  bool success() const { return winner.has_value(); }
};

struct MetricsReport {
  double sr = 0.0;
  double spl = 0.0;
  double sna = 0.0;
  int episodes = 0;
  std::string split;   // "heard" or "unheard"
  std::string method;
  uint64_t seed = 0;

  std::string csv_header() const;
  std::string csv_row() const;
};

double success_rate(const std::vector<EpisodeRecord>& episodes);
/// Mean of success * l / max(p, l), shortest over actual path cells.
double spl(const std::vector<EpisodeRecord>& episodes);
/// Mean of success * n_opt / max(n, n_opt) over executed action counts.
double sna(const std::vector<EpisodeRecord>& episodes);

/// Action source for evaluation; implementations are deterministic given
/// their construction-time state plus reset() calls.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::vector<Action> act(const std::vector<AgentObservation>& obs) = 0;
  virtual void reset(uint64_t /*episode_seed*/) {}
};

/// Greedy argmax over the joint model.
std::unique_ptr<Policy> make_model_policy(ModelConfig cfg, ParamMap params);
/// Runs a single-agent model independently per agent; zero cross-agent flow.
std::unique_ptr<Policy> make_independent_policy(ModelConfig single_agent_cfg, ParamMap params,
                                                int n_agents);
std::unique_ptr<Policy> make_random_policy(int n_agents);

/// Plays one episode to completion; optional JSON-lines trace output.
EpisodeRecord run_episode(Env& env, Policy& policy, uint64_t episode_seed,
                          std::ostream* trace = nullptr);

struct EvalConfig {
  int height = 10;
  int width = 10;
  double wall_density = 0.15;
  uint64_t scene_seed = 900000;  // disjoint from the training scene range
  int num_scenes = 20;
  int episodes_per_scene = 25;
  uint64_t sound_seed = 77;
  bool audio_noise = true;
};

/// Fixed protocol: num_scenes held-out scenes x episodes_per_scene
/// episodes, sounds cycling through the split ("heard" = train ids,
/// "unheard" = held-out ids). Deterministic given seed.
MetricsReport evaluate(Policy& policy, int n_agents, const EvalConfig& eval_cfg,
                       const std::string& split, uint64_t seed, const std::string& method_label,
                       std::vector<EpisodeRecord>* out_records = nullptr,
                       std::ostream* trace = nullptr);

/// kind: "random-two-agent" (ckpt ignored, may be null) or
/// "independent-two-agent" (ckpt must hold a single-agent model).
MetricsReport run_baseline(const std::string& kind, const Checkpoint* ckpt,
                           const EvalConfig& eval_cfg, const std::string& split, uint64_t seed,
                           std::vector<EpisodeRecord>* out_records = nullptr);

/// kind: "wo-en" or "wo-de"; the checkpoint's ablation flag must match.
MetricsReport run_ablation(const std::string& kind, const Checkpoint& ckpt,
                           const EvalConfig& eval_cfg, const std::string& split, uint64_t seed,
                           std::vector<EpisodeRecord>* out_records = nullptr);

}  // namespace mast

#endif  // MAST_METRICS_HPP
