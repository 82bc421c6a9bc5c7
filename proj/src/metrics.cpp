#include "mast/metrics.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace mast {

namespace {

uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

int argmax_action(const std::array<double, kNumActions>& probs) {
  int best = 0;
  for (int i = 1; i < kNumActions; ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

class ModelPolicy : public Policy {
 public:
  ModelPolicy(ModelConfig cfg, ParamMap params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
  }
  std::vector<Action> act(const std::vector<AgentObservation>& obs) override {
    auto outputs = policy_eval(cfg_, params_, obs);
    std::vector<Action> actions;
    for (const PolicyOutput& o : outputs) actions.push_back(Action(argmax_action(o.probs)));
    return actions;
  }

 private:
  ModelConfig cfg_;
  ParamMap params_;
};

class IndependentPolicy : public Policy {
 public:
  IndependentPolicy(ModelConfig cfg, ParamMap params, int n_agents)
      : cfg_(std::move(cfg)), params_(std::move(params)), n_agents_(n_agents) {
    if (cfg_.n_agents != 1)
      throw MetricsError("independent baseline requires a single-agent model");
    cfg_.validate();
  }
  std::vector<Action> act(const std::vector<AgentObservation>& obs) override {
    std::vector<Action> actions;
    for (int a = 0; a < n_agents_; ++a) {
      auto outputs = policy_eval(cfg_, params_, {obs[a]});
      actions.push_back(Action(argmax_action(outputs[0].probs)));
    }
    return actions;
  }

 private:
  ModelConfig cfg_;
  ParamMap params_;
  int n_agents_;
};

class RandomPolicy : public Policy {
 public:
  explicit RandomPolicy(int n_agents) : n_agents_(n_agents) {}
  void reset(uint64_t episode_seed) override { rng_.seed(mix(episode_seed, 0xBADA55)); }
  std::vector<Action> act(const std::vector<AgentObservation>&) override {
    std::vector<Action> actions;
    std::uniform_int_distribution<int> pick(0, kNumActions - 1);
    for (int a = 0; a < n_agents_; ++a) actions.push_back(Action(pick(rng_)));
    return actions;
  }

 private:
  int n_agents_;
  std::mt19937_64 rng_;
};

double ratio_term(const EpisodeRecord& ep, int optimal, int actual) {
  if (!ep.success()) return 0.0;
  int denom = std::max(actual, optimal);
  return denom == 0 ? 1.0 : double(optimal) / denom;
}

std::vector<int> split_sound_ids(const std::string& split) {
  if (split == "heard") {
    std::vector<int> ids(kNumHeardSounds);
    for (int i = 0; i < kNumHeardSounds; ++i) ids[i] = i;
    return ids;
  }
  if (split == "unheard") {
    std::vector<int> ids;
    for (int i = kNumHeardSounds; i < kNumSounds; ++i) ids.push_back(i);
    return ids;
  }
  throw MetricsError("unknown split: " + split);
}

}  // namespace

double success_rate(const std::vector<EpisodeRecord>& episodes) {
  if (episodes.empty()) throw MetricsError("success_rate: zero episodes");
  int s = 0;
  for (const EpisodeRecord& ep : episodes) s += ep.success();
  return double(s) / episodes.size();
}

double spl(const std::vector<EpisodeRecord>& episodes) {
  if (episodes.empty()) throw MetricsError("spl: zero episodes");
  double acc = 0.0;
  for (const EpisodeRecord& ep : episodes)
    acc += ratio_term(ep, ep.shortest_path_cells, ep.winner_path_cells);
  return acc / episodes.size();
}

double sna(const std::vector<EpisodeRecord>& episodes) {
  if (episodes.empty()) throw MetricsError("sna: zero episodes");
  double acc = 0.0;
  for (const EpisodeRecord& ep : episodes)
    acc += ratio_term(ep, ep.min_actions, ep.winner_actions);
  return acc / episodes.size();
}

std::string MetricsReport::csv_header() const {
  return "method,split,SR,SPL,SNA,episodes,seed";
}

std::string MetricsReport::csv_row() const {
  std::ostringstream os;
  os.precision(17);
  os << method << ',' << split << ',' << sr << ',' << spl << ',' << sna << ',' << episodes << ','
     << seed;
  return os.str();
}

std::unique_ptr<Policy> make_model_policy(ModelConfig cfg, ParamMap params) {
  return std::make_unique<ModelPolicy>(std::move(cfg), std::move(params));
}

std::unique_ptr<Policy> make_independent_policy(ModelConfig single_agent_cfg, ParamMap params,
                                                int n_agents) {
  return std::make_unique<IndependentPolicy>(std::move(single_agent_cfg), std::move(params),
                                             n_agents);
}

std::unique_ptr<Policy> make_random_policy(int n_agents) {
  return std::make_unique<RandomPolicy>(n_agents);
}

EpisodeRecord run_episode(Env& env, Policy& policy, uint64_t episode_seed, std::ostream* trace) {
  EpisodeRecord rec;
  rec.scene_id = env.scene().scene_id;
  rec.sound_id = env.sound().id;
  std::vector<AgentObservation> obs = env.reset(episode_seed);
  policy.reset(episode_seed);
  rec.starts = env.poses();
  const int n = env.n_agents();
  std::vector<int> cells_moved(n, 0);
  std::vector<AgentPose> prev = env.poses();
  int step = 0;
  while (!env.done()) {
    std::vector<Action> actions = policy.act(obs);
    StepOutcome out = env.step(actions);
    for (int a = 0; a < n; ++a)
      if (!(env.poses()[a].cell == prev[a].cell)) ++cells_moved[a];
    if (trace) *trace << trace_line(step, env.scene(), env.poses(), actions, out.rewards) << '\n';
    prev = env.poses();
    obs = out.observations;
    ++step;
  }
  rec.step_counts = env.step_counts();
  rec.winner = env.winner();
  if (rec.winner) {
    int w = *rec.winner;
    rec.winner_path_cells = cells_moved[w];
    rec.winner_actions = env.step_counts()[w];
    rec.shortest_path_cells = env.scene().dist(rec.starts[w].cell.r, rec.starts[w].cell.c);
    rec.min_actions = shortest_path_actions(env.scene(), rec.starts[w], env.scene().source);
  }
  return rec;
}

MetricsReport evaluate(Policy& policy, int n_agents, const EvalConfig& eval_cfg,
                       const std::string& split, uint64_t seed, const std::string& method_label,
                       std::vector<EpisodeRecord>* out_records, std::ostream* trace) {
  std::vector<int> sounds = split_sound_ids(split);
  std::vector<EpisodeRecord> records;
  int idx = 0;
  for (int s = 0; s < eval_cfg.num_scenes; ++s) {
    Scene scene = generate_scene(eval_cfg.scene_seed + uint64_t(s), eval_cfg.height,
                                 eval_cfg.width, eval_cfg.wall_density);
    for (int e = 0; e < eval_cfg.episodes_per_scene; ++e, ++idx) {
      SoundProfile sound = make_sound_profile(sounds[idx % sounds.size()], eval_cfg.sound_seed);
      Env env(scene, n_agents, sound, mix(seed, uint64_t(idx)));
      env.set_audio_noise(eval_cfg.audio_noise);
      records.push_back(run_episode(env, policy, mix(seed, uint64_t(idx) + 0xE9150DE), trace));
    }
  }
  MetricsReport report;
  report.sr = success_rate(records);
  report.spl = spl(records);
  report.sna = sna(records);
  report.episodes = int(records.size());
  report.split = split;
  report.method = method_label;
  report.seed = seed;
  if (out_records) *out_records = std::move(records);
  return report;
}

MetricsReport run_baseline(const std::string& kind, const Checkpoint* ckpt,
                           const EvalConfig& eval_cfg, const std::string& split, uint64_t seed,
                           std::vector<EpisodeRecord>* out_records) {
  std::unique_ptr<Policy> policy;
  if (kind == "random-two-agent") {
    policy = make_random_policy(2);
  } else if (kind == "independent-two-agent") {
    if (!ckpt) throw MetricsError("independent baseline needs a checkpoint");
    policy = make_independent_policy(ckpt->config, ckpt->params, 2);
  } else {
    throw MetricsError("unknown baseline kind: " + kind);
  }
  return evaluate(*policy, 2, eval_cfg, split, seed, kind, out_records);
}

MetricsReport run_ablation(const std::string& kind, const Checkpoint& ckpt,
                           const EvalConfig& eval_cfg, const std::string& split, uint64_t seed,
                           std::vector<EpisodeRecord>* out_records) {
  if (kind == "wo-en") {
    if (!ckpt.config.skip_encoders)
      throw MetricsError("wo-en ablation requires a checkpoint trained with skip_encoders");
  } else if (kind == "wo-de") {
    if (!ckpt.config.mlp_decoder)
      throw MetricsError("wo-de ablation requires a checkpoint trained with mlp_decoder");
  } else {
    throw MetricsError("unknown ablation kind: " + kind);
  }
  auto policy = make_model_policy(ckpt.config, ckpt.params);
  return evaluate(*policy, ckpt.config.n_agents, eval_cfg, split, seed, kind, out_records);
}

}  // namespace mast
