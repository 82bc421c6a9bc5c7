#include "mast/training.hpp"

#include "mast/checkpoint.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace mast {

namespace {

uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

int sample_action(const std::array<double, kNumActions>& probs, std::mt19937_64& rng) {
  double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0.0;
  for (int a = 0; a < kNumActions; ++a) {
    acc += probs[a];
    if (u < acc) return a;
  }
  return kNumActions - 1;  // guard against rounding shortfall
}

std::string format_metric(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

void EnvSpec::validate() const {
  if (height < 3 || width < 3) throw TrainError("EnvSpec: grid must be at least 3x3");
  if (wall_density < 0.0 || wall_density > 0.4)
    throw TrainError("EnvSpec: wall_density outside [0, 0.4]");
  if (num_scenes < 1) throw TrainError("EnvSpec: num_scenes must be positive");
}

void TrainConfig::validate() const {
  if (gamma <= 0.0 || gamma > 1.0) throw TrainError("TrainConfig: gamma outside (0, 1]");
  if (horizon < 1) throw TrainError("TrainConfig: horizon must be positive");
  if (num_envs < 1) throw TrainError("TrainConfig: num_envs must be positive");
  if (lr <= 0.0) throw TrainError("TrainConfig: lr must be positive");
  if (total_env_steps < 0) throw TrainError("TrainConfig: total_env_steps must be nonnegative");
}

EnvPool::EnvPool(const EnvSpec& spec, int n_agents, int num_envs, uint64_t seed)
    : spec_(spec), n_agents_(n_agents) {
  spec_.validate();
  slots_.resize(num_envs);
  for (int i = 0; i < num_envs; ++i) {
    slots_[i].rng.seed(mix(seed, uint64_t(i)));
    respawn(slots_[i]);
  }
}

void EnvPool::respawn(Slot& slot) {
  uint64_t scene_idx = slot.rng() % uint64_t(spec_.num_scenes);
  uint64_t sound_id = slot.rng() % uint64_t(kNumHeardSounds);
  Scene scene = generate_scene(spec_.scene_seed + scene_idx, spec_.height, spec_.width,
                               spec_.wall_density);
  SoundProfile sound = make_sound_profile(int(sound_id), spec_.sound_seed);
  slot.env = std::make_unique<Env>(std::move(scene), n_agents_, sound, slot.rng());
  slot.env->set_audio_noise(spec_.audio_noise);
  slot.obs = slot.env->reset(slot.rng());
  ++slot.episodes;
}

StepOutcome EnvPool::step(int slot_idx, const std::vector<Action>& actions) {
  Slot& slot = slots_[slot_idx];
  StepOutcome out = slot.env->step(actions);
  if (out.done) {
    respawn(slot);
  } else {
    slot.obs = out.observations;
  }
  return out;
}

RolloutBuffer collect_rollout(EnvPool& pool, const ModelConfig& cfg, const ParamMap& params,
                              int horizon, std::mt19937_64& rng) {
  RolloutBuffer buf;
  buf.num_envs = pool.num_envs();
  buf.horizon = horizon;
  buf.n_agents = pool.n_agents();
  buf.steps.assign(buf.num_envs, {});
  buf.bootstrap.assign(buf.num_envs, std::vector<double>(buf.n_agents, 0.0));
  std::vector<double> episode_return(buf.num_envs, 0.0);

  for (int e = 0; e < buf.num_envs; ++e) buf.steps[e].reserve(horizon);
  for (int t = 0; t < horizon; ++t) {
    for (int e = 0; e < buf.num_envs; ++e) {
      RolloutStep step;
      step.obs = pool.obs(e);
      auto outputs = policy_eval(cfg, params, step.obs);
      std::vector<Action> actions(buf.n_agents);
      for (int a = 0; a < buf.n_agents; ++a) {
        int act = sample_action(outputs[a].probs, rng);
        actions[a] = Action(act);
        step.actions.push_back(act);
        step.log_probs.push_back(std::log(std::max(outputs[a].probs[act], Tape::kLogFloor)));
        step.values.push_back(outputs[a].value);
      }
      StepOutcome out = pool.step(e, actions);
      step.rewards = out.rewards;
      step.done = out.done;
      for (double r : out.rewards) episode_return[e] += r;
      if (out.done) {
        buf.finished_returns.push_back(episode_return[e]);
        episode_return[e] = 0.0;
      }
      buf.steps[e].push_back(std::move(step));
    }
  }
  for (int e = 0; e < buf.num_envs; ++e) {
    if (buf.steps[e].back().done) continue;  // bootstrap stays zero
    auto outputs = policy_eval(cfg, params, pool.obs(e));
    for (int a = 0; a < buf.n_agents; ++a) buf.bootstrap[e][a] = outputs[a].value;
  }
  return buf;
}

std::vector<std::vector<std::vector<double>>> compute_returns(
    const RolloutBuffer& buffer, double gamma, const std::vector<std::vector<double>>& bootstrap) {
  std::vector<std::vector<std::vector<double>>> returns(buffer.num_envs);
  for (int e = 0; e < buffer.num_envs; ++e) {
    const auto& steps = buffer.steps[e];
    returns[e].assign(steps.size(), std::vector<double>(buffer.n_agents, 0.0));
    for (int a = 0; a < buffer.n_agents; ++a) {
      double g = steps.back().done ? 0.0 : bootstrap.at(e).at(a);
      for (int t = int(steps.size()) - 1; t >= 0; --t) {
        if (steps[t].done) g = 0.0;  // boundary: terminal step uses G = r
        g = steps[t].rewards[a] + gamma * g;
        returns[e][t][a] = g;
      }
    }
  }
  return returns;
}

AgentLossTerms agent_loss(Tape& tape, const Tensor& probs, const Tensor& value, int action,
                          double advantage, double return_target, double value_coef,
                          double entropy_coef) {
  AgentLossTerms terms;
  Tensor log_pa = tape.log_clamped(tape.element(probs, 0, action));
  terms.actor = tape.scale(log_pa, -advantage);
  Tensor dv = tape.sub(value, Tensor::scalar(return_target));
  terms.critic = tape.scale(tape.mul(dv, dv), value_coef);
  // H = -sum p log p; the loss term is -coef * H.
  Tensor ent = tape.scale(tape.sum(tape.mul(probs, tape.log_clamped(probs))), -1.0);
  terms.entropy = tape.scale(ent, -entropy_coef);
  terms.total = tape.add(tape.add(terms.actor, terms.critic), terms.entropy);
  return terms;
}

Tensor total_loss(Tape& tape, const std::vector<Tensor>& per_agent) {
  if (per_agent.empty()) throw TrainError("total_loss: empty loss list");
  Tensor acc = per_agent[0];
  for (size_t i = 1; i < per_agent.size(); ++i) acc = tape.add(acc, per_agent[i]);
  return tape.scale(acc, 1.0 / double(per_agent.size()));
}

double probe_success_rate(const ModelConfig& cfg, const ParamMap& params, const EnvSpec& spec,
                          int episodes, uint64_t seed) {
  int successes = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    // Probe scenes sit in a seed range disjoint from the training pool.
    Scene scene = generate_scene(spec.scene_seed + 50000 + uint64_t(ep % 10), spec.height,
                                 spec.width, spec.wall_density);
    SoundProfile sound = make_sound_profile(ep % kNumHeardSounds, spec.sound_seed);
    Env env(std::move(scene), cfg.n_agents, sound, mix(seed, uint64_t(ep)));
    env.set_audio_noise(spec.audio_noise);
    auto obs = env.reset(mix(seed, uint64_t(ep) + 7919));
    while (!env.done()) {
      auto outputs = policy_eval(cfg, params, obs);
      std::vector<Action> actions(cfg.n_agents);
      for (int a = 0; a < cfg.n_agents; ++a) {
        int best = 0;
        for (int i = 1; i < kNumActions; ++i)
          if (outputs[a].probs[i] > outputs[a].probs[best]) best = i;
        actions[a] = Action(best);
      }
      StepOutcome out = env.step(actions);
      obs = out.observations;
      if (out.done && out.success) ++successes;
    }
  }
  return double(successes) / episodes;
}

namespace {

void dump_nan_batch(const std::string& out_dir, int update, const RolloutBuffer& buf) {
  if (out_dir.empty()) return;
  nlohmann::json j;
  j["update"] = update;
  for (int e = 0; e < buf.num_envs; ++e) {
    nlohmann::json env_rows = nlohmann::json::array();
    for (const RolloutStep& s : buf.steps[e]) {
      env_rows.push_back({{"actions", s.actions},
                          {"rewards", s.rewards},
                          {"values", s.values},
                          {"log_probs", s.log_probs},
                          {"done", s.done}});
    }
    j["envs"].push_back(env_rows);
  }
  std::ofstream f(out_dir + "/nan_batch_dump.json");
  f << j.dump(2);
}

}  // namespace

TrainResult train(const TrainConfig& tcfg, const ModelConfig& mcfg, const EnvSpec& spec,
                  const std::string& out_dir) {
  tcfg.validate();
  mcfg.validate();
  spec.validate();

  TrainResult result;
  result.params = init_params(mcfg, tcfg.seed);
  result.adam.lr = tcfg.lr;

  EnvPool pool(spec, mcfg.n_agents, tcfg.num_envs, mix(tcfg.seed, 1));
  std::mt19937_64 sample_rng(mix(tcfg.seed, 2));

  std::ofstream csv;
  if (!out_dir.empty()) {
    csv.open(out_dir + "/metrics.csv");
    if (!csv) throw TrainError("cannot open metrics.csv under " + out_dir);
    csv << "update,env_steps,L_actor,L_critic,L_entropy,L_total,mean_return,probe_SR\n";
  }

  const long long steps_per_update = (long long)tcfg.horizon * tcfg.num_envs;
  while (result.env_steps + steps_per_update <= tcfg.total_env_steps) {
    RolloutBuffer buf = collect_rollout(pool, mcfg, result.params, tcfg.horizon, sample_rng);
    auto returns = compute_returns(buf, tcfg.gamma, buf.bootstrap);

    GradMap grads;
    for (const auto& [name, t] : result.params) grads.emplace(name, Tensor(t.rows(), t.cols()));
    LossReport report;
    report.actor.assign(mcfg.n_agents, 0.0);
    report.critic.assign(mcfg.n_agents, 0.0);
    report.entropy.assign(mcfg.n_agents, 0.0);
    report.per_agent_total.assign(mcfg.n_agents, 0.0);

    const int samples = buf.num_envs * buf.horizon;
    const double inv_samples = 1.0 / samples;
    for (int e = 0; e < buf.num_envs; ++e) {
      for (int t = 0; t < buf.horizon; ++t) {
        const RolloutStep& step = buf.steps[e][t];
        Tape tape;
        ParamMap leaves;
        ForwardResult fwd = model_forward(tape, mcfg, result.params, step.obs, &leaves);
        std::vector<Tensor> per_agent;
        for (int a = 0; a < mcfg.n_agents; ++a) {
          double g = returns[e][t][a];
          double adv = g - step.values[a];  // rollout value: constant, no gradient
          AgentLossTerms terms = agent_loss(tape, fwd.probs[a], fwd.values[a], step.actions[a],
                                            adv, g, tcfg.value_coef, tcfg.entropy_coef);
          report.actor[a] += terms.actor.item() * inv_samples;
          report.critic[a] += terms.critic.item() * inv_samples;
          report.entropy[a] += terms.entropy.item() * inv_samples;
          report.per_agent_total[a] += terms.total.item() * inv_samples;
          per_agent.push_back(terms.total);
        }
        Tensor loss = total_loss(tape, per_agent);
        report.total += loss.item() * inv_samples;
        tape.backward(loss);
        for (auto& [name, leaf] : leaves) {
          Tensor g = tape.grad(leaf);
          auto& acc = grads.at(name).data;
          for (size_t i = 0; i < acc.size(); ++i) acc[i] += g.data[i] * inv_samples;
        }
      }
    }

    if (!std::isfinite(report.total)) {
      dump_nan_batch(out_dir, result.updates, buf);
      throw TrainError("non-finite loss at update " + std::to_string(result.updates));
    }

    double sq = 0.0;
    for (const auto& [name, g] : grads)
      for (double v : g.data) sq += v * v;
    report.grad_norm = std::sqrt(sq);
    if (report.grad_norm > tcfg.grad_clip && report.grad_norm > 0.0) {
      double s = tcfg.grad_clip / report.grad_norm;
      for (auto& [name, g] : grads)
        for (double& v : g.data) v *= s;
    }
    adam_step(result.params, grads, result.adam);

    result.env_steps += steps_per_update;
    ++result.updates;

    double mean_return = 0.0;
    for (double r : buf.finished_returns) mean_return += r;
    if (!buf.finished_returns.empty()) mean_return /= double(buf.finished_returns.size());

    std::string probe_field;
    if (tcfg.probe_every > 0 && result.updates % tcfg.probe_every == 0) {
      double sr = probe_success_rate(mcfg, result.params, spec, tcfg.probe_episodes,
                                     mix(tcfg.seed, 3));
      probe_field = format_metric(sr);
    }
    double mean_actor = 0, mean_critic = 0, mean_entropy = 0;
    for (int a = 0; a < mcfg.n_agents; ++a) {
      mean_actor += report.actor[a] / mcfg.n_agents;
      mean_critic += report.critic[a] / mcfg.n_agents;
      mean_entropy += report.entropy[a] / mcfg.n_agents;
    }
    std::ostringstream row;
    row << result.updates << ',' << result.env_steps << ',' << format_metric(mean_actor) << ','
        << format_metric(mean_critic) << ',' << format_metric(mean_entropy) << ','
        << format_metric(report.total) << ',' << format_metric(mean_return) << ',' << probe_field;
    result.metrics_rows.push_back(row.str());
    if (csv.is_open()) csv << row.str() << '\n' << std::flush;

    if (!out_dir.empty() && tcfg.checkpoint_every > 0 &&
        result.updates % tcfg.checkpoint_every == 0) {
      save_checkpoint(out_dir + "/ckpt_" + std::to_string(result.updates) + ".json", mcfg,
                      result.params);
    }
  }

  if (!out_dir.empty()) save_checkpoint(out_dir + "/ckpt_final.json", mcfg, result.params);
  return result;
}

}  // namespace mast
