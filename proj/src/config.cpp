#include "mast/config.hpp"

#include "json.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace mast {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ConfigError("unknown key \"" + key + "\" in " + where);
}

template <typename T>
void take(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("wrong type for \"" + std::string(key) + "\" in " + where);
  }
}

void parse_train(const json& j, TrainConfig& t) {
  reject_unknown(j,
                 {"gamma", "lr", "entropy_coef", "value_coef", "grad_clip", "horizon", "num_envs",
                  "total_env_steps", "seed", "checkpoint_every", "probe_every", "probe_episodes"},
                 "train");
  take(j, "gamma", t.gamma, "train");
  take(j, "lr", t.lr, "train");
  take(j, "entropy_coef", t.entropy_coef, "train");
  take(j, "value_coef", t.value_coef, "train");
  take(j, "grad_clip", t.grad_clip, "train");
  take(j, "horizon", t.horizon, "train");
  take(j, "num_envs", t.num_envs, "train");
  take(j, "total_env_steps", t.total_env_steps, "train");
  take(j, "seed", t.seed, "train");
  take(j, "checkpoint_every", t.checkpoint_every, "train");
  take(j, "probe_every", t.probe_every, "train");
  take(j, "probe_episodes", t.probe_episodes, "train");
}

void parse_model(const json& j, ModelConfig& m) {
  reject_unknown(j,
                 {"n_agents", "embed_dim", "heads", "encoder_layers", "decoder_layers",
                  "skip_encoders", "mlp_decoder", "per_agent_params"},
                 "model");
  take(j, "n_agents", m.n_agents, "model");
  take(j, "embed_dim", m.embed_dim, "model");
  take(j, "heads", m.heads, "model");
  take(j, "encoder_layers", m.encoder_layers, "model");
  take(j, "decoder_layers", m.decoder_layers, "model");
  take(j, "skip_encoders", m.skip_encoders, "model");
  take(j, "mlp_decoder", m.mlp_decoder, "model");
  take(j, "per_agent_params", m.per_agent_params, "model");
}

void parse_env(const json& j, EnvSpec& e) {
  reject_unknown(
      j, {"height", "width", "wall_density", "num_scenes", "scene_seed", "sound_seed",
          "audio_noise"},
      "env");
  take(j, "height", e.height, "env");
  take(j, "width", e.width, "env");
  take(j, "wall_density", e.wall_density, "env");
  take(j, "num_scenes", e.num_scenes, "env");
  take(j, "scene_seed", e.scene_seed, "env");
  take(j, "sound_seed", e.sound_seed, "env");
  take(j, "audio_noise", e.audio_noise, "env");
}

void parse_eval(const json& j, EvalConfig& e) {
  reject_unknown(j,
                 {"height", "width", "wall_density", "scene_seed", "num_scenes",
                  "episodes_per_scene", "sound_seed", "audio_noise"},
                 "eval");
  take(j, "height", e.height, "eval");
  take(j, "width", e.width, "eval");
  take(j, "wall_density", e.wall_density, "eval");
  take(j, "scene_seed", e.scene_seed, "eval");
  take(j, "num_scenes", e.num_scenes, "eval");
  take(j, "episodes_per_scene", e.episodes_per_scene, "eval");
  take(j, "sound_seed", e.sound_seed, "eval");
  take(j, "audio_noise", e.audio_noise, "eval");
}

}  // namespace

std::string default_output_root() {
  const char* root = std::getenv("MASTAVN_OUTPUT_ROOT");
  return root && *root ? root : "runs";
}

void ExperimentConfig::validate() const {
  if (run_id.empty()) throw ConfigError("missing required field \"run_id\"");
  try {
    train.validate();
    model.validate();
    env.validate();
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (eval.num_scenes < 1 || eval.episodes_per_scene < 1)
    throw ConfigError("eval: num_scenes and episodes_per_scene must be positive");
  if (eval.wall_density < 0.0 || eval.wall_density > 0.4)
    throw ConfigError("eval: wall_density outside [0, 0.4]");
}

std::string ExperimentConfig::to_json() const {
  json j;
  j["run_id"] = run_id;
  j["output_dir"] = output_dir;
  j["train"] = {{"gamma", train.gamma},
                {"lr", train.lr},
                {"entropy_coef", train.entropy_coef},
                {"value_coef", train.value_coef},
                {"grad_clip", train.grad_clip},
                {"horizon", train.horizon},
                {"num_envs", train.num_envs},
                {"total_env_steps", train.total_env_steps},
                {"seed", train.seed},
                {"checkpoint_every", train.checkpoint_every},
                {"probe_every", train.probe_every},
                {"probe_episodes", train.probe_episodes}};
  j["model"] = json::parse(model.to_json());
  j["env"] = {{"height", env.height},
              {"width", env.width},
              {"wall_density", env.wall_density},
              {"num_scenes", env.num_scenes},
              {"scene_seed", env.scene_seed},
              {"sound_seed", env.sound_seed},
              {"audio_noise", env.audio_noise}};
  j["eval"] = {{"height", eval.height},
               {"width", eval.width},
               {"wall_density", eval.wall_density},
               {"scene_seed", eval.scene_seed},
               {"num_scenes", eval.num_scenes},
               {"episodes_per_scene", eval.episodes_per_scene},
               {"sound_seed", eval.sound_seed},
               {"audio_noise", eval.audio_noise}};
  return j.dump(2);
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  reject_unknown(j, {"run_id", "output_dir", "train", "model", "env", "eval"}, "config root");
  ExperimentConfig cfg;
  take(j, "run_id", cfg.run_id, "config root");
  take(j, "output_dir", cfg.output_dir, "config root");
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("model")) parse_model(j.at("model"), cfg.model);
  if (j.contains("env")) parse_env(j.at("env"), cfg.env);
  if (j.contains("eval")) parse_eval(j.at("eval"), cfg.eval);
  if (cfg.output_dir.empty()) cfg.output_dir = default_output_root() + "/" + cfg.run_id;
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return ExperimentConfig::from_json_text(buf.str());
}

}  // namespace mast
