#include "CLI11.hpp"

#include "mast/config.hpp"
#include "mast/metrics.hpp"
#include "mast/report.hpp"
#include "mast/training.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace mast;

namespace {

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << content;
}

ExperimentConfig load_config(const std::string& path, std::optional<uint64_t> seed,
                             const std::string& out_override) {
  ExperimentConfig cfg = parse_config(path);
  if (seed) cfg.train.seed = *seed;
  if (!out_override.empty()) cfg.output_dir = out_override;
  return cfg;
}

// Every run directory gets the exact config used, for bit-level replay.
void prepare_run_dir(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  write_file(cfg.output_dir + "/config.json", cfg.to_json());
}

int cmd_train(const ExperimentConfig& cfg) {
  prepare_run_dir(cfg);
  TrainResult res = train(cfg.train, cfg.model, cfg.env, cfg.output_dir);
  std::cout << "trained " << res.updates << " updates / " << res.env_steps << " env steps; final "
            << "checkpoint at " << cfg.output_dir << "/ckpt_final.json\n";
  return 0;
}

void write_report(const ExperimentConfig& cfg, const MetricsReport& report,
                  const std::vector<EpisodeRecord>& records) {
  prepare_run_dir(cfg);
  std::string tag = report.method + "_" + report.split;
  std::ofstream csv(cfg.output_dir + "/metrics_" + tag + ".csv");
  csv << report.csv_header() << '\n' << report.csv_row() << '\n';
  std::ofstream jsonl(cfg.output_dir + "/episodes_" + tag + ".jsonl");
  for (const EpisodeRecord& ep : records) {
    jsonl << "{\"scene\":\"" << ep.scene_id << "\",\"sound\":" << ep.sound_id << ",\"winner\":"
          << (ep.winner ? std::to_string(*ep.winner) : "null")
          << ",\"path_cells\":" << ep.winner_path_cells << ",\"actions\":" << ep.winner_actions
          << ",\"shortest_cells\":" << ep.shortest_path_cells
          << ",\"min_actions\":" << ep.min_actions << "}\n";
  }
  std::cout << report.csv_header() << '\n' << report.csv_row() << '\n';
}

void write_sample_trace(const ExperimentConfig& cfg, Policy& policy, const std::string& tag,
                        uint64_t seed) {
  Scene scene = generate_scene(cfg.eval.scene_seed, cfg.eval.height, cfg.eval.width,
                               cfg.eval.wall_density);
  Env env(scene, cfg.model.n_agents, make_sound_profile(0, cfg.eval.sound_seed), seed);
  env.set_audio_noise(cfg.eval.audio_noise);
  env.reset(seed);
  std::ostringstream trace;
  trace << trace_header_line(scene, env.poses()) << '\n';
  run_episode(env, policy, seed, &trace);
  write_file(cfg.output_dir + "/trace_" + tag + ".jsonl", trace.str());
}

int cmd_eval(const ExperimentConfig& cfg, const std::string& ckpt_path, const std::string& split,
             const std::string& method) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  auto policy = make_model_policy(ckpt.config, ckpt.params);
  std::vector<EpisodeRecord> records;
  MetricsReport report = evaluate(*policy, ckpt.config.n_agents, cfg.eval, split, cfg.train.seed,
                                  method, &records);
  write_report(cfg, report, records);
  write_sample_trace(cfg, *policy, report.method + "_" + split, cfg.train.seed);
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, const std::string& ckpt_path, const std::string& kind,
               const std::string& split) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  std::vector<EpisodeRecord> records;
  MetricsReport report = run_ablation(kind, ckpt, cfg.eval, split, cfg.train.seed, &records);
  write_report(cfg, report, records);
  return 0;
}

int cmd_baseline(const ExperimentConfig& cfg, const std::string& ckpt_path,
                 const std::string& kind, const std::string& split) {
  std::optional<Checkpoint> ckpt;
  if (!ckpt_path.empty()) ckpt = load_checkpoint(ckpt_path);
  std::vector<EpisodeRecord> records;
  MetricsReport report = run_baseline(kind, ckpt ? &*ckpt : nullptr, cfg.eval, split,
                                      cfg.train.seed, &records);
  write_report(cfg, report, records);
  return 0;
}

int cmd_plot_traj(const std::string& trace_path, std::string out_path) {
  std::ifstream f(trace_path);
  if (!f) throw std::runtime_error("cannot open trace: " + trace_path);
  std::ostringstream buf;
  buf << f.rdbuf();
  std::string svg = trajectory_svg(buf.str());
  if (out_path.empty()) out_path = trace_path + ".svg";
  write_file(out_path, svg);
  std::cout << "wrote " << out_path << '\n';
  return 0;
}

int cmd_dump_attn(const std::string& ckpt_path, uint64_t seed, const std::string& out_path) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  Scene scene = generate_scene(seed, 10, 10, 0.15);
  Env env(scene, ckpt.config.n_agents, make_sound_profile(0, 77), seed);
  std::vector<AgentObservation> obs = env.reset(seed);
  std::string csv = attention_csv(ckpt.config, ckpt.params, obs);
  if (out_path.empty())
    std::cout << csv;
  else
    write_file(out_path, csv);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mastavn: multi-agent audio-visual navigation experiments"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, out_path, method, split = "heard", trace_path;
  std::optional<uint64_t> seed;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", config_path, "experiment config file");
    if (needs_config) c->required();
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out_path, "override the output directory");
  };

  CLI::App* s_train = app.add_subcommand("train", "run the training loop");
  add_common(s_train, true);

  CLI::App* s_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(s_eval, true);
  s_eval->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  s_eval->add_option("--split", split, "heard|unheard");
  s_eval->add_option("--method", method, "label for the report");

  CLI::App* s_ablate = app.add_subcommand("ablate", "evaluate an ablated checkpoint");
  add_common(s_ablate, true);
  s_ablate->add_option("--checkpoint", ckpt_path, "ablated checkpoint")->required();
  s_ablate->add_option("--method", method, "wo-en|wo-de")->required();
  s_ablate->add_option("--split", split, "heard|unheard");

  CLI::App* s_base = app.add_subcommand("baseline", "run a baseline policy");
  add_common(s_base, true);
  s_base->add_option("--checkpoint", ckpt_path, "single-agent checkpoint (independent)");
  s_base->add_option("--method", method, "random-two-agent|independent-two-agent")->required();
  s_base->add_option("--split", split, "heard|unheard");

  CLI::App* s_plot = app.add_subcommand("plot-traj", "render a trace as SVG");
  s_plot->add_option("trace", trace_path, "episode trace (header + step lines)")->required();
  s_plot->add_option("--out", out_path, "output SVG path");

  CLI::App* s_attn = app.add_subcommand("dump-attn", "dump attention weights as CSV");
  s_attn->add_option("--checkpoint", ckpt_path, "model checkpoint")->required();
  s_attn->add_option("--seed", seed, "observation batch seed");
  s_attn->add_option("--out", out_path, "output CSV path (stdout if omitted)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (s_train->parsed()) return cmd_train(load_config(config_path, seed, out_path));
    if (s_eval->parsed())
      return cmd_eval(load_config(config_path, seed, out_path), ckpt_path, split,
                      method.empty() ? "mast" : method);
    if (s_ablate->parsed())
      return cmd_ablate(load_config(config_path, seed, out_path), ckpt_path, method, split);
    if (s_base->parsed())
      return cmd_baseline(load_config(config_path, seed, out_path), ckpt_path, method, split);
    if (s_plot->parsed()) return cmd_plot_traj(trace_path, out_path);
    if (s_attn->parsed()) return cmd_dump_attn(ckpt_path, seed.value_or(0), out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
