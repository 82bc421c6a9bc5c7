#include "doctest.h"

#include "mast/metrics.hpp"

#include <algorithm>
#include <random>
#include <sstream>

using namespace mast;

namespace {

EpisodeRecord synthetic(bool success, int l, int p, int n_opt, int n) {
  EpisodeRecord ep;
  if (success) ep.winner = 0;
  ep.shortest_path_cells = l;
  ep.winner_path_cells = p;
  ep.min_actions = n_opt;
  ep.winner_actions = n;
  return ep;
}

ModelConfig tiny_config(int n_agents) {
  ModelConfig cfg;
  cfg.n_agents = n_agents;
  cfg.embed_dim = 8;
  cfg.heads = 2;
  cfg.encoder_layers = 1;
  cfg.decoder_layers = 1;
  return cfg;
}

EvalConfig small_eval() {
  EvalConfig cfg;
  cfg.height = 6;
  cfg.width = 6;
  cfg.wall_density = 0.0;
  cfg.num_scenes = 2;
  cfg.episodes_per_scene = 3;
  return cfg;
}

// Steers agent 0 down the geodesic gradient; everyone else holds Stop.
class PilotPolicy : public Policy {
 public:
  explicit PilotPolicy(Env& env) : env_(env) {}
  std::vector<Action> act(const std::vector<AgentObservation>&) override {
    const Scene& scene = env_.scene();
    const AgentPose& pose = env_.poses()[0];
    std::vector<Action> actions(env_.n_agents(), Action::Stop);
    if (pose.cell == scene.source) return actions;  // Stop wins
    static const int dr[] = {-1, 0, 1, 0};
    static const int dc[] = {0, 1, 0, -1};
    int h = int(pose.heading);
    int ar = pose.cell.r + dr[h], ac = pose.cell.c + dc[h];
    int here = scene.dist(pose.cell.r, pose.cell.c);
    if (!scene.is_blocked(ar, ac) && scene.dist(ar, ac) == here - 1)
      actions[0] = Action::Forward;
    else
      actions[0] = Action::TurnRight;
    return actions;
  }

 private:
  Env& env_;
};

}  // namespace

TEST_CASE("success rate basics") {
  std::vector<EpisodeRecord> all_fail(3, synthetic(false, 4, 0, 0, 0));
  CHECK(success_rate(all_fail) == 0.0);
  std::vector<EpisodeRecord> all_win(3, synthetic(true, 4, 4, 5, 5));
  CHECK(success_rate(all_win) == 1.0);
  std::vector<EpisodeRecord> mixed = {synthetic(true, 2, 2, 3, 3), synthetic(true, 2, 2, 3, 3),
                                      synthetic(true, 2, 2, 3, 3), synthetic(false, 2, 0, 0, 0)};
  CHECK(success_rate(mixed) == 0.75);
  CHECK_THROWS_AS(success_rate({}), MetricsError);
}

TEST_CASE("spl and sna single-episode terms") {
  CHECK(spl({synthetic(true, 4, 4, 5, 5)}) == 1.0);   // optimal path
  CHECK(spl({synthetic(false, 4, 9, 5, 9)}) == 0.0);  // failure contributes 0
  CHECK(spl({synthetic(true, 4, 8, 5, 9)}) == 0.5);
  CHECK(sna({synthetic(true, 4, 4, 5, 5)}) == 1.0);
  CHECK(sna({synthetic(true, 4, 4, 5, 10)}) == 0.5);
  CHECK_THROWS_AS(spl({}), MetricsError);
  CHECK_THROWS_AS(sna({}), MetricsError);
}

TEST_CASE("metric oracle over the exhaustive small-integer grid") {
  std::vector<EpisodeRecord> eps;
  std::vector<double> spl_terms, sna_terms;
  for (int success = 0; success <= 1; ++success)
    for (int l = 1; l <= 5; ++l)
      for (int p = l; p <= 8; ++p)
        for (int n_opt = 1; n_opt <= 5; ++n_opt)
          for (int n = n_opt; n <= 8; ++n) {
            eps.push_back(synthetic(success, l, p, n_opt, n));
            spl_terms.push_back(success ? double(l) / std::max(p, l) : 0.0);
            sna_terms.push_back(success ? double(n_opt) / std::max(n, n_opt) : 0.0);
          }
  double spl_want = 0, sna_want = 0;
  for (size_t i = 0; i < eps.size(); ++i) {
    spl_want += spl_terms[i];
    sna_want += sna_terms[i];
  }
  spl_want /= eps.size();
  sna_want /= eps.size();
  CHECK(spl(eps) == doctest::Approx(spl_want).epsilon(1e-12));
  CHECK(sna(eps) == doctest::Approx(sna_want).epsilon(1e-12));
  // Each term is the SR indicator shrunk by a ratio <= 1.
  CHECK(spl(eps) <= success_rate(eps));
  CHECK(sna(eps) <= success_rate(eps));
}

TEST_CASE("metrics are permutation invariant") {
  std::mt19937_64 rng(3);
  std::vector<EpisodeRecord> eps;
  for (int i = 0; i < 40; ++i)
    eps.push_back(synthetic(rng() % 2, 1 + int(rng() % 5), 1 + int(rng() % 9),
                            1 + int(rng() % 5), 1 + int(rng() % 9)));
  double sr0 = success_rate(eps), spl0 = spl(eps), sna0 = sna(eps);
  std::shuffle(eps.begin(), eps.end(), rng);
  CHECK(success_rate(eps) == doctest::Approx(sr0).epsilon(1e-12));
  CHECK(spl(eps) == doctest::Approx(spl0).epsilon(1e-12));
  CHECK(sna(eps) == doctest::Approx(sna0).epsilon(1e-12));
}

TEST_CASE("run_episode records the first finisher faithfully") {
  for (uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL, 5ULL}) {
    Scene scene = generate_scene(400 + seed, 8, 8, 0.1);
    Env env(scene, 2, make_sound_profile(0, 77), seed);
    PilotPolicy pilot(env);
    EpisodeRecord rec = run_episode(env, pilot, seed * 31);
    REQUIRE(rec.success());
    CHECK(*rec.winner == 0);  // only agent 0 moves
    // The pilot walks the geodesic, so cells traversed equals the
    // shortest path length from its own start.
    CHECK(rec.winner_path_cells == rec.shortest_path_cells);
    CHECK(rec.winner_actions == env.step_counts()[0]);
    CHECK(rec.winner_actions >= rec.min_actions);
    CHECK(rec.shortest_path_cells ==
          scene.dist(rec.starts[0].cell.r, rec.starts[0].cell.c));
    CHECK(spl({rec}) == 1.0);
    CHECK(sna({rec}) <= 1.0);
    CHECK(sna({rec}) > 0.0);
  }
}

TEST_CASE("evaluate is deterministic and splits use disjoint sounds") {
  auto policy_a = make_random_policy(2);
  auto policy_b = make_random_policy(2);
  std::vector<EpisodeRecord> rec_heard, rec_unheard;
  MetricsReport a = evaluate(*policy_a, 2, small_eval(), "heard", 99, "random", &rec_heard);
  MetricsReport b = evaluate(*policy_b, 2, small_eval(), "heard", 99, "random");
  CHECK(a.sr == b.sr);
  CHECK(a.spl == b.spl);
  CHECK(a.sna == b.sna);
  CHECK(a.episodes == 6);
  CHECK(a.spl <= a.sr);
  CHECK(a.sna <= a.sr);

  evaluate(*policy_a, 2, small_eval(), "unheard", 99, "random", &rec_unheard);
  for (const EpisodeRecord& ep : rec_heard) CHECK(ep.sound_id < kNumHeardSounds);
  for (const EpisodeRecord& ep : rec_unheard) CHECK(ep.sound_id >= kNumHeardSounds);
  CHECK_THROWS_AS(evaluate(*policy_a, 2, small_eval(), "nonsense", 1, "x"), MetricsError);
}

TEST_CASE("independent baseline has zero cross-agent information flow") {
  ModelConfig cfg = tiny_config(1);
  ParamMap params = init_params(cfg, 5);
  auto policy = make_independent_policy(cfg, params, 2);
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<AgentObservation> obs(2);
  for (auto& o : obs) {
    for (double& v : o.visual) v = u(rng) < 0.3;
    for (double& v : o.audio) v = u(rng) * 0.1;
  }
  auto base = policy->act(obs);
  auto perturbed_obs = obs;
  for (double& v : perturbed_obs[1].visual) v = 1.0 - v;
  for (double& v : perturbed_obs[1].audio) v += 2.0;
  auto perturbed = policy->act(perturbed_obs);
  CHECK(base[0] == perturbed[0]);

  // The wrapper refuses multi-agent models.
  ModelConfig joint = tiny_config(2);
  CHECK_THROWS_AS(make_independent_policy(joint, init_params(joint, 5), 2), MetricsError);
}

TEST_CASE("baseline and ablation runners label and validate") {
  MetricsReport r = run_baseline("random-two-agent", nullptr, small_eval(), "heard", 7);
  CHECK(r.method == "random-two-agent");
  CHECK(r.split == "heard");
  CHECK(r.csv_header() == "method,split,SR,SPL,SNA,episodes,seed");
  std::istringstream row(r.csv_row());
  std::string field;
  std::getline(row, field, ',');
  CHECK(field == "random-two-agent");
  CHECK_THROWS_AS(run_baseline("bogus", nullptr, small_eval(), "heard", 7), MetricsError);
  CHECK_THROWS_AS(run_baseline("independent-two-agent", nullptr, small_eval(), "heard", 7),
                  MetricsError);

  Checkpoint ckpt;
  ckpt.config = tiny_config(2);  // no ablation flags set
  ckpt.params = init_params(ckpt.config, 8);
  CHECK_THROWS_AS(run_ablation("wo-en", ckpt, small_eval(), "heard", 7), MetricsError);
  CHECK_THROWS_AS(run_ablation("wo-de", ckpt, small_eval(), "heard", 7), MetricsError);

  Checkpoint ab;
  ab.config = tiny_config(2);
  ab.config.mlp_decoder = true;
  ab.params = init_params(ab.config, 8);
  MetricsReport ar = run_ablation("wo-de", ab, small_eval(), "heard", 7);
  CHECK(ar.method == "wo-de");
}

TEST_CASE("episode traces are one JSON object per step") {
  Scene scene = generate_scene(55, 6, 6, 0.0);
  Env env(scene, 1, make_sound_profile(1, 77), 9);
  PilotPolicy pilot(env);
  std::ostringstream trace;
  EpisodeRecord rec = run_episode(env, pilot, 10, &trace);
  int lines = 0;
  std::istringstream in(trace.str());
  std::string line;
  while (std::getline(in, line)) {
    CHECK(line.front() == '{');
    CHECK(line.find("\"step\"") != std::string::npos);
    ++lines;
  }
  CHECK(lines == rec.step_counts[0]);
}
