#include "mast/env.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <queue>

namespace mast {

namespace {

// Row/col deltas per heading; N points toward decreasing row.
constexpr int kDr[4] = {-1, 0, 1, 0};
constexpr int kDc[4] = {0, 1, 0, -1};

Heading turn_left(Heading h) { return Heading((int(h) + 3) % 4); }
Heading turn_right(Heading h) { return Heading((int(h) + 1) % 4); }

std::vector<int> bfs_distances(const Scene& scene, Cell from) {
  std::vector<int> dist(size_t(scene.height) * scene.width, kGeodesicUnreachable);
  std::deque<Cell> q;
  dist[size_t(from.r) * scene.width + from.c] = 0;
  q.push_back(from);
  while (!q.empty()) {
    Cell u = q.front();
    q.pop_front();
    int du = dist[size_t(u.r) * scene.width + u.c];
    for (int k = 0; k < 4; ++k) {
      int r = u.r + kDr[k], c = u.c + kDc[k];
      if (scene.is_blocked(r, c)) continue;
      int& d = dist[size_t(r) * scene.width + c];
      if (d == kGeodesicUnreachable) {
        d = du + 1;
        q.push_back({r, c});
      }
    }
  }
  return dist;
}

std::vector<Cell> free_cells(const Scene& scene) {
  std::vector<Cell> cells;
  for (int r = 0; r < scene.height; ++r)
    for (int c = 0; c < scene.width; ++c)
      if (!scene.is_blocked(r, c)) cells.push_back({r, c});
  return cells;
}

uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t x = a * 0x9E3779B97F4A7C15ULL + b + 0x7F4A7C15ULL;
  x ^= x >> 30;
  x *= 0xBF58476D1CE4E5B9ULL;
  x ^= x >> 27;
  return x;
}

}  // namespace

int manhattan(Cell a, Cell b) { return std::abs(a.r - b.r) + std::abs(a.c - b.c); }

Scene generate_scene(uint64_t seed, int height, int width, double wall_density) {
  if (height < 5 || width < 5) throw EnvError("generate_scene: grid must be at least 5x5");
  if (wall_density < 0.0 || wall_density > 0.4)
    throw EnvError("generate_scene: wall_density must be in [0, 0.4]");
  std::mt19937_64 rng(mix_seed(seed, 0xA11D10));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Scene scene;
    scene.height = height;
    scene.width = width;
    scene.seed = seed;
    scene.blocked.assign(size_t(height) * width, 0);
    for (auto& b : scene.blocked) b = u(rng) < wall_density ? 1 : 0;
    std::vector<Cell> free = free_cells(scene);
    if (free.size() < 2) continue;
    std::uniform_int_distribution<size_t> pick(0, free.size() - 1);
    scene.source = free[pick(rng)];
    scene.geodesic = bfs_distances(scene, scene.source);
    bool connected = true;
    for (const Cell& c : free)
      if (scene.dist(c.r, c.c) == kGeodesicUnreachable) {
        connected = false;
        break;
      }
    if (!connected) continue;
    scene.scene_id = "scene-" + std::to_string(seed) + "-" + std::to_string(height) + "x" +
                     std::to_string(width);
    return scene;
  }
  throw EnvError("generate_scene: no connected layout after 100 attempts");
}

std::string Scene::to_json() const {
  nlohmann::json j;
  j["height"] = height;
  j["width"] = width;
  nlohmann::json cells = nlohmann::json::array();
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c)
      if (blocked[size_t(r) * width + c]) cells.push_back({r, c});
  j["blocked"] = cells;
  j["source"] = {source.r, source.c};
  j["seed"] = seed;
  return j.dump();
}

Scene Scene::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Scene scene;
  scene.height = j.at("height").get<int>();
  scene.width = j.at("width").get<int>();
  scene.blocked.assign(size_t(scene.height) * scene.width, 0);
  for (const auto& cell : j.at("blocked"))
    scene.blocked[size_t(cell.at(0).get<int>()) * scene.width + cell.at(1).get<int>()] = 1;
  scene.source = {j.at("source").at(0).get<int>(), j.at("source").at(1).get<int>()};
  scene.seed = j.at("seed").get<uint64_t>();
  scene.geodesic = bfs_distances(scene, scene.source);
  scene.scene_id = "scene-" + std::to_string(scene.seed) + "-" + std::to_string(scene.height) +
                   "x" + std::to_string(scene.width);
  return scene;
}

SoundProfile make_sound_profile(int id, uint64_t base_seed) {
  std::mt19937_64 rng(mix_seed(base_seed, uint64_t(id) + 0x50F11E));
  std::normal_distribution<double> n(0.0, 1.0);
  // Unheard sounds come from a peakier spectral family.
  const double spread = id < kNumHeardSounds ? 1.0 : 2.0;
  SoundProfile sp;
  sp.id = id;
  double total = 0.0;
  for (double& w : sp.spectrum) {
    w = std::exp(spread * n(rng));
    total += w;
  }
  for (double& w : sp.spectrum) w /= total;
  return sp;
}

std::array<double, kVisionWindow * kVisionWindow * kVisionChannels> render_vision(
    const Scene& scene, const AgentPose& pose) {
  std::array<double, kVisionWindow * kVisionWindow * kVisionChannels> out{};
  const int half = kVisionWindow / 2;
  const int h = int(pose.heading);
  const int fr = kDr[h], fc = kDc[h];                      // forward
  const int rr = kDr[(h + 1) % 4], rc = kDc[(h + 1) % 4];  // right
  for (int i = 0; i < kVisionWindow; ++i) {
    for (int j = 0; j < kVisionWindow; ++j) {
      const int ahead = half - i;
      const int right = j - half;
      const int wr = pose.cell.r + ahead * fr + right * rr;
      const int wc = pose.cell.c + ahead * fc + right * rc;
      const size_t idx = size_t(i) * kVisionWindow + j;
      if (!scene.in_bounds(wr, wc)) {
        out[idx] = 1.0;
        out[kVisionWindow * kVisionWindow + idx] = 1.0;
      } else {
        out[idx] = scene.is_blocked(wr, wc) ? 1.0 : 0.0;
      }
    }
  }
  return out;
}

std::array<double, 2 * kAudioBins> render_audio(const Scene& scene, const AgentPose& pose,
                                                const SoundProfile& sound,
                                                std::mt19937_64* noise_rng) {
  const int d = scene.dist(pose.cell.r, pose.cell.c);
  if (d == kGeodesicUnreachable) throw EnvError("render_audio: source unreachable");
  const double intensity = 1.0 / (1.0 + d);
  double sin_bearing = 0.0;
  if (d > 0) {
    // First step of a shortest path, ties broken in N,E,S,W order.
    int step_dir = -1;
    for (int k = 0; k < 4; ++k) {
      int r = pose.cell.r + kDr[k], c = pose.cell.c + kDc[k];
      if (!scene.is_blocked(r, c) && scene.dist(r, c) == d - 1) {
        step_dir = k;
        break;
      }
    }
    const int h = int(pose.heading);
    const int lr = kDr[(h + 3) % 4], lc = kDc[(h + 3) % 4];  // left
    sin_bearing = kDr[step_dir] * lr + kDc[step_dir] * lc;
  }
  std::array<double, 2 * kAudioBins> out{};
  std::normal_distribution<double> noise(0.0, 0.01 * intensity);
  for (int k = 0; k < kAudioBins; ++k) {
    double l = intensity * (1.0 + 0.5 * sin_bearing) * sound.spectrum[k];
    double r = intensity * (1.0 - 0.5 * sin_bearing) * sound.spectrum[k];
    if (noise_rng) {
      l += noise(*noise_rng);
      r += noise(*noise_rng);
    }
    out[k] = std::max(0.0, l);
    out[kAudioBins + k] = std::max(0.0, r);
  }
  return out;
}

int shortest_path_actions(const Scene& scene, const AgentPose& pose, Cell target) {
  if (scene.is_blocked(target.r, target.c)) throw EnvError("shortest_path_actions: blocked target");
  if (pose.cell == target) return 1;
  const int W = scene.width;
  auto state_id = [&](int r, int c, int h) { return (size_t(r) * W + c) * 4 + h; };
  std::vector<int> dist(size_t(scene.height) * W * 4, -1);
  std::deque<std::array<int, 3>> q;
  dist[state_id(pose.cell.r, pose.cell.c, int(pose.heading))] = 0;
  q.push_back({pose.cell.r, pose.cell.c, int(pose.heading)});
  while (!q.empty()) {
    auto [r, c, h] = q.front();
    q.pop_front();
    int du = dist[state_id(r, c, h)];
    auto visit = [&](int nr, int nc, int nh) {
      int& d = dist[state_id(nr, nc, nh)];
      if (d == -1) {
        d = du + 1;
        if (nr == target.r && nc == target.c) return true;
        q.push_back({nr, nc, nh});
      }
      return false;
    };
    if (visit(r, c, (h + 3) % 4)) return du + 2;
    if (visit(r, c, (h + 1) % 4)) return du + 2;
    int fr = r + kDr[h], fc = c + kDc[h];
    if (!scene.is_blocked(fr, fc) && visit(fr, fc, h)) return du + 2;
  }
  throw EnvError("shortest_path_actions: target unreachable");
}

Env::Env(Scene scene, int n_agents, SoundProfile sound, uint64_t seed)
    : scene_(std::move(scene)), n_agents_(n_agents), sound_(sound) {
  if (n_agents_ < 1) throw EnvError("Env: need at least one agent");
  reset(seed);
}

std::vector<AgentObservation> Env::reset(uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 0x5EED));
  std::vector<Cell> candidates = free_cells(scene_);
  std::erase(candidates, scene_.source);
  if (int(candidates.size()) < n_agents_)
    throw EnvError("Env::reset: not enough free cells for " + std::to_string(n_agents_) +
                   " agents");
  poses_.clear();
  for (int a = 0; a < n_agents_; ++a) {
    std::uniform_int_distribution<size_t> pick(0, candidates.size() - 1);
    size_t i = pick(rng);
    std::uniform_int_distribution<int> hd(0, 3);
    poses_.push_back({candidates[i], Heading(hd(rng))});
    candidates.erase(candidates.begin() + i);
  }
  step_counts_.assign(n_agents_, 0);
  prev_manhattan_.clear();
  for (const AgentPose& p : poses_) prev_manhattan_.push_back(manhattan(p.cell, scene_.source));
  done_ = false;
  winner_.reset();
  noise_rng_.seed(mix_seed(seed, 0xA0D10));
  std::vector<AgentObservation> obs;
  for (int a = 0; a < n_agents_; ++a) obs.push_back(observe(a));
  return obs;
}

AgentObservation Env::observe(int agent) {
  AgentObservation o;
  o.visual = render_vision(scene_, poses_[agent]);
  o.audio = render_audio(scene_, poses_[agent], sound_, audio_noise_ ? &noise_rng_ : nullptr);
  return o;
}

StepOutcome Env::step(const std::vector<Action>& actions) {
  if (done_) throw EnvError("Env::step: episode already done");
  if (int(actions.size()) != n_agents_) throw EnvError("Env::step: wrong action count");
  StepOutcome out;
  out.rewards.assign(n_agents_, 0.0);
  out.distance_delta.assign(n_agents_, 0.0);
  for (int a = 0; a < n_agents_; ++a) {
    AgentPose& p = poses_[a];
    switch (actions[a]) {
      case Action::Forward: {
        int nr = p.cell.r + kDr[int(p.heading)];
        int nc = p.cell.c + kDc[int(p.heading)];
        if (!scene_.is_blocked(nr, nc)) p.cell = {nr, nc};
        break;
      }
      case Action::TurnLeft:
        p.heading = turn_left(p.heading);
        break;
      case Action::TurnRight:
        p.heading = turn_right(p.heading);
        break;
      case Action::Stop:
        break;
    }
    int m = manhattan(p.cell, scene_.source);
    out.rewards[a] = -0.01 + (m < prev_manhattan_[a] ? 0.25 : 0.0);
    out.distance_delta[a] = m - prev_manhattan_[a];
    prev_manhattan_[a] = m;
    step_counts_[a] += 1;
  }
  for (int a = 0; a < n_agents_; ++a) {
    if (actions[a] == Action::Stop && poses_[a].cell == scene_.source) {
      out.rewards[a] += 10.0;
      out.success = true;
      winner_ = a;
      done_ = true;
      break;  // lower index wins simultaneous stops
    }
  }
  for (int a = 0; a < n_agents_; ++a)
    if (step_counts_[a] >= kMaxEpisodeSteps) done_ = true;
  out.done = done_;
  out.winner = winner_;
  for (int a = 0; a < n_agents_; ++a) out.observations.push_back(observe(a));
  return out;
}

std::string trace_line(int step, const Scene& scene, const std::vector<AgentPose>& poses,
                       const std::vector<Action>& actions, const std::vector<double>& rewards) {
  static const char* headings = "NESW";
  nlohmann::json j;
  j["step"] = step;
  nlohmann::json agents = nlohmann::json::array();
  for (size_t a = 0; a < poses.size(); ++a) {
    nlohmann::json ja;
    ja["r"] = poses[a].cell.r;
    ja["c"] = poses[a].cell.c;
    ja["heading"] = std::string(1, headings[int(poses[a].heading)]);
    ja["action"] = int(actions[a]);
    ja["reward"] = rewards[a];
    ja["distance"] = scene.dist(poses[a].cell.r, poses[a].cell.c);
    agents.push_back(ja);
  }
  j["agents"] = agents;
  return j.dump();
}

}  // namespace mast
