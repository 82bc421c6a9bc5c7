#ifndef MAST_ENV_HPP
#define MAST_ENV_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mast {

struct EnvError : std::runtime_error {
  explicit EnvError(const std::string& msg) : std::runtime_error(msg) {}
};

enum class Action : int { Forward = 0, TurnLeft = 1, TurnRight = 2, Stop = 3 };
enum class Heading : int { N = 0, E = 1, S = 2, W = 3 };

constexpr int kNumActions = 4;
constexpr int kAudioBins = 16;
constexpr int kVisionWindow = 9;       // egocentric patch is 9x9
constexpr int kVisionChannels = 2;     // occupancy + out-of-bounds mask
constexpr int kMaxEpisodeSteps = 500;  // per agent

constexpr int kGeodesicUnreachable = -1;

struct Cell {
  int r = 0;
  int c = 0;
  bool operator==(const Cell&) const = default;
};

/// Occupancy grid with a single audio source and its BFS distance field.
struct Scene {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> blocked;  // row-major, 1 = wall
  Cell source;
  uint64_t seed = 0;
  std::string scene_id;
  std::vector<int> geodesic;  // 4-connected steps to source, -1 unreachable

  bool in_bounds(int r, int c) const { return r >= 0 && r < height && c >= 0 && c < width; }
  bool is_blocked(int r, int c) const {
    return !in_bounds(r, c) || blocked[size_t(r) * width + c] != 0;
  }
  int dist(int r, int c) const { return geodesic[size_t(r) * width + c]; }

  std::string to_json() const;
  static Scene from_json(const std::string& text);
};

/// density in [0, 0.4]; retries wall layouts until the free region is
/// connected (up to 100 attempts).
Scene generate_scene(uint64_t seed, int height, int width, double wall_density);

struct AgentPose {
  Cell cell;
  Heading heading = Heading::N;
  bool operator==(const AgentPose&) const = default;
};

/// Fixed per-sound frequency signature; spectrum sums to 1.
struct SoundProfile {
  int id = 0;
  std::array<double, kAudioBins> spectrum{};
};

/// Deterministic spectrum for a sound id. Ids 0..5 are the training
/// ("heard") set, 6..7 the held-out ("unheard") set drawn from a peakier
/// distribution.
SoundProfile make_sound_profile(int id, uint64_t base_seed);

constexpr int kNumSounds = 8;
constexpr int kNumHeardSounds = 6;

struct AgentObservation {
  // channel-major: occupancy window first, then the out-of-bounds mask.
  std::array<double, kVisionWindow * kVisionWindow * kVisionChannels> visual{};
  std::array<double, 2 * kAudioBins> audio{};  // left row then right row
};

std::array<double, kVisionWindow * kVisionWindow * kVisionChannels> render_vision(
    const Scene& scene, const AgentPose& pose);

/// Parametric binaural model: intensity 1/(1+geodesic), left/right
/// panning from the bearing of the first shortest-path step, per-bin
/// Gaussian noise sigma = 0.01 * intensity (clamped at 0). Pass nullptr
/// to disable noise.
std::array<double, 2 * kAudioBins> render_audio(const Scene& scene, const AgentPose& pose,
                                                const SoundProfile& sound,
                                                std::mt19937_64* noise_rng);

/// Minimal number of {Forward, TurnLeft, TurnRight} actions from pose to
/// target over the (cell, heading) graph, plus 1 for the terminal Stop.
int shortest_path_actions(const Scene& scene, const AgentPose& pose, Cell target);

struct StepOutcome {
  std::vector<AgentObservation> observations;
  std::vector<double> rewards;
  bool done = false;
  std::vector<double> distance_delta;  // Manhattan, current - previous
  bool success = false;
  std::optional<int> winner;
};

/// One multi-agent episode. Agents act simultaneously each step; the
/// lowest-indexed agent stopping on the source wins and ends the episode.
class Env {
 public:
  Env(Scene scene, int n_agents, SoundProfile sound, uint64_t seed);

  std::vector<AgentObservation> reset(uint64_t seed);
  StepOutcome step(const std::vector<Action>& actions);

  const Scene& scene() const { return scene_; }
  const SoundProfile& sound() const { return sound_; }
  int n_agents() const { return n_agents_; }
  bool done() const { return done_; }
  std::optional<int> winner() const { return winner_; }
  const std::vector<AgentPose>& poses() const { return poses_; }
  const std::vector<int>& step_counts() const { return step_counts_; }
  void set_audio_noise(bool enabled) { audio_noise_ = enabled; }

 private:
  AgentObservation observe(int agent);

  Scene scene_;
  int n_agents_;
  SoundProfile sound_;
  bool audio_noise_ = true;
  std::vector<AgentPose> poses_;
  std::vector<int> step_counts_;
  std::vector<int> prev_manhattan_;
  bool done_ = true;
  std::optional<int> winner_;
  std::mt19937_64 noise_rng_;
};

int manhattan(Cell a, Cell b);

/// One JSON line per step: {step, agents:[{r,c,heading,action,reward,distance}]}.
std::string trace_line(int step, const Scene& scene, const std::vector<AgentPose>& poses,
                       const std::vector<Action>& actions, const std::vector<double>& rewards);

}  // namespace mast

#endif  // MAST_ENV_HPP
