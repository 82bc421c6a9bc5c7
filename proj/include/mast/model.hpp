#ifndef MAST_MODEL_HPP
#define MAST_MODEL_HPP

#include "mast/env.hpp"
#include "mast/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace mast {

/// Network hyperparameters and ablation switches. skip_encoders removes
/// the per-modality encoder stacks (tokens pass through unprocessed);
/// mlp_decoder replaces the shared decoder with per-agent pooling + MLP,
/// cutting all cross-agent information flow.
struct ModelConfig {
  int n_agents = 2;
  int embed_dim = 64;
  int heads = 4;
  int encoder_layers = 2;
  int decoder_layers = 2;
  bool skip_encoders = false;   // "w/o EN"
  bool mlp_decoder = false;     // "w/o DE"
  bool per_agent_params = false;

  int head_dim() const { return embed_dim / heads; }
  static constexpr int kVisualTokens = 9;   // 3x3 patches of the 9x9 window
  static constexpr int kAudioTokens = 2;    // one per ear
  static constexpr int kPatchValues = 3 * 3 * kVisionChannels;
  int tokens_per_agent() const { return kVisualTokens + kAudioTokens; }

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
  bool operator==(const ModelConfig&) const = default;
};

struct PolicyOutput {
  std::array<double, kNumActions> probs{};
  double value = 0.0;
};

/// One attention map captured during a forward pass; weights is [Lq,Lk].
struct AttentionRecord {
  std::string layer;
  int head = 0;
  Tensor weights;
};
using AttentionDump = std::vector<AttentionRecord>;

/// Deterministic initialization: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
/// for linear maps, N(0, 0.02^2) for embeddings and start tokens.
ParamMap init_params(const ModelConfig& cfg, uint64_t seed);

struct ForwardResult {
  std::vector<Tensor> probs;   // per agent, [1, kNumActions]
  std::vector<Tensor> values;  // per agent, [1,1]
  Tensor states;               // [n_agents, embed_dim] temporal state representations
};

/// Runs the network stages on a tape. When `leaves` is non-null every
/// parameter touched is registered as a tape leaf (and cached there) so
/// gradients can be queried after backward(); when null, parameters act
/// as constants and no graph is recorded.
class ModelRunner {
 public:
  ModelRunner(Tape& tape, const ModelConfig& cfg, const ParamMap& params,
              ParamMap* leaves = nullptr, AttentionDump* attn = nullptr);

  /// Nine 3x3x2 patches, linearly projected plus position embeddings.
  Tensor patch_embed_visual(
      const std::array<double, kVisionWindow * kVisionWindow * kVisionChannels>& visual,
      int agent = 0);
  /// One token per ear channel, projected plus ear-position embeddings.
  Tensor patch_embed_audio(const std::array<double, 2 * kAudioBins>& audio, int agent = 0);
  /// Per-modality encoder stacks; identity under skip_encoders.
  std::pair<Tensor, Tensor> encode_agent(const Tensor& vis_tokens, const Tensor& aud_tokens,
                                         int agent = 0);
  /// Agent-major concatenation with agent-index embeddings added.
  Tensor build_joint_sequence(const std::vector<std::pair<Tensor, Tensor>>& per_agent);
  /// Shared masked decoder (or per-agent pooling + MLP under mlp_decoder);
  /// returns one temporal state row per agent.
  Tensor decode(const Tensor& joint);
  Tensor actor_head(const Tensor& state_row, int agent = 0);   // -> [1, kNumActions]
  Tensor critic_head(const Tensor& state_row, int agent = 0);  // -> [1,1]

  /// All stages composed.
  ForwardResult forward(const std::vector<AgentObservation>& obs);

 private:
  Tensor get(const std::string& name);
  Tensor multihead(const Tensor& q_in, const Tensor& kv_in, const std::vector<uint8_t>& mask,
                   const std::string& base, const std::string& label, bool record);
  Tensor mlp(const Tensor& x, const std::string& base);
  Tensor ln(const Tensor& x, const std::string& base);
  std::string prefix(int agent) const;

  Tape& tape_;
  const ModelConfig& cfg_;
  const ParamMap& params_;
  ParamMap* leaves_;
  AttentionDump* attn_;
};

ForwardResult model_forward(Tape& tape, const ModelConfig& cfg, const ParamMap& params,
                            const std::vector<AgentObservation>& obs, ParamMap* leaves,
                            AttentionDump* attn = nullptr);

/// Constant-parameter forward on a throwaway tape.
std::vector<PolicyOutput> policy_eval(const ModelConfig& cfg, const ParamMap& params,
                                      const std::vector<AgentObservation>& obs,
                                      AttentionDump* attn = nullptr);

/// Exposed for unit tests: the nine flattened 3x3x2 patches of a visual
/// observation, as a [9,18] matrix.
Tensor visual_patches(const std::array<double, kVisionWindow * kVisionWindow * kVisionChannels>& v);

}  // namespace mast

#endif  // MAST_MODEL_HPP
