#include "mast/model.hpp"

#include "json.hpp"

#include <cmath>

namespace mast {

namespace {

enum class Init { Linear, Zero, One, Embedding };

struct ParamSpec {
  std::string name;
  int rows, cols;
  Init init;
};

std::string agent_prefix(const ModelConfig& cfg, int agent) {
  return cfg.per_agent_params ? "agent" + std::to_string(agent) + "." : "";
}

void append_attention_specs(std::vector<ParamSpec>& out, const std::string& base, int d) {
  out.push_back({base + ".wq", d, d, Init::Linear});
  out.push_back({base + ".bq", 1, d, Init::Zero});
  out.push_back({base + ".wk", d, d, Init::Linear});
  out.push_back({base + ".bk", 1, d, Init::Zero});
  out.push_back({base + ".wv", d, d, Init::Linear});
  out.push_back({base + ".bv", 1, d, Init::Zero});
  out.push_back({base + ".wo", d, d, Init::Linear});
  out.push_back({base + ".bo", 1, d, Init::Zero});
}

void append_mlp_specs(std::vector<ParamSpec>& out, const std::string& base, int d) {
  out.push_back({base + ".w1", d, 4 * d, Init::Linear});
  out.push_back({base + ".b1", 1, 4 * d, Init::Zero});
  out.push_back({base + ".w2", 4 * d, d, Init::Linear});
  out.push_back({base + ".b2", 1, d, Init::Zero});
}

void append_ln_specs(std::vector<ParamSpec>& out, const std::string& base, int d) {
  out.push_back({base + ".g", 1, d, Init::One});
  out.push_back({base + ".b", 1, d, Init::Zero});
}

std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
  const int d = cfg.embed_dim;
  std::vector<ParamSpec> out;
  const int sets = cfg.per_agent_params ? cfg.n_agents : 1;
  for (int a = 0; a < sets; ++a) {
    const std::string p = cfg.per_agent_params ? "agent" + std::to_string(a) + "." : "";
    out.push_back({p + "embed.vis.w", ModelConfig::kPatchValues, d, Init::Linear});
    out.push_back({p + "embed.vis.b", 1, d, Init::Zero});
    out.push_back({p + "embed.vis.pos", ModelConfig::kVisualTokens, d, Init::Embedding});
    out.push_back({p + "embed.aud.w", kAudioBins, d, Init::Linear});
    out.push_back({p + "embed.aud.b", 1, d, Init::Zero});
    out.push_back({p + "embed.aud.pos", ModelConfig::kAudioTokens, d, Init::Embedding});
    if (!cfg.skip_encoders) {
      for (const char* mod : {"vis", "aud"}) {
        for (int l = 0; l < cfg.encoder_layers; ++l) {
          std::string base = p + "enc." + mod + "." + std::to_string(l);
          append_ln_specs(out, base + ".ln1", d);
          append_attention_specs(out, base + ".attn", d);
          append_ln_specs(out, base + ".ln2", d);
          append_mlp_specs(out, base + ".mlp", d);
        }
      }
    }
    out.push_back({p + "head.actor.w", d, kNumActions, Init::Linear});
    out.push_back({p + "head.actor.b", 1, kNumActions, Init::Zero});
    out.push_back({p + "head.critic.w", d, 1, Init::Linear});
    out.push_back({p + "head.critic.b", 1, 1, Init::Zero});
  }
  out.push_back({"agent_emb", cfg.n_agents, d, Init::Embedding});
  if (cfg.mlp_decoder) {
    append_mlp_specs(out, "mlpdec", d);
  } else {
    out.push_back({"dec.start", 1, d, Init::Embedding});
    append_ln_specs(out, "dec.ln_mem", d);
    for (int l = 0; l < cfg.decoder_layers; ++l) {
      std::string base = "dec." + std::to_string(l);
      append_ln_specs(out, base + ".self.ln", d);
      append_attention_specs(out, base + ".self", d);
      append_ln_specs(out, base + ".cross.ln", d);
      append_attention_specs(out, base + ".cross", d);
      append_ln_specs(out, base + ".mlp.ln", d);
      append_mlp_specs(out, base + ".mlp", d);
    }
    append_ln_specs(out, "dec.ln_f", d);
  }
  return out;
}

}  // namespace

void ModelConfig::validate() const {
  if (n_agents < 1 || n_agents > 16) throw std::invalid_argument("n_agents out of range");
  if (embed_dim <= 0 || heads <= 0 || encoder_layers <= 0 || decoder_layers <= 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (embed_dim % heads != 0) throw std::invalid_argument("embed_dim must be divisible by heads");
}

std::string ModelConfig::to_json() const {
  nlohmann::json j;
  j["n_agents"] = n_agents;
  j["embed_dim"] = embed_dim;
  j["heads"] = heads;
  j["encoder_layers"] = encoder_layers;
  j["decoder_layers"] = decoder_layers;
  j["skip_encoders"] = skip_encoders;
  j["mlp_decoder"] = mlp_decoder;
  j["per_agent_params"] = per_agent_params;
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig cfg;
  cfg.n_agents = j.at("n_agents").get<int>();
  cfg.embed_dim = j.at("embed_dim").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.encoder_layers = j.at("encoder_layers").get<int>();
  cfg.decoder_layers = j.at("decoder_layers").get<int>();
  cfg.skip_encoders = j.at("skip_encoders").get<bool>();
  cfg.mlp_decoder = j.at("mlp_decoder").get<bool>();
  cfg.per_agent_params = j.at("per_agent_params").get<bool>();
  cfg.validate();
  return cfg;
}

ParamMap init_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamMap params;
  for (const ParamSpec& spec : param_specs(cfg)) {
    Tensor t(spec.rows, spec.cols);
    switch (spec.init) {
      case Init::Linear: {
        double bound = 1.0 / std::sqrt(double(spec.rows));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (double& v : t.data) v = u(rng);
        break;
      }
      case Init::Zero:
        break;
      case Init::One:
        for (double& v : t.data) v = 1.0;
        break;
      case Init::Embedding: {
        std::normal_distribution<double> n(0.0, 0.02);
        for (double& v : t.data) v = n(rng);
        break;
      }
    }
    params.emplace(spec.name, std::move(t));
  }
  return params;
}

Tensor visual_patches(
    const std::array<double, kVisionWindow * kVisionWindow * kVisionChannels>& v) {
  Tensor patches(ModelConfig::kVisualTokens, ModelConfig::kPatchValues);
  for (int pr = 0; pr < 3; ++pr)
    for (int pc = 0; pc < 3; ++pc)
      for (int ch = 0; ch < kVisionChannels; ++ch)
        for (int i = 0; i < 3; ++i)
          for (int j = 0; j < 3; ++j)
            patches.at(pr * 3 + pc, ch * 9 + i * 3 + j) =
                v[size_t(ch) * 81 + size_t(pr * 3 + i) * kVisionWindow + (pc * 3 + j)];
  return patches;
}

ModelRunner::ModelRunner(Tape& tape, const ModelConfig& cfg, const ParamMap& params,
                         ParamMap* leaves, AttentionDump* attn)
    : tape_(tape), cfg_(cfg), params_(params), leaves_(leaves), attn_(attn) {}

std::string ModelRunner::prefix(int agent) const { return agent_prefix(cfg_, agent); }

Tensor ModelRunner::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("missing parameter: " + name);
  if (!leaves_) return it->second;
  auto cached = leaves_->find(name);
  if (cached != leaves_->end()) return cached->second;
  Tensor leaf = tape_.leaf(it->second);
  leaves_->emplace(name, leaf);
  return leaf;
}

Tensor ModelRunner::multihead(const Tensor& q_in, const Tensor& kv_in,
                              const std::vector<uint8_t>& mask, const std::string& base,
                              const std::string& label, bool record) {
  Tape& t = tape_;
  const int dk = cfg_.head_dim();
  Tensor q = t.add_rowvec(t.matmul(q_in, get(base + ".wq")), get(base + ".bq"));
  Tensor k = t.add_rowvec(t.matmul(kv_in, get(base + ".wk")), get(base + ".bk"));
  Tensor v = t.add_rowvec(t.matmul(kv_in, get(base + ".wv")), get(base + ".bv"));
  std::vector<Tensor> heads;
  for (int h = 0; h < cfg_.heads; ++h) {
    Tensor qh = t.slice_cols(q, h * dk, dk);
    Tensor kh = t.slice_cols(k, h * dk, dk);
    Tensor vh = t.slice_cols(v, h * dk, dk);
    Tensor scores = t.scale(t.matmul_nt(qh, kh), 1.0 / std::sqrt(double(dk)));
    Tensor weights = t.softmax_rows_masked(scores, mask);
    if (attn_ && record) {
      Tensor snapshot = weights;
      snapshot.node = -1;
      attn_->push_back({label, h, snapshot});
    }
    heads.push_back(t.matmul(weights, vh));
  }
  return t.add_rowvec(t.matmul(t.concat_cols(heads), get(base + ".wo")), get(base + ".bo"));
}

Tensor ModelRunner::mlp(const Tensor& x, const std::string& base) {
  Tensor h = tape_.gelu(tape_.add_rowvec(tape_.matmul(x, get(base + ".w1")), get(base + ".b1")));
  return tape_.add_rowvec(tape_.matmul(h, get(base + ".w2")), get(base + ".b2"));
}

Tensor ModelRunner::ln(const Tensor& x, const std::string& base) {
  return tape_.layer_norm(x, get(base + ".g"), get(base + ".b"));
}

Tensor ModelRunner::patch_embed_visual(
    const std::array<double, kVisionWindow * kVisionWindow * kVisionChannels>& visual,
    int agent) {
  const std::string p = prefix(agent);
  return tape_.add(tape_.add_rowvec(tape_.matmul(visual_patches(visual), get(p + "embed.vis.w")),
                                    get(p + "embed.vis.b")),
                   get(p + "embed.vis.pos"));
}

Tensor ModelRunner::patch_embed_audio(const std::array<double, 2 * kAudioBins>& audio, int agent) {
  const std::string p = prefix(agent);
  Tensor aud_in(ModelConfig::kAudioTokens, kAudioBins,
                std::vector<double>(audio.begin(), audio.end()));
  return tape_.add(
      tape_.add_rowvec(tape_.matmul(aud_in, get(p + "embed.aud.w")), get(p + "embed.aud.b")),
      get(p + "embed.aud.pos"));
}

std::pair<Tensor, Tensor> ModelRunner::encode_agent(const Tensor& vis_tokens,
                                                    const Tensor& aud_tokens, int agent) {
  if (cfg_.skip_encoders) return {vis_tokens, aud_tokens};
  const std::string p = prefix(agent);
  std::pair<Tensor, Tensor> out{vis_tokens, aud_tokens};
  for (auto [mod, tokens] : {std::pair<const char*, Tensor*>{"vis", &out.first},
                             std::pair<const char*, Tensor*>{"aud", &out.second}}) {
    Tensor x = *tokens;
    const std::vector<uint8_t> full_mask(size_t(x.rows()) * x.rows(), 1);
    for (int l = 0; l < cfg_.encoder_layers; ++l) {
      std::string base = p + "enc." + mod + "." + std::to_string(l);
      Tensor n1 = ln(x, base + ".ln1");
      x = tape_.add(x, multihead(n1, n1, full_mask, base + ".attn",
                                 "enc." + std::string(mod) + "." + std::to_string(l),
                                 agent == 0));
      x = tape_.add(x, mlp(ln(x, base + ".ln2"), base + ".mlp"));
    }
    *tokens = x;
  }
  return out;
}

Tensor ModelRunner::build_joint_sequence(const std::vector<std::pair<Tensor, Tensor>>& per_agent) {
  if (int(per_agent.size()) != cfg_.n_agents)
    throw std::invalid_argument("build_joint_sequence: agent count mismatch");
  Tensor agent_emb = get("agent_emb");
  std::vector<Tensor> parts;
  for (int a = 0; a < cfg_.n_agents; ++a) {
    Tensor emb_row = tape_.slice_rows(agent_emb, a, 1);
    parts.push_back(tape_.add_rowvec(per_agent[a].first, emb_row));
    parts.push_back(tape_.add_rowvec(per_agent[a].second, emb_row));
  }
  return tape_.concat_rows(parts);
}

Tensor ModelRunner::decode(const Tensor& joint) {
  const int n = cfg_.n_agents;
  const int tpa = cfg_.tokens_per_agent();
  if (joint.rows() != n * tpa || joint.cols() != cfg_.embed_dim)
    throw ShapeError("decode: joint sequence has shape " + shape_str(joint));

  if (cfg_.mlp_decoder) {
    std::vector<Tensor> per_agent;
    for (int a = 0; a < n; ++a) {
      Tensor pooled = tape_.mean_rows(tape_.slice_rows(joint, a * tpa, tpa));
      per_agent.push_back(mlp(pooled, "mlpdec"));
    }
    return tape_.concat_rows(per_agent);
  }

  // Learned per-agent start tokens as the decoder query sequence.
  Tensor agent_emb = get("agent_emb");
  std::vector<Tensor> query_rows;
  for (int a = 0; a < n; ++a)
    query_rows.push_back(tape_.add(get("dec.start"), tape_.slice_rows(agent_emb, a, 1)));
  Tensor t = tape_.concat_rows(query_rows);
  Tensor mem = ln(joint, "dec.ln_mem");

  // Agent j may see itself and its predecessors only.
  std::vector<uint8_t> self_mask(size_t(n) * n, 0);
  for (int q = 0; q < n; ++q)
    for (int k = 0; k <= q; ++k) self_mask[size_t(q) * n + k] = 1;
  std::vector<uint8_t> cross_mask(size_t(n) * n * tpa, 0);
  for (int q = 0; q < n; ++q)
    for (int k = 0; k < (q + 1) * tpa; ++k) cross_mask[size_t(q) * n * tpa + k] = 1;

  for (int l = 0; l < cfg_.decoder_layers; ++l) {
    std::string base = "dec." + std::to_string(l);
    Tensor nq = ln(t, base + ".self.ln");
    t = tape_.add(t, multihead(nq, nq, self_mask, base + ".self",
                               "dec." + std::to_string(l) + ".self", true));
    Tensor cq = ln(t, base + ".cross.ln");
    t = tape_.add(t, multihead(cq, mem, cross_mask, base + ".cross",
                               "dec." + std::to_string(l) + ".cross", true));
    t = tape_.add(t, mlp(ln(t, base + ".mlp.ln"), base + ".mlp"));
  }
  return ln(t, "dec.ln_f");
}

Tensor ModelRunner::actor_head(const Tensor& state_row, int agent) {
  const std::string p = prefix(agent);
  return tape_.softmax_rows(
      tape_.add_rowvec(tape_.matmul(state_row, get(p + "head.actor.w")), get(p + "head.actor.b")));
}

Tensor ModelRunner::critic_head(const Tensor& state_row, int agent) {
  const std::string p = prefix(agent);
  return tape_.add_rowvec(tape_.matmul(state_row, get(p + "head.critic.w")),
                          get(p + "head.critic.b"));
}

ForwardResult ModelRunner::forward(const std::vector<AgentObservation>& obs) {
  if (int(obs.size()) != cfg_.n_agents)
    throw std::invalid_argument("forward: expected " + std::to_string(cfg_.n_agents) +
                                " observations, got " + std::to_string(obs.size()));
  std::vector<std::pair<Tensor, Tensor>> encoded;
  for (int a = 0; a < cfg_.n_agents; ++a)
    encoded.push_back(
        encode_agent(patch_embed_visual(obs[a].visual, a), patch_embed_audio(obs[a].audio, a), a));
  Tensor states = decode(build_joint_sequence(encoded));
  ForwardResult out;
  out.states = states;
  for (int a = 0; a < cfg_.n_agents; ++a) {
    Tensor s = tape_.slice_rows(states, a, 1);
    out.probs.push_back(actor_head(s, a));
    out.values.push_back(critic_head(s, a));
  }
  return out;
}

ForwardResult model_forward(Tape& tape, const ModelConfig& cfg, const ParamMap& params,
                            const std::vector<AgentObservation>& obs, ParamMap* leaves,
                            AttentionDump* attn) {
  return ModelRunner(tape, cfg, params, leaves, attn).forward(obs);
}

std::vector<PolicyOutput> policy_eval(const ModelConfig& cfg, const ParamMap& params,
                                      const std::vector<AgentObservation>& obs,
                                      AttentionDump* attn) {
  Tape tape;
  ForwardResult r = model_forward(tape, cfg, params, obs, nullptr, attn);
  std::vector<PolicyOutput> out(cfg.n_agents);
  for (int a = 0; a < cfg.n_agents; ++a) {
    for (int i = 0; i < kNumActions; ++i) out[a].probs[i] = r.probs[a].at(0, i);
    out[a].value = r.values[a].item();
  }
  return out;
}

}  // namespace mast
