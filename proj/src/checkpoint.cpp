#include "mast/checkpoint.hpp"

#include "json.hpp"

#include <cstring>
#include <fstream>

namespace mast {

namespace {
constexpr char kFormatTag[] = "mastavn-ckpt-v1";
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}  // namespace

std::string base64_encode(const unsigned char* data, size_t len) {
  std::string out;
  out.reserve((len + 2) / 3 * 4);
  for (size_t i = 0; i < len; i += 3) {
    unsigned v = data[i] << 16;
    if (i + 1 < len) v |= data[i + 1] << 8;
    if (i + 2 < len) v |= data[i + 2];
    out.push_back(kAlphabet[(v >> 18) & 63]);
    out.push_back(kAlphabet[(v >> 12) & 63]);
    out.push_back(i + 1 < len ? kAlphabet[(v >> 6) & 63] : '=');
    out.push_back(i + 2 < len ? kAlphabet[v & 63] : '=');
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  static const auto lut = [] {
    std::array<int, 256> t;
    t.fill(-1);
    for (int i = 0; i < 64; ++i) t[static_cast<unsigned char>(kAlphabet[i])] = i;
    return t;
  }();
  std::vector<unsigned char> out;
  int buf = 0, bits = 0;
  for (char c : text) {
    if (c == '=') break;
    int v = lut[static_cast<unsigned char>(c)];
    if (v < 0) throw CheckpointError("invalid base64 character");
    buf = (buf << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((buf >> bits) & 0xFF));
    }
  }
  return out;
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamMap& params) {
  nlohmann::json j;
  j["format"] = kFormatTag;
  j["model"] = nlohmann::json::parse(cfg.to_json());
  nlohmann::json jp = nlohmann::json::object();
  for (const auto& [name, t] : params) {
    nlohmann::json jt;
    jt["shape"] = {t.rows(), t.cols()};
    jt["data"] = base64_encode(reinterpret_cast<const unsigned char*>(t.data.data()),
                               t.data.size() * sizeof(double));
    jp[name] = jt;
  }
  j["params"] = jp;
  std::ofstream f(path);
  if (!f) throw CheckpointError("cannot open for writing: " + path);
  f << j.dump();
  if (!f) throw CheckpointError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw CheckpointError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint " + path + ": " + e.what());
  }
  if (j.value("format", "") != kFormatTag)
    throw CheckpointError("unsupported checkpoint format in " + path);
  Checkpoint ckpt;
  ckpt.config = ModelConfig::from_json(j.at("model").dump());
  for (const auto& [name, jt] : j.at("params").items()) {
    int rows = jt.at("shape").at(0).get<int>();
    int cols = jt.at("shape").at(1).get<int>();
    std::vector<unsigned char> bytes = base64_decode(jt.at("data").get<std::string>());
    if (bytes.size() != size_t(rows) * cols * sizeof(double))
      throw CheckpointError("payload size mismatch for parameter " + name);
    Tensor t(rows, cols);
    std::memcpy(t.data.data(), bytes.data(), bytes.size());
    ckpt.params.emplace(name, std::move(t));
  }
  return ckpt;
}

}  // namespace mast
