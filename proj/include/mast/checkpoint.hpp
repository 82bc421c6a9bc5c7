#ifndef MAST_CHECKPOINT_HPP
#define MAST_CHECKPOINT_HPP

#include "mast/model.hpp"
#include "mast/tensor.hpp"

#include <string>

namespace mast {

struct CheckpointError : std::runtime_error {
  explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};

struct Checkpoint {
  ModelConfig config;
  ParamMap params;
};

/// Versioned JSON checkpoint; tensor payloads are base64 of raw
/// little-endian doubles, so 64-bit values round-trip bit-exactly.
void save_checkpoint(const std::string& path, const ModelConfig& cfg, const ParamMap& params);
Checkpoint load_checkpoint(const std::string& path);

std::string base64_encode(const unsigned char* data, size_t len);
std::vector<unsigned char> base64_decode(const std::string& text);

}  // namespace mast

#endif  // MAST_CHECKPOINT_HPP
