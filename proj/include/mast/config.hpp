#ifndef MAST_CONFIG_HPP
#define MAST_CONFIG_HPP

#include "mast/metrics.hpp"
#include "mast/model.hpp"
#include "mast/training.hpp"

#include <stdexcept>
#include <string>

namespace mast {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// One experiment = model + optimization + environment + evaluation
/// settings plus the run identity. The file format is strict JSON:
/// unknown keys anywhere are an error, run_id is the only required key.
struct ExperimentConfig {
  std::string run_id;
  std::string output_dir;  // defaulted to <output root>/<run_id>
  TrainConfig train;
  ModelConfig model;
  EnvSpec env;
  EvalConfig eval;

  void validate() const;
  std::string to_json() const;
  static ExperimentConfig from_json_text(const std::string& text);
};

/// $MASTAVN_OUTPUT_ROOT if set, else "runs".
std::string default_output_root();

ExperimentConfig parse_config(const std::string& path);

}  // namespace mast

#endif  // MAST_CONFIG_HPP
