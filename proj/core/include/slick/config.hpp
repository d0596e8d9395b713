#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "slick/blocks.hpp"
#include "slick/distill.hpp"
#include "slick/losses.hpp"

namespace slick {

// Schema violation carrying the offending key path (e.g. "distill.tau").
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::runtime_error("config key '" + key + "': " + message), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct OptimizerConfig {
  double step_size = 1e-3;
  double weight_decay = 1e-4;
  double clip_norm = 1.0;
  std::string schedule = "cosine";  // "cosine" (cyclical) or "constant"
  int cycle_steps = 500;
  void validate() const;
};

struct RunConfig {
  uint64_t seed = 7;
  std::string dataset;
  int epochs = 2;
  int batch_size = 8;
  ModelConfig teacher;
  ModelConfig student;
  LossWeights loss;
  DistillConfig distill;
  OptimizerConfig optimizer;

  static RunConfig defaults();
  void validate() const;
  // Canonical JSON (sorted keys); config hashes are taken over this text.
  std::string to_json() const;
};

// Strict schema: unknown keys, wrong types and constraint violations all
// raise ConfigError naming the key.  Missing keys fall back to defaults.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace slick
