#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "l2g/model.hpp"
#include "l2g/train.hpp"

namespace l2g {

/// Raised for malformed or inconsistent configuration documents.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat JSON document: every ModelConfig key plus the run keys below.
struct RunConfig {
  ModelConfig model;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  int epochs = 20;
  std::size_t batch_size = 8;
  std::filesystem::path train_data;
  std::filesystem::path val_data;  // optional
  std::filesystem::path output_dir = "run";
  bool deterministic = true;
  double percentile = 95.0;
  std::size_t threads = 0;
  std::size_t warm_start_samples = 16;

  TrainOptions train_options() const;
};

/// Strict parse: unknown keys and wrong types raise ConfigError naming the key.
/// Relative paths are resolved against `base_dir`.
RunConfig run_config_from_json(const std::string& text, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);
std::string run_config_to_json(const RunConfig& config);

}  // namespace l2g
