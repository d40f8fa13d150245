#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "hyspec/io/hsi_io.hpp"
#include "hyspec/model/config.hpp"
#include "hyspec/peft/peft.hpp"
#include "hyspec/preprocess/preprocess.hpp"
#include "hyspec/train/train.hpp"

namespace hyspec::cli {

struct DataConfig {
  std::string cube;    // HSIC path; empty selects the synthetic scene
  std::string labels;  // HSIL path
  io::SynthSpec synth;
};

struct RunConfig {
  DataConfig data;
  std::int64_t pca_k = 15;
  std::int64_t patch = 15;
  preprocess::PatchMode patch_mode = preprocess::PatchMode::kPerPixel;
  double split_fraction = 0.1;
  std::uint64_t split_seed = 0;
  model::ModelConfig model;
  peft::ClrSchedule clr;
  train::TrainConfig train;
  std::string out_dir = "runs";

  // Overrides every seed in the document.
  void apply_seed(std::uint64_t seed);
  // Model hyperparameters with in_bands, patch and num_classes filled in.
  model::ModelConfig resolved_model(std::int64_t num_classes) const;

  friend bool operator==(const RunConfig& a, const RunConfig& b);
};

// Strict parse: unknown keys, wrong types and out-of-range values raise
// ConfigError naming the key path. Missing keys keep their defaults.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& cfg);
void write_config_echo(const std::filesystem::path& path, const RunConfig& cfg);

}  // namespace hyspec::cli
