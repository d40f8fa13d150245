#pragma once

#include <cstdint>
#include <iosfwd>

#include "hyspec_cli/run_config.hpp"

namespace hyspec::cli {

struct Scene {
  io::HsiCube cube;
  io::LabelMap labels;
};

// Reads the cube/label pair named in the config, or generates the synthetic
// scene when no cube path is given.
Scene load_scene(const RunConfig& cfg);

struct Prepared {
  preprocess::PcaModel pca;
  io::HsiCube whitened;
  preprocess::SplitSpec split;
  train::Dataset train;
  train::Dataset test;
  std::int64_t classes = 0;
};

// PCA fit + whitening, patch extraction and the stratified split.
Prepared prepare(const RunConfig& cfg, const Scene& scene);

struct TrainOutcome {
  train::MetricsReport metrics;
  std::string loss_csv;
  std::string metrics_csv;
};

// Full training run on a prepared scene; writes checkpoints to
// `checkpoint` when non-empty.
TrainOutcome run_training(const RunConfig& cfg, const Prepared& prep, const std::filesystem::path& checkpoint,
                          std::ostream* log);

}  // namespace hyspec::cli
