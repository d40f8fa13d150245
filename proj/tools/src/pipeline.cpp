#include "hyspec_cli/pipeline.hpp"

#include <map>

namespace hyspec::cli {

Scene load_scene(const RunConfig& cfg) {
  Scene s;
  if (cfg.data.cube.empty()) {
    auto synth = io::synth_scene(cfg.data.synth);
    s.cube = std::move(synth.cube);
    s.labels = std::move(synth.labels);
  } else {
    s.cube = io::read_cube(cfg.data.cube);
    s.labels = io::read_labels(cfg.data.labels);
    io::check_pairing(s.cube, s.labels);
  }
  return s;
}

Prepared prepare(const RunConfig& cfg, const Scene& scene) {
  Prepared p;
  p.classes = scene.labels.max_label();
  if (p.classes < 1) throw ConfigError("label map holds no labeled pixels");
  if (cfg.pca_k > scene.cube.bands) {
    throw ConfigError("pca.k: " + std::to_string(cfg.pca_k) + " exceeds the " + std::to_string(scene.cube.bands) +
                      " bands of the cube");
  }
  p.pca = preprocess::fit_pca(scene.cube, cfg.pca_k);
  p.whitened = preprocess::apply_pca_whiten(scene.cube, p.pca);
  if (cfg.patch_mode == preprocess::PatchMode::kPerPixel) {
    p.split = preprocess::stratified_split(scene.labels, cfg.split_fraction, cfg.split_seed);
    p.train = train::make_dataset(p.whitened, scene.labels, train::flatten(p.split.train), cfg.patch);
    p.test = train::make_dataset(p.whitened, scene.labels, train::flatten(p.split.test), cfg.patch);
    return p;
  }
  // Tiles are split like pixels of a coarse label raster.
  const auto tiles = preprocess::extract_patches(p.whitened, scene.labels, cfg.patch, cfg.patch_mode);
  const std::int64_t tw = scene.cube.width / cfg.patch;
  io::LabelMap grid(scene.cube.height / cfg.patch, tw);
  std::map<std::int64_t, const preprocess::Patch*> by_cell;
  for (const auto& t : tiles) {
    const std::int64_t cell = (t.row / cfg.patch) * tw + t.col / cfg.patch;
    grid.labels[static_cast<std::size_t>(cell)] = t.label;
    by_cell[cell] = &t;
  }
  p.split = preprocess::stratified_split(grid, cfg.split_fraction, cfg.split_seed);
  auto collect = [&](const std::vector<std::vector<std::int64_t>>& part) {
    std::vector<preprocess::Patch> out;
    for (auto cell : train::flatten(part)) out.push_back(*by_cell.at(cell));
    return train::make_dataset(out, cfg.pca_k, cfg.patch);
  };
  p.train = collect(p.split.train);
  p.test = collect(p.split.test);
  return p;
}

TrainOutcome run_training(const RunConfig& cfg, const Prepared& prep, const std::filesystem::path& checkpoint,
                          std::ostream* log) {
  model::SpectralViT<float> net(cfg.resolved_model(prep.classes), cfg.train.seed);
  train::Trainer<float> trainer(net, cfg.train, cfg.clr);
  trainer.fit(prep.train, &prep.test, checkpoint, log);
  TrainOutcome o;
  o.metrics = train::evaluate(net, prep.test);
  o.loss_csv = trainer.loss_csv();
  o.metrics_csv = o.metrics.to_csv();
  return o;
}

}  // namespace hyspec::cli
