#include "hyspec_cli/app.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "hyspec_cli/pipeline.hpp"

namespace hyspec::cli {

namespace fs = std::filesystem;

fs::path make_run_dir(const fs::path& base, const std::string& command) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream stamp;
  stamp << std::put_time(&tm, "%Y%m%d-%H%M%S") << "-" << command;
  fs::create_directories(base);
  fs::path dir = base / stamp.str();
  for (int i = 2; fs::exists(dir); ++i) dir = base / (stamp.str() + "-" + std::to_string(i));
  fs::create_directory(dir);
  return dir;
}

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

void flush_warnings(std::ostream& err) {
  for (const auto& w : drain_warnings()) err << "warning [" << w.code << "]: " << w.message << '\n';
}

RunConfig resolve(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_config(g.config);
  if (g.seed) cfg.apply_seed(*g.seed);
  if (!g.out.empty()) cfg.out_dir = g.out;
  return cfg;
}

fs::path direct_out(const RunConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  return cfg.out_dir;
}

fs::path start_run(const RunConfig& cfg, const std::string& command) {
  const fs::path dir = make_run_dir(cfg.out_dir, command);
  write_config_echo(dir / "config.json", cfg);
  return dir;
}

std::int64_t class_count(const RunConfig& cfg) {
  if (cfg.data.cube.empty()) return cfg.data.synth.classes;
  return io::read_labels(cfg.data.labels).max_label();
}

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = direct_out(cfg);
  const auto scene = io::synth_scene(cfg.data.synth);
  io::write_cube(dir / "scene.hsic", scene.cube);
  io::write_labels(dir / "scene.hsil", scene.labels);
  io::emit_class_map(scene.labels, io::Palette::make(cfg.data.synth.classes, 0), dir / "ground_truth.ppm");
  out << "wrote " << (dir / "scene.hsic").string() << " and " << (dir / "scene.hsil").string() << '\n';
  return 0;
}

struct ConvertArgs {
  std::string raw;
  std::int64_t height = 0, width = 0, bands = 0;
  std::string interleave = "bsq";
};

int cmd_convert(const RunConfig& cfg, const ConvertArgs& a, std::ostream& out) {
  const fs::path dir = direct_out(cfg);
  const auto cube = io::convert_raw(a.raw, a.height, a.width, a.bands, io::parse_interleave(a.interleave));
  io::write_cube(dir / "cube.hsic", cube);
  out << "wrote " << (dir / "cube.hsic").string() << '\n';
  return 0;
}

int cmd_preprocess(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = direct_out(cfg);
  const Scene scene = load_scene(cfg);
  const auto pca = preprocess::fit_pca(scene.cube, cfg.pca_k);
  preprocess::save_pca(dir / "pca.hsip", pca);
  io::write_cube(dir / "whitened.hsic", preprocess::apply_pca_whiten(scene.cube, pca));
  out << "wrote " << (dir / "pca.hsip").string() << " and " << (dir / "whitened.hsic").string() << '\n';
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = start_run(cfg, "train");
  const Scene scene = load_scene(cfg);
  const Prepared prep = prepare(cfg, scene);
  flush_warnings(err);
  preprocess::save_pca(dir / "pca.hsip", prep.pca);
  std::ofstream log(dir / "train.log");
  const TrainOutcome o = run_training(cfg, prep, dir / "model.hsck", &log);
  write_text(dir / "loss.csv", o.loss_csv);
  write_text(dir / "metrics.csv", o.metrics_csv);
  flush_warnings(err);
  out << "run_dir=" << dir.string() << '\n' << o.metrics_csv;
  return 0;
}

struct ModelArgs {
  std::string checkpoint;
  std::string pca;
};

fs::path pca_path(const ModelArgs& a) {
  return a.pca.empty() ? fs::path(a.checkpoint).parent_path() / "pca.hsip" : fs::path(a.pca);
}

int cmd_eval(const RunConfig& cfg, const ModelArgs& a, std::ostream& out) {
  const fs::path dir = start_run(cfg, "eval");
  const Scene scene = load_scene(cfg);
  const Prepared prep = prepare(cfg, scene);
  model::SpectralViT<float> net(cfg.resolved_model(prep.classes), cfg.train.seed);
  train::load_model_state(net, train::load_checkpoint(a.checkpoint));
  const auto metrics = train::evaluate(net, prep.test);
  write_text(dir / "metrics.csv", metrics.to_csv());
  out << "run_dir=" << dir.string() << '\n' << metrics.to_csv();
  return 0;
}

int cmd_map(const RunConfig& cfg, const ModelArgs& a, std::ostream& out) {
  const fs::path dir = start_run(cfg, "map");
  const Scene scene = load_scene(cfg);
  const auto pca = preprocess::load_pca(pca_path(a));
  const std::int64_t classes = scene.labels.max_label();
  model::SpectralViT<float> net(cfg.resolved_model(classes), cfg.train.seed);
  train::load_model_state(net, train::load_checkpoint(a.checkpoint));
  const io::LabelMap map = train::predict_map(net, scene.cube, pca);
  io::write_labels(dir / "prediction.hsil", map);
  io::emit_class_map(map, io::Palette::make(static_cast<int>(classes), 0), dir / "class_map.ppm");
  std::int64_t agree = 0, labeled = 0;
  for (std::size_t i = 0; i < map.labels.size(); ++i) {
    if (scene.labels.labels[i] == 0) continue;
    ++labeled;
    agree += map.labels[i] == scene.labels.labels[i];
  }
  out << "run_dir=" << dir.string() << '\n';
  out << "labeled_agreement=" << train::format_g9(labeled ? static_cast<double>(agree) / labeled : 0.0) << '\n';
  return 0;
}

int cmd_report(const RunConfig& cfg, std::ostream& out) {
  const fs::path dir = start_run(cfg, "report");
  model::SpectralViT<float> net(cfg.resolved_model(class_count(cfg)), cfg.train.seed);
  peft::set_trainable(net, peft::TrainableSet::kPeft);
  const std::string text = peft::param_report(net).to_text();
  write_text(dir / "report.txt", text);
  out << text;
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hyperspectral classification with a LoRA windowed-attention transformer", "hyspec"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override every seed in the configuration");
  app.add_option("--out", g.out, "Output directory");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled scene");
  ConvertArgs conv;
  auto* convert = app.add_subcommand("convert", "Convert a raw float32 stream into a cube file");
  convert->add_option("--raw", conv.raw, "Headerless little-endian float32 input")->required()->check(CLI::ExistingFile);
  convert->add_option("--height", conv.height)->required()->check(CLI::PositiveNumber);
  convert->add_option("--width", conv.width)->required()->check(CLI::PositiveNumber);
  convert->add_option("--bands", conv.bands)->required()->check(CLI::PositiveNumber);
  convert->add_option("--interleave", conv.interleave, "bsq, bip or bil")->check(CLI::IsMember({"bsq", "bip", "bil"}));
  auto* pre = app.add_subcommand("preprocess", "Fit PCA and write the whitened cube");
  auto* trn = app.add_subcommand("train", "Train and evaluate on the configured scene");
  ModelArgs margs;
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  auto* mp = app.add_subcommand("map", "Write a whole-scene classification map");
  for (auto* sub : {evl, mp}) {
    sub->add_option("--checkpoint", margs.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    sub->add_option("--pca", margs.pca, "PCA model (default: pca.hsip next to the checkpoint)");
  }
  auto* rep = app.add_subcommand("report", "Print the parameter-efficiency report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    const RunConfig cfg = resolve(g);
    int rc = 0;
    if (synth->parsed()) rc = cmd_synth(cfg, out);
    if (convert->parsed()) rc = cmd_convert(cfg, conv, out);
    if (pre->parsed()) rc = cmd_preprocess(cfg, out);
    if (trn->parsed()) rc = cmd_train(cfg, out, err);
    if (evl->parsed()) rc = cmd_eval(cfg, margs, out);
    if (mp->parsed()) rc = cmd_map(cfg, margs, out);
    if (rep->parsed()) rc = cmd_report(cfg, out);
    flush_warnings(err);
    return rc;
  } catch (const ConfigError& e) {
    flush_warnings(err);
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    flush_warnings(err);
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace hyspec::cli
