#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "hyspec_cli/app.hpp"
#include "hyspec_cli/run_config.hpp"

namespace fs = std::filesystem;
namespace cli = hyspec::cli;
using nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "hyspec");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "hyspec_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path write_json(const fs::path& p, const json& j) {
  std::ofstream(p) << j.dump(2);
  return p;
}

json tiny_doc() {
  return json::parse(R"({
    "data": {"synth": {"H": 20, "W": 20, "C": 18, "K": 3, "noise": 0.05, "seed": 3}},
    "pca": {"k": 15},
    "patches": {"p": 7},
    "split": {"fraction": 0.2, "seed": 1},
    "model": {"dim": 8, "depths": [1, 1], "heads": [2, 2], "window": 4, "lora": {"r": 2}},
    "train": {"lr": 0.003, "batch": 16, "epochs": 2, "seed": 5, "peft_mode": "full"}
  })");
}

fs::path only_subdir(const fs::path& dir) {
  std::vector<fs::path> subs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) subs.push_back(e.path());
  EXPECT_EQ(subs.size(), 1u);
  return subs.empty() ? fs::path{} : subs.front();
}

}  // namespace

TEST(Config, EmptyDocumentGivesReferenceDefaults) {
  const auto c = cli::parse_config(json::object());
  EXPECT_EQ(c.model.dim, 96);
  EXPECT_EQ(c.model.depths, (std::vector<std::int64_t>{3, 4, 19}));
  EXPECT_EQ(c.model.heads, (std::vector<std::int64_t>{4, 8, 16}));
  EXPECT_EQ(c.model.window, 7);
  EXPECT_EQ(c.model.lora_rank, 16);
  EXPECT_EQ(c.model.lora_alpha, 32.0);
  EXPECT_EQ(c.model.drop_path, 0.2);
  EXPECT_EQ(c.clr.base, 0.8);
  EXPECT_EQ(c.clr.max, 1.5);
  EXPECT_EQ(c.clr.step_up, 100);
  EXPECT_EQ(c.pca_k, 15);
  EXPECT_EQ(c.patch, 15);
  EXPECT_EQ(c.split_fraction, 0.1);
  EXPECT_EQ(c.train.lr, 1e-3);
  EXPECT_EQ(c.train.batch, 64);
  EXPECT_EQ(c.train.epochs, 100);
}

TEST(Config, StrictErrorsNameTheKeyPath) {
  auto expect_error = [](const char* text, const std::string& key) {
    try {
      cli::parse_config(json::parse(text));
      FAIL() << "expected ConfigError for " << text;
    } catch (const hyspec::ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  };
  expect_error(R"({"model": {"lora": {"rank": 4}}})", "model.lora.rank");
  expect_error(R"({"trian": {}})", "trian");
  expect_error(R"({"train": {"lr": "fast"}})", "train.lr");
  expect_error(R"({"split": {"fraction": 1.5}})", "split.fraction");
  expect_error(R"({"model": {"depths": [1, 2], "heads": [2, 2, 4]}})", "heads");
  expect_error(R"({"train": {"peft_mode": "lora"}})", "train.peft_mode");
  EXPECT_EQ(cli::parse_config(json::parse(R"({"split": {"fraction": 0.10}})")).split_fraction, 0.10);
}

TEST(Config, EchoRoundTripAndSeedOverride) {
  auto c = cli::parse_config(tiny_doc());
  const auto path = fresh_dir("echo") / "config.json";
  cli::write_config_echo(path, c);
  EXPECT_EQ(cli::load_config(path), c);
  c.apply_seed(42);
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(c.split_seed, 42u);
  EXPECT_EQ(c.data.synth.seed, 42u);
  const auto m = c.resolved_model(3);
  EXPECT_EQ(m.num_classes, 3);
  EXPECT_EQ(m.in_bands, 15);
  EXPECT_EQ(m.patch, 7);
}

TEST(Cli, UsageErrors) {
  auto r = run({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"train", "--bogus"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
  const auto dir = fresh_dir("usage");
  const auto cfg = write_json(dir / "bad.json", json::parse(R"({"model": {"dimm": 4}})"));
  r = run({"--config", cfg.string(), "report"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("model.dimm"), std::string::npos);
}

TEST(Cli, ReportPrintsRho) {
  const auto dir = fresh_dir("report");
  const auto cfg = write_json(dir / "cfg.json", json::object());
  const auto r = run({"--config", cfg.string(), "--out", dir.string(), "report"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("rho_closed_form=0.333333333"), std::string::npos) << r.out;
  const auto run_dir = only_subdir(dir);
  EXPECT_EQ(slurp(run_dir / "report.txt"), r.out);
  EXPECT_TRUE(fs::exists(run_dir / "config.json"));
}

TEST(Cli, SynthConvertPreprocess) {
  const auto dir = fresh_dir("io");
  const auto cfg = write_json(dir / "cfg.json", tiny_doc());
  auto r = run({"--config", cfg.string(), "--out", dir.string(), "synth"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"scene.hsic", "scene.hsil", "ground_truth.ppm"}) EXPECT_TRUE(fs::exists(dir / f)) << f;

  std::vector<float> raw(2 * 3 * 4);
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = static_cast<float>(i);
  std::ofstream(dir / "raw.bin", std::ios::binary)
      .write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * 4));
  r = run({"--out", dir.string(), "convert", "--raw", (dir / "raw.bin").string(), "--height", "2", "--width", "3",
           "--bands", "4", "--interleave", "bip"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto cube = hyspec::io::read_cube(dir / "cube.hsic");
  EXPECT_EQ(cube.at(1, 2, 3), 23.0);
  r = run({"--out", dir.string(), "convert", "--raw", (dir / "raw.bin").string(), "--height", "3", "--width", "3",
           "--bands", "4"});
  EXPECT_EQ(r.code, 1);

  auto doc = tiny_doc();
  doc["data"] = {{"cube", (dir / "scene.hsic").string()}, {"labels", (dir / "scene.hsil").string()}};
  const auto file_cfg = write_json(dir / "files.json", doc);
  r = run({"--config", file_cfg.string(), "--out", (dir / "pre").string(), "preprocess"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(hyspec::io::read_cube(dir / "pre" / "whitened.hsic").bands, 15);
  EXPECT_TRUE(fs::exists(dir / "pre" / "pca.hsip"));
}

TEST(Cli, TrainEvalMap) {
  const auto dir = fresh_dir("train");
  const auto cfg = write_json(dir / "cfg.json", tiny_doc());
  auto r = run({"--config", cfg.string(), "--out", dir.string(), "train"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto run_dir = only_subdir(dir);
  for (const char* f : {"config.json", "pca.hsip", "train.log", "model.hsck", "loss.csv", "metrics.csv"}) {
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  }
  const std::string metrics = slurp(run_dir / "metrics.csv");
  EXPECT_EQ(metrics.rfind("metric,value\noa,", 0), 0u);
  auto expected = cli::load_config(cfg);
  expected.out_dir = dir.string();
  EXPECT_EQ(cli::load_config(run_dir / "config.json"), expected);

  const auto ck = (run_dir / "model.hsck").string();
  const auto evals = dir / "evals";
  r = run({"--config", cfg.string(), "--out", evals.string(), "eval", "--checkpoint", ck});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(only_subdir(evals) / "metrics.csv"), metrics);

  const auto maps = dir / "maps";
  r = run({"--config", cfg.string(), "--out", maps.string(), "map", "--checkpoint", ck});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto map_dir = only_subdir(maps);
  EXPECT_TRUE(fs::exists(map_dir / "class_map.ppm"));
  EXPECT_EQ(fs::file_size(map_dir / "class_map.ppm"), hyspec::io::ppm_header(20, 20).size() + 20u * 20u * 3u);
  EXPECT_NE(r.out.find("labeled_agreement="), std::string::npos);

  r = run({"--config", cfg.string(), "--out", maps.string(), "map", "--checkpoint", ck, "--pca",
           (dir / "missing.hsip").string()});
  EXPECT_EQ(r.code, 1);
}

TEST(Cli, RunDirectoriesNeverCollide) {
  const auto dir = fresh_dir("dirs");
  const auto a = cli::make_run_dir(dir, "train");
  const auto b = cli::make_run_dir(dir, "train");
  EXPECT_NE(a, b);
  EXPECT_TRUE(fs::is_directory(a));
  EXPECT_TRUE(fs::is_directory(b));
}
