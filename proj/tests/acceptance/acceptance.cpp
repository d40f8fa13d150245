#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hyspec/model/model.hpp"
#include "hyspec/numerics/grad_check.hpp"
#include "hyspec/peft/peft.hpp"
#include "hyspec/preprocess/preprocess.hpp"
#include "hyspec/train/metrics.hpp"
#include "hyspec_cli/app.hpp"
#include "hyspec_cli/pipeline.hpp"
#include "oracle.hpp"

namespace fs = std::filesystem;
namespace io = hyspec::io;
namespace lm = hyspec::model;
namespace ln = hyspec::numerics;
namespace lp = hyspec::peft;
namespace lt = hyspec::train;
namespace pp = hyspec::preprocess;
namespace cli = hyspec::cli;
using ln::Shape;
using ln::Tensor;
using V = ln::Var<double>;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Tensor<double> rand_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  const auto n = static_cast<std::size_t>(ln::shape_numel(s));
  return Tensor<double>(std::move(s), hyspec::testing::random_vec(n, seed, lo, hi));
}

V leaf(Shape s, std::uint64_t seed) { return V::leaf(rand_tensor(std::move(s), seed)); }

V probe(const V& y, std::uint64_t seed) {
  return ln::sum_all(ln::mul(y, V::constant(rand_tensor(y.shape(), seed ^ 0x5bd1e995ULL))));
}

lm::ModelConfig tiny_model() {
  lm::ModelConfig c;
  c.dim = 16;
  c.depths = {1, 1, 2};
  c.heads = {2, 2, 4};
  c.window = 4;
  c.patch = 9;
  c.lora_rank = 4;
  c.lora_alpha = 8;
  c.num_classes = 6;
  return c;
}

// One gradient case: builds the scalar for a seed and lists its inputs.
struct GradCase {
  std::string name;
  std::function<std::pair<std::function<V()>, std::vector<V>>(std::uint64_t)> make;
};

template <typename F>
GradCase unary(std::string name, Shape s, F f) {
  return {std::move(name), [s, f](std::uint64_t seed) {
            const V x = leaf(s, seed);
            return std::make_pair(std::function<V()>([=] { return probe(f(x), seed); }), std::vector<V>{x});
          }};
}

template <typename F>
GradCase binary(std::string name, Shape sa, Shape sb, F f) {
  return {std::move(name), [sa, sb, f](std::uint64_t seed) {
            const V a = leaf(sa, seed), b = leaf(sb, seed + 1000);
            return std::make_pair(std::function<V()>([=] { return probe(f(a, b), seed); }), std::vector<V>{a, b});
          }};
}

// A fixed-seed stochastic op is a deterministic function of its input.
template <typename F>
GradCase stochastic(std::string name, Shape s, F f) {
  return {std::move(name), [s, f](std::uint64_t seed) {
            const V x = leaf(s, seed);
            return std::make_pair(std::function<V()>([=] {
                                    std::mt19937_64 rng(seed);
                                    return probe(f(x, lm::ForwardContext{true, &rng, nullptr}), seed);
                                  }),
                                  std::vector<V>{x});
          }};
}

Outcome criterion_gradients() {
  const auto t0 = Clock::now();
  std::vector<GradCase> cases;
  cases.push_back(binary("matmul", {3, 4}, {4, 5}, [](V a, V b) { return ln::matmul(a, b); }));
  cases.push_back(binary("matmul_batched", {2, 3, 4}, {2, 4, 3}, [](V a, V b) { return ln::matmul(a, b); }));
  cases.push_back(binary("matmul_shared_rhs", {2, 3, 4}, {4, 2}, [](V a, V b) { return ln::matmul(a, b); }));
  cases.push_back(binary("add", {2, 3, 2}, {2, 3, 2}, [](V a, V b) { return ln::add(a, b); }));
  cases.push_back(binary("sub", {2, 3, 2}, {2, 3, 2}, [](V a, V b) { return ln::sub(a, b); }));
  cases.push_back(binary("mul", {2, 3, 2}, {2, 3, 2}, [](V a, V b) { return ln::mul(a, b); }));
  cases.push_back(unary("scale", {3, 4}, [](V a) { return ln::scale(a, -1.3); }));
  cases.push_back(unary("broadcast_to", {3, 1}, [](V a) { return ln::broadcast_to(a, {2, 3, 4}); }));
  cases.push_back(unary("reshape", {2, 3, 4}, [](V a) { return ln::reshape(a, {4, 6}); }));
  cases.push_back(unary("permute", {2, 3, 4}, [](V a) { return ln::permute(a, {1, 2, 0}); }));
  cases.push_back(unary("slice", {2, 5, 3}, [](V a) { return ln::slice(a, 1, 1, 3); }));
  cases.push_back(unary("pad", {2, 3, 2}, [](V a) { return ln::pad(a, {{1, 0}, {0, 2}, {1, 1}}); }));
  cases.push_back(unary("gather_rows", {5, 3}, [](V a) {
    const std::vector<std::int64_t> idx{4, 0, 4, 2};
    return ln::gather_rows(a, idx);
  }));
  cases.push_back({"conv2d", [](std::uint64_t seed) {
                     const V x = leaf({2, 2, 5, 4}, seed), w = leaf({3, 2, 3, 3}, seed + 1), b = leaf({3}, seed + 2);
                     return std::make_pair(std::function<V()>([=] {
                                             return probe(ln::conv(x, w, b, {2, {2, 1}, {1, 1}, 1}), seed);
                                           }),
                                           std::vector<V>{x, w, b});
                   }});
  cases.push_back({"conv3d", [](std::uint64_t seed) {
                     const V x = leaf({1, 2, 6, 3, 3}, seed), w = leaf({2, 2, 3, 3, 3}, seed + 1);
                     return std::make_pair(std::function<V()>([=] {
                                             return probe(ln::conv(x, w, V(), {3, {}, {0, 1, 1}, 1}), seed);
                                           }),
                                           std::vector<V>{x, w});
                   }});
  cases.push_back({"conv2d_depthwise", [](std::uint64_t seed) {
                     const V x = leaf({1, 3, 4, 4}, seed), w = leaf({3, 1, 3, 3}, seed + 1);
                     return std::make_pair(std::function<V()>([=] {
                                             return probe(ln::conv(x, w, V(), {2, {1, 1}, {1, 1}, 3}), seed);
                                           }),
                                           std::vector<V>{x, w});
                   }});
  cases.push_back(unary("swish", {3, 5}, [](V a) { return ln::swish(ln::scale(a, 4.0)); }));
  cases.push_back(unary("sigmoid", {3, 5}, [](V a) { return ln::sigmoid(ln::scale(a, 4.0)); }));
  cases.push_back(unary("softmax", {2, 3, 4}, [](V a) { return ln::softmax(ln::scale(a, 3.0), 1); }));
  cases.push_back(unary("sum", {2, 3, 4}, [](V a) { return ln::sum(a, {0, 2}); }));
  cases.push_back(unary("mean", {2, 3, 4}, [](V a) { return ln::mean(a, {1}); }));
  cases.push_back(unary("sum_all", {2, 3}, [](V a) { return ln::mul(ln::sum_all(a), ln::sum_all(a)); }));
  cases.push_back({"layer_norm", [](std::uint64_t seed) {
                     const V x = leaf({3, 6}, seed), g = leaf({6}, seed + 1), b = leaf({6}, seed + 2);
                     return std::make_pair(std::function<V()>([=] { return probe(ln::layer_norm(x, g, b), seed); }),
                                           std::vector<V>{x, g, b});
                   }});
  for (bool train : {true, false}) {
    cases.push_back({train ? "batch_norm_train" : "batch_norm_eval", [train](std::uint64_t seed) {
                       const V x = leaf({3, 2, 2, 2}, seed), g = leaf({2}, seed + 1), b = leaf({2}, seed + 2);
                       auto st = std::make_shared<ln::BatchNormState<double>>(2);
                       st->running_var = Tensor<double>(Shape{2}, {1.7, 0.6});
                       st->running_mean = Tensor<double>(Shape{2}, {0.2, -0.4});
                       return std::make_pair(std::function<V()>([=] {
                                               ln::BatchNormState<double> s = *st;
                                               return probe(ln::batch_norm(x, g, b, s, train), seed);
                                             }),
                                             std::vector<V>{x, g, b});
                     }});
  }
  cases.push_back({"cross_entropy", [](std::uint64_t seed) {
                     const V z = leaf({4, 3}, seed);
                     return std::make_pair(std::function<V()>([=] {
                                             const std::vector<std::int64_t> t{0, 2, 1, 2};
                                             return ln::cross_entropy(ln::scale(z, 3.0), t);
                                           }),
                                           std::vector<V>{z});
                   }});
  cases.push_back(stochastic("dropout", {4, 5}, [](V x, lm::ForwardContext c) { return lm::dropout(x, 0.3, c); }));
  cases.push_back(
      stochastic("band_dropout", {2, 6, 3}, [](V x, lm::ForwardContext c) { return lm::band_dropout(x, 0.3, c); }));
  cases.push_back(
      stochastic("drop_path", {6, 2, 2}, [](V x, lm::ForwardContext c) { return lm::drop_path(x, 0.3, c); }));
  cases.push_back(unary("window_partition_reverse", {1, 5, 3, 2}, [](V a) {
    const auto w = lm::window_partition(a, 2);
    return lm::window_reverse(ln::scale(w.tokens, 2.0), 2, 1, 5, 3);
  }));
  cases.push_back({"gcvit_block_C16_M4", [](std::uint64_t seed) {
                     lm::ModelConfig cfg;
                     cfg.window = 4;
                     cfg.lora_rank = 2;
                     cfg.lora_dropout = 0.0;
                     lm::Initializer init(seed);
                     auto block = std::make_shared<lm::GcVitBlock<double>>(16, 2, 0.0, cfg, init);
                     lm::Registry<double> reg;
                     block->collect("b", reg);
                     std::vector<V> params;
                     for (auto& e : reg.params()) {
                       if (e.role == lm::ParamRole::kLoraB) e.var.mutable_value() = rand_tensor(e.var.shape(), seed + 5, -0.3, 0.3);
                       params.push_back(e.var);
                     }
                     const V x = leaf({1, 5, 5, 16}, seed + 9);
                     params.push_back(x);
                     return std::make_pair(std::function<V()>([=] {
                                             return probe(block->forward(x, lm::ForwardContext{}), seed);
                                           }),
                                           params);
                   }});

  double worst = 0.0;
  std::string worst_case;
  int checks = 0;
  for (const auto& c : cases) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      auto [f, params] = c.make(seed * 7919);
      const auto r = ln::grad_check(f, params, 1e-5);
      ++checks;
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        worst_case = c.name;
      }
    }
  }
  const double t = seconds_since(t0);
  return {worst < 1e-4 && t < 120.0,
          std::to_string(cases.size()) + " ops x 10 seeds (" + std::to_string(checks) + " checks), max rel err " +
              fmt("%.3g", worst) + " (" + worst_case + "), " + fmt("%.1f", t) + " s"};
}

Outcome criterion_whitening() {
  io::HsiCube cube(64, 64, 40);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d;
  std::vector<double> mix(40 * 40);
  for (auto& m : mix) m = d(rng);
  std::vector<double> z(40);
  for (std::int64_t i = 0; i < cube.pixels(); ++i) {
    for (auto& v : z) v = d(rng);
    for (int a = 0; a < 40; ++a) {
      double s = 0.5 * a;
      for (int b = 0; b < 40; ++b) s += mix[a * 40 + b] * z[b];
      cube.values[static_cast<std::size_t>(i * 40 + a)] = s;
    }
  }
  const auto w = pp::apply_pca_whiten(cube, pp::fit_pca(cube, 40));
  const auto n = static_cast<double>(w.pixels());
  std::vector<double> mu(40, 0.0);
  for (std::int64_t i = 0; i < w.pixels(); ++i)
    for (int a = 0; a < 40; ++a) mu[a] += w.pixel(i)[a] / n;
  double worst = 0.0;
  for (int a = 0; a < 40; ++a)
    for (int b = 0; b < 40; ++b) {
      double c = 0;
      for (std::int64_t i = 0; i < w.pixels(); ++i) c += (w.pixel(i)[a] - mu[a]) * (w.pixel(i)[b] - mu[b]);
      worst = std::max(worst, std::abs(c / (n - 1) - (a == b ? 1.0 : 0.0)));
    }
  return {worst <= 1e-6, "64x64x40 cube, max |cov - I| = " + fmt("%.3g", worst)};
}

Outcome criterion_clr() {
  const lp::ClrSchedule s;
  const std::pair<std::int64_t, double> expect[] = {{0, 0.8}, {100, 1.5}, {200, 0.8}, {300, 1.15}, {500, 0.975}};
  double worst = 0;
  std::string vals;
  for (const auto& [t, v] : expect) {
    const double g = lp::clr_scale(t, s);
    worst = std::max(worst, std::abs(g - v));
    vals += " t=" + std::to_string(t) + ":" + fmt("%.12g", g);
  }
  return {worst <= 1e-12, "max deviation " + fmt("%.3g", worst) + ";" + vals};
}

Outcome criterion_param_efficiency() {
  lm::SpectralViT<float> m(lm::ModelConfig{}, 1);
  lp::set_trainable(m, lp::TrainableSet::kPeft);
  const auto r = lp::param_report(m);
  const bool ok = std::round(r.rho_closed_form * 1000.0) == 333.0 && r.trainable == r.lora && r.trainable > 0;
  return {ok, "rho closed form " + fmt("%.6f", r.rho_closed_form) + ", exact trainable fraction " +
                  fmt("%.6f", r.trainable_fraction) + " (" + std::to_string(r.trainable) + " / " +
                  std::to_string(r.total) + ")"};
}

double max_rel(const Tensor<double>& a, const Tensor<double>& b) {
  double scale = 0, diff = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    scale = std::max(scale, std::abs(b[i]));
    diff = std::max(diff, std::abs(a[i] - b[i]));
  }
  return diff / std::max(scale, 1e-300);
}

Outcome criterion_lora_identities() {
  auto cfg = tiny_model();
  lm::SpectralViT<double> with(cfg, 3);
  cfg.lora_rank = 0;
  lm::SpectralViT<double> without(cfg, 4);
  without.copy_from(with);
  const V x = V::constant(rand_tensor({100, 15, 9, 9}, 5, -2, 2));
  const double zero_init = max_rel(with.forward(x).value(), without.forward(x).value());

  std::uint64_t seed = 11;
  for (auto* l : with.lora_layers()) {
    l->lora_b.mutable_value() = rand_tensor(l->lora_b.shape(), seed++, -0.2, 0.2);
    l->gamma = 1.0;
  }
  const auto before = with.forward(x).value();
  lp::merge_lora(with);
  const auto after = with.forward(x).value();
  double merge = 0;
  for (std::int64_t r = 0; r < 100; ++r) {
    double num = 0, den = 0;
    for (std::int64_t k = 0; k < 6; ++k) {
      num = std::max(num, std::abs(after.at({r, k}) - before.at({r, k})));
      den = std::max(den, std::abs(before.at({r, k})));
    }
    merge = std::max(merge, num / den);
  }
  return {zero_init <= 1e-6 && merge <= 1e-5,
          "zero-init rel dev " + fmt("%.3g", zero_init) + ", merge rel dev " + fmt("%.3g", merge) + " (100 inputs)"};
}

Outcome criterion_dropout() {
  const V x = V::constant(rand_tensor({2, 8, 3, 4, 4}, 6, -3, 3));
  std::mt19937_64 rng(1);
  const bool eval_identity =
      lm::band_dropout(x, 0.1, lm::ForwardContext{false, &rng, nullptr}).value().vec() == x.value().vec();

  const auto in = rand_tensor({1, 6, 1}, 7, -3, 3);
  const V small = V::constant(in);
  std::vector<double> sum(6, 0.0);
  const lm::ForwardContext train{true, &rng, nullptr};
  constexpr int kMasks = 100000;
  for (int i = 0; i < kMasks; ++i) {
    const auto y = lm::band_dropout(small, 0.1, train).value();
    for (int c = 0; c < 6; ++c) sum[c] += y[c];
  }
  double mc = 0;
  for (int c = 0; c < 6; ++c) mc = std::max(mc, std::abs(sum[c] / kMasks - in[c]) / std::max(1.0, std::abs(in[c])));

  lm::ModelConfig cfg;
  cfg.window = 4;
  lm::Initializer init(8);
  const lm::GcVitBlock<double> block(8, 2, 0.5, cfg, init);
  const V t = V::constant(rand_tensor({3, 4, 4, 8}, 9));
  const bool dp_eval = block.forward(t, lm::ForwardContext{}).value() == block.forward(t, lm::ForwardContext{}).value() &&
                       lm::drop_path(t, 0.5, lm::ForwardContext{}).value() == t.value();
  return {eval_identity && mc <= 0.01 && dp_eval, std::string("band_dropout eval identity ") +
                                                      (eval_identity ? "bitwise" : "BROKEN") + ", MC mean rel dev " +
                                                      fmt("%.4f", mc) + " at 1e5 masks, drop-path eval " +
                                                      (dp_eval ? "deterministic" : "NONDETERMINISTIC")};
}

std::string shape_text(const Shape& s) { return ln::shape_str(s); }

Outcome criterion_shapes() {
  lm::ModelConfig cfg;
  const lm::SpectralViT<float> m(cfg, 1);
  lm::ShapeTrace trace;
  const auto x = ln::Var<float>::constant(ln::Tensor<float>(Shape{2, 15, 15, 15}, 0.1f));
  m.forward(x, nullptr, &trace);
  const std::vector<std::pair<std::string, Shape>> expect = {
      {"spectral", {2, 96, 3, 15, 15}}, {"tokens", {2, 7, 7, 96}},   {"stage1", {2, 7, 7, 96}},
      {"reduce1", {2, 4, 4, 192}},      {"stage2", {2, 4, 4, 192}},  {"reduce2", {2, 2, 2, 384}},
      {"stage3", {2, 2, 2, 384}},       {"logits", {2, cfg.num_classes}}};
  bool ok = trace.size() == expect.size();
  std::string text;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (i < expect.size()) ok = ok && trace[i] == expect[i];
    text += (i ? " -> " : "") + trace[i].first + shape_text(trace[i].second);
  }
  return {ok, text};
}

cli::RunConfig e2e_config(lt::Protocol protocol) {
  cli::RunConfig c;
  c.data.synth.height = 64;
  c.data.synth.width = 64;
  c.data.synth.bands = 40;
  c.data.synth.classes = 6;
  c.data.synth.noise_sigma = 0.1;
  c.data.synth.seed = 1;
  c.pca_k = 15;
  c.patch = 9;
  c.split_fraction = 0.1;
  c.split_seed = 1;
  c.model = tiny_model();
  c.train.lr = 1e-3;
  c.train.batch = 32;
  c.train.epochs = 20;
  c.train.seed = 1;
  c.train.protocol = protocol;
  c.train.warm_fraction = 0.5;
  c.train.eval_every = 0;
  return c;
}

Outcome criterion_end_to_end() {
  const auto t0 = Clock::now();
  const auto full_cfg = e2e_config(lt::Protocol::kFull);
  const auto scene = cli::load_scene(full_cfg);
  const auto prep = cli::prepare(full_cfg, scene);
  const auto full = cli::run_training(full_cfg, prep, {}, nullptr).metrics;
  const double t_full = seconds_since(t0);
  const auto t1 = Clock::now();
  const auto warm = cli::run_training(e2e_config(lt::Protocol::kWarmPeft), prep, {}, nullptr).metrics;
  const double t_warm = seconds_since(t1);
  const bool ok = full.oa >= 0.95 && full.aa >= 0.90 && full.kappa >= 0.93 && warm.oa >= 0.90 && t_full < 600.0 &&
                  t_warm < 600.0;
  return {ok, "full OA " + fmt("%.4f", full.oa) + " AA " + fmt("%.4f", full.aa) + " kappa " +
                  fmt("%.4f", full.kappa) + " (" + fmt("%.0f", t_full) + " s); warm_peft OA " + fmt("%.4f", warm.oa) +
                  " (" + fmt("%.0f", t_warm) + " s); " + std::to_string(prep.train.size()) + " train / " +
                  std::to_string(prep.test.size()) + " test"};
}

Outcome criterion_metrics() {
  const auto r = lt::metrics_from_confusion({5, 0, 1, 4}, 2);
  const bool ok = std::abs(r.oa - 0.9) <= 1e-9 && std::abs(r.aa - 0.9) <= 1e-9 && std::abs(r.kappa - 0.8) <= 1e-9 &&
                  std::abs(r.precision[0] - 5.0 / 6.0) <= 1e-9;
  return {ok, "OA " + fmt("%.10g", r.oa) + " AA " + fmt("%.10g", r.aa) + " kappa " + fmt("%.10g", r.kappa) +
                  " precision_1 " + fmt("%.10g", r.precision[0])};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion_reproducibility() {
  const fs::path base = fs::temp_directory_path() / "hyspec_acceptance_repro";
  fs::remove_all(base);
  fs::create_directories(base);
  const fs::path cfg = base / "config.json";
  std::ofstream(cfg) << R"({
  "data": {"synth": {"H": 32, "W": 32, "C": 30, "K": 4, "noise": 0.1, "seed": 3}},
  "pca": {"k": 15},
  "patches": {"p": 9},
  "split": {"fraction": 0.1},
  "model": {"dim": 16, "depths": [1, 1, 2], "heads": [2, 2, 4], "window": 4, "lora": {"r": 4, "alpha": 8}},
  "train": {"batch": 32, "epochs": 4, "peft_mode": "warm_peft", "eval_every": 2}
})";
  std::vector<fs::path> dirs;
  for (int i = 0; i < 2; ++i) {
    const fs::path out = base / ("run" + std::to_string(i));
    const std::string c = cfg.string(), o = out.string();
    const char* argv[] = {"hyspec", "--config", c.c_str(), "--seed", "17", "--out", o.c_str(), "train"};
    std::ostringstream sout, serr;
    if (cli::run_cli(8, argv, sout, serr) != 0) return {false, "run " + std::to_string(i) + " failed: " + serr.str()};
    for (const auto& e : fs::directory_iterator(out)) dirs.push_back(e.path());
  }
  if (dirs.size() != 2) return {false, "expected two run directories"};
  const auto l0 = slurp(dirs[0] / "loss.csv"), l1 = slurp(dirs[1] / "loss.csv");
  const auto m0 = slurp(dirs[0] / "metrics.csv"), m1 = slurp(dirs[1] / "metrics.csv");
  const bool ok = !l0.empty() && !m0.empty() && l0 == l1 && m0 == m1;
  return {ok, "loss.csv " + std::to_string(l0.size()) + " bytes " + (l0 == l1 ? "identical" : "DIFFER") +
                  ", metrics.csv " + std::to_string(m0.size()) + " bytes " + (m0 == m1 ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  const std::pair<const char*, Outcome (*)()> criteria[] = {
      {"gradient fidelity", criterion_gradients},
      {"whitening covariance", criterion_whitening},
      {"cyclical LoRA scale", criterion_clr},
      {"parameter efficiency", criterion_param_efficiency},
      {"LoRA identities", criterion_lora_identities},
      {"dropout contracts", criterion_dropout},
      {"shape audit", criterion_shapes},
      {"synthetic end-to-end", criterion_end_to_end},
      {"metrics oracle", criterion_metrics},
      {"reproducibility", criterion_reproducibility},
  };
  int failed = 0, index = 0;
  for (const auto& [name, fn] : criteria) {
    ++index;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %d %s: %s - %s\n", index, o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
    hyspec::drain_warnings();
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d/%d criteria passed\n", index - failed, index);
  return failed == 0 ? 0 : 1;
}
