#include "hyspec/train/train.hpp"

#include <algorithm>
#include <functional>
#include <cmath>
#include <numeric>
#include <sstream>

namespace hyspec::train {

using numerics::Shape;
using numerics::Tensor;
using numerics::Var;

Dataset make_dataset(const io::HsiCube& cube, const io::LabelMap& labels, std::span<const std::int64_t> pixels,
                     std::int64_t p) {
  io::check_pairing(cube, labels);
  if (p < 1) throw ConfigError("patch size must be positive");
  Dataset d;
  d.k = cube.bands;
  d.p = p;
  const auto ss = static_cast<std::size_t>(d.sample_size());
  d.data.resize(pixels.size() * ss);
  d.labels.reserve(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const std::int64_t idx = pixels[i];
    if (idx < 0 || idx >= cube.pixels()) throw IndexError("pixel index " + std::to_string(idx) + " outside the cube");
    const std::uint16_t lab = labels.labels[static_cast<std::size_t>(idx)];
    if (lab == 0) throw IndexError("pixel " + std::to_string(idx) + " is unlabeled");
    preprocess::extract_patch(cube, idx / cube.width, idx % cube.width, p,
                              std::span<float>(d.data.data() + i * ss, ss));
    d.labels.push_back(static_cast<std::int64_t>(lab) - 1);
  }
  return d;
}

Dataset make_dataset(const std::vector<preprocess::Patch>& patches, std::int64_t k, std::int64_t p) {
  Dataset d;
  d.k = k;
  d.p = p;
  const auto ss = static_cast<std::size_t>(d.sample_size());
  d.data.reserve(patches.size() * ss);
  for (const auto& patch : patches) {
    if (patch.data.size() != ss) throw DimensionError("patch payload does not match k x p x p");
    if (patch.label == 0) throw IndexError("unlabeled patch in dataset");
    d.data.insert(d.data.end(), patch.data.begin(), patch.data.end());
    d.labels.push_back(static_cast<std::int64_t>(patch.label) - 1);
  }
  return d;
}

std::vector<std::int64_t> flatten(const std::vector<std::vector<std::int64_t>>& per_class) {
  std::vector<std::int64_t> out;
  for (const auto& c : per_class) out.insert(out.end(), c.begin(), c.end());
  return out;
}

template <typename T>
Var<T> classification_loss(const Var<T>& logits, std::span<const std::int64_t> targets) {
  const std::int64_t k = logits.shape().back();
  for (auto t : targets) {
    if (t < 0 || t >= k) throw IndexError("target " + std::to_string(t) + " outside [0, " + std::to_string(k) + ")");
  }
  return numerics::cross_entropy(logits, targets);
}

template <typename T>
void Adam<T>::step(model::Registry<T>& reg, double lr) {
  for (const auto& e : reg.params()) {
    if (!e.var.requires_grad() || !e.var.has_grad()) continue;
    for (const T g : e.var.grad().vec()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("non-finite gradient in parameter " + e.name);
    }
  }
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  for (auto& e : reg.params()) {
    if (!e.var.requires_grad() || !e.var.has_grad()) continue;
    Slot& s = slots_[e.name];
    if (s.m.shape() != e.var.shape()) {
      s.m = Tensor<T>(e.var.shape());
      s.v = Tensor<T>(e.var.shape());
      s.step = 0;
    }
    ++s.step;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
    const auto& g = e.var.grad().vec();
    auto& w = e.var.mutable_value().vec();
    auto& m = s.m.vec();
    auto& v = s.v.vec();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps));
    }
    e.var.zero_grad();
  }
}

template <typename T>
void Adam<T>::prune(const model::Registry<T>& reg) {
  for (const auto& e : reg.params()) {
    if (!e.var.requires_grad()) slots_.erase(e.name);
  }
}

Protocol parse_protocol(const std::string& s) {
  if (s == "full") return Protocol::kFull;
  if (s == "peft") return Protocol::kPeft;
  if (s == "warm_peft") return Protocol::kWarmPeft;
  throw ConfigError("unknown training protocol '" + s + "' (expected full, peft or warm_peft)");
}

const char* protocol_name(Protocol p) {
  switch (p) {
    case Protocol::kFull:
      return "full";
    case Protocol::kPeft:
      return "peft";
    case Protocol::kWarmPeft:
      return "warm_peft";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (batch < 1) throw ConfigError("train.batch must be at least 1");
  if (epochs < 0) throw ConfigError("train.epochs must be non-negative");
  if (!(warm_fraction >= 0.0 && warm_fraction <= 1.0)) throw ConfigError("train.warm_fraction must lie in [0, 1]");
  if (eval_every < 0) throw ConfigError("train.eval_every must be non-negative");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("train.beta1 must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("train.beta2 must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("train.eps must be positive");
}

std::int64_t TrainConfig::warm_epochs() const {
  return static_cast<std::int64_t>(std::llround(warm_fraction * static_cast<double>(epochs)));
}

template <typename T>
Trainer<T>::Trainer(model::SpectralViT<T>& m, TrainConfig cfg, peft::ClrSchedule sched)
    : model_(m), cfg_(cfg), sched_(sched), adam_(cfg.adam), rng_(cfg.seed) {
  cfg_.validate();
  sched_.validate();
}

template <typename T>
std::int64_t Trainer<T>::batches_per_epoch(std::int64_t n, std::int64_t batch) {
  const std::int64_t c = (n + batch - 1) / batch;
  return (c > 1 && n % batch == 1) ? c - 1 : c;
}

template <typename T>
std::vector<std::vector<std::int64_t>> Trainer<T>::plan_epoch(std::int64_t n) {
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  for (std::int64_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::int64_t> pick(0, i);
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng_))]);
  }
  std::vector<std::vector<std::int64_t>> batches;
  for (std::int64_t s = 0; s < n; s += cfg_.batch) {
    const std::int64_t e = std::min(n, s + cfg_.batch);
    if (e - s == 1 && !batches.empty()) {
      batches.back().push_back(perm[static_cast<std::size_t>(s)]);
    } else {
      batches.emplace_back(perm.begin() + s, perm.begin() + e);
    }
  }
  return batches;
}

template <typename T>
peft::TrainableSet Trainer<T>::trainable_for(std::int64_t epoch) const {
  switch (cfg_.protocol) {
    case Protocol::kFull:
      return peft::TrainableSet::kFull;
    case Protocol::kPeft:
      return peft::TrainableSet::kPeft;
    case Protocol::kWarmPeft:
      return epoch < cfg_.warm_epochs() ? peft::TrainableSet::kFull : peft::TrainableSet::kPeft;
  }
  return peft::TrainableSet::kFull;
}

namespace {

template <typename T>
Var<T> gather_batch(const Dataset& d, std::span<const std::int64_t> idx) {
  const auto ss = static_cast<std::size_t>(d.sample_size());
  Tensor<T> x(Shape{static_cast<std::int64_t>(idx.size()), d.k, d.p, d.p});
  T* out = x.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const float* src = d.data.data() + static_cast<std::size_t>(idx[i]) * ss;
    for (std::size_t j = 0; j < ss; ++j) out[i * ss + j] = static_cast<T>(src[j]);
  }
  return Var<T>::constant(std::move(x));
}

template <typename T>
void check_dataset(const model::SpectralViT<T>& m, const Dataset& d) {
  const auto& cfg = m.config();
  if (d.k != cfg.in_bands || d.p != cfg.patch) {
    throw ShapeError("dataset patches are " + std::to_string(d.k) + "x" + std::to_string(d.p) + "x" +
                     std::to_string(d.p) + " but the model expects " + std::to_string(cfg.in_bands) + "x" +
                     std::to_string(cfg.patch) + "x" + std::to_string(cfg.patch));
  }
  if (static_cast<std::int64_t>(d.data.size()) != d.size() * d.sample_size()) {
    throw DimensionError("dataset payload does not match its sample count");
  }
}

}  // namespace

template <typename T>
void Trainer<T>::fit(const Dataset& train, const Dataset* eval, const std::filesystem::path& checkpoint,
                     std::ostream* log) {
  check_dataset(model_, train);
  if (eval) check_dataset(model_, *eval);
  const std::int64_t n = train.size();
  if (n < 2) throw ConfigError("training needs at least 2 samples, got " + std::to_string(n));
  const std::int64_t classes = model_.config().num_classes;
  std::vector<std::int64_t> per_class(static_cast<std::size_t>(classes), 0);
  for (auto l : train.labels) {
    if (l < 0 || l >= classes) throw IndexError("training label " + std::to_string(l + 1) + " exceeds class count");
    ++per_class[static_cast<std::size_t>(l)];
  }
  for (std::int64_t c = 0; c < classes; ++c) {
    if (per_class[static_cast<std::size_t>(c)] == 0) {
      warn("empty-class", "class " + std::to_string(c + 1) + " has no training samples");
    }
  }
  const std::int64_t nb = batches_per_epoch(n, cfg_.batch);
  if (iteration_ % nb != 0) throw ContractError("resume point is not at an epoch boundary for this dataset");
  auto& reg = model_.registry();
  for (std::int64_t epoch = iteration_ / nb; epoch < cfg_.epochs; ++epoch) {
    peft::set_trainable(model_, trainable_for(epoch));
    adam_.prune(reg);
    model_.set_training(true);
    double total = 0.0;
    for (const auto& b : plan_epoch(n)) {
      peft::apply_clr(model_, iteration_, sched_);
      const Var<T> x = gather_batch<T>(train, b);
      std::vector<std::int64_t> targets;
      targets.reserve(b.size());
      for (auto i : b) targets.push_back(train.labels[static_cast<std::size_t>(i)]);
      const Var<T> loss = classification_loss(model_.forward(x, &rng_), targets);
      const double l = static_cast<double>(loss.item());
      if (!std::isfinite(l)) {
        model_.set_training(false);
        throw NumericError("non-finite loss at iteration " + std::to_string(iteration_));
      }
      numerics::backward(loss);
      adam_.step(reg, cfg_.lr);
      losses_.emplace_back(iteration_, l);
      total += l;
      ++iteration_;
    }
    epoch_losses_.push_back(total / static_cast<double>(nb));
    const bool due = (cfg_.eval_every > 0 && (epoch + 1) % cfg_.eval_every == 0) || epoch + 1 == cfg_.epochs;
    double oa = -1.0;
    if (due && eval) {
      oa = evaluate(model_, *eval).oa;
      evals_.push_back({epoch + 1, oa});
    }
    if (log) {
      *log << "epoch " << epoch + 1 << "/" << cfg_.epochs << " loss " << format_g9(epoch_losses_.back());
      if (oa >= 0.0) *log << " eval_oa " << format_g9(oa);
      *log << '\n';
    }
    if (due && !checkpoint.empty()) save_checkpoint(checkpoint, snapshot());
  }
  model_.set_training(false);
}

template <typename T>
Checkpoint Trainer<T>::snapshot() const {
  Checkpoint c;
  c.iteration = static_cast<std::uint64_t>(iteration_);
  std::ostringstream rs;
  rs << rng_;
  c.rng_state = rs.str();
  auto add = [&c](std::string name, const Tensor<T>& t) {
    NamedTensor nt{std::move(name), t.shape(), {}};
    nt.values.reserve(static_cast<std::size_t>(t.numel()));
    for (const T v : t.vec()) nt.values.push_back(static_cast<float>(v));
    c.tensors.push_back(std::move(nt));
  };
  for (const auto& e : model_.registry().params()) add(e.name, e.var.value());
  for (const auto& b : model_.registry().buffers()) {
    add(b.name + ".running_mean", b.state->running_mean);
    add(b.name + ".running_var", b.state->running_var);
  }
  for (const auto& [name, s] : adam_.slots()) {
    add("adam.m/" + name, s.m);
    add("adam.v/" + name, s.v);
    c.tensors.push_back({"adam.step/" + name, {1}, {static_cast<float>(s.step)}});
  }
  return c;
}

namespace {

template <typename T>
void load_tensor(const Checkpoint& ckpt, const std::string& name, Tensor<T>& dst) {
  const NamedTensor* t = ckpt.find(name);
  if (!t) throw ConfigError("checkpoint has no tensor named " + name);
  if (t->shape != dst.shape()) {
    throw DimensionError("checkpoint tensor " + name + " has shape " + numerics::shape_str(t->shape) +
                         ", model expects " + numerics::shape_str(dst.shape()));
  }
  auto& v = dst.vec();
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(t->values[i]);
}

}  // namespace

template <typename T>
void load_model_state(model::SpectralViT<T>& m, const Checkpoint& ckpt) {
  for (auto& e : m.registry().params()) load_tensor(ckpt, e.name, e.var.mutable_value());
  for (const auto& b : m.registry().buffers()) {
    load_tensor(ckpt, b.name + ".running_mean", b.state->running_mean);
    load_tensor(ckpt, b.name + ".running_var", b.state->running_var);
  }
}

template <typename T>
void Trainer<T>::restore(const Checkpoint& ckpt) {
  auto load = [&ckpt](const std::string& name, Tensor<T>& dst) { load_tensor(ckpt, name, dst); };
  load_model_state(model_, ckpt);
  adam_.slots().clear();
  const std::string prefix = "adam.m/";
  for (const auto& t : ckpt.tensors) {
    if (t.name.rfind(prefix, 0) != 0) continue;
    const std::string name = t.name.substr(prefix.size());
    typename Adam<T>::Slot s;
    s.m = Tensor<T>(t.shape);
    s.v = Tensor<T>(t.shape);
    load(t.name, s.m);
    load("adam.v/" + name, s.v);
    const NamedTensor* st = ckpt.find("adam.step/" + name);
    if (!st || st->values.size() != 1) throw ConfigError("checkpoint has no step counter for " + name);
    s.step = static_cast<std::int64_t>(st->values[0]);
    adam_.slots()[name] = std::move(s);
  }
  std::istringstream rs(ckpt.rng_state);
  rs >> rng_;
  if (!rs) throw ConfigError("checkpoint rng state is unreadable");
  iteration_ = static_cast<std::int64_t>(ckpt.iteration);
}

template <typename T>
std::string Trainer<T>::loss_csv() const {
  std::string out = "iteration,loss\n";
  for (const auto& [t, l] : losses_) out += std::to_string(t) + "," + format_g9(l) + "\n";
  return out;
}

namespace {

template <typename T>
void argmax_rows(const Tensor<T>& logits, std::vector<std::int64_t>& out) {
  const std::int64_t b = logits.dim(0), k = logits.dim(1);
  for (std::int64_t i = 0; i < b; ++i) {
    const T* row = logits.data() + i * k;
    out.push_back(std::max_element(row, row + k) - row);
  }
}

class TrainingFlagGuard {
 public:
  template <typename M>
  explicit TrainingFlagGuard(M& m) : restore_([&m, was = m.training()] { m.set_training(was); }) {
    m.set_training(false);
  }
  ~TrainingFlagGuard() { restore_(); }

 private:
  std::function<void()> restore_;
};

}  // namespace

template <typename T>
std::vector<std::int64_t> predict(model::SpectralViT<T>& m, const Dataset& data, std::int64_t batch) {
  check_dataset(m, data);
  if (batch < 1) throw ConfigError("batch must be positive");
  TrainingFlagGuard guard(m);
  numerics::NoGradGuard no_grad;
  std::vector<std::int64_t> pred;
  pred.reserve(data.labels.size());
  std::vector<std::int64_t> idx;
  for (std::int64_t s = 0; s < data.size(); s += batch) {
    idx.resize(static_cast<std::size_t>(std::min(batch, data.size() - s)));
    std::iota(idx.begin(), idx.end(), s);
    argmax_rows(m.forward(gather_batch<T>(data, idx)).value(), pred);
  }
  return pred;
}

template <typename T>
MetricsReport evaluate(model::SpectralViT<T>& m, const Dataset& data, std::int64_t batch) {
  const auto pred = predict(m, data, batch);
  return metrics_from_predictions(data.labels, pred, m.config().num_classes);
}

template <typename T>
io::LabelMap predict_map(model::SpectralViT<T>& m, const io::HsiCube& cube, const preprocess::PcaModel& pca,
                         std::int64_t batch) {
  if (cube.bands != pca.raw_bands) {
    throw ShapeError("cube has " + std::to_string(cube.bands) + " bands but the PCA model was fit on " +
                     std::to_string(pca.raw_bands));
  }
  const auto& cfg = m.config();
  if (pca.k != cfg.in_bands) {
    throw ShapeError("PCA keeps " + std::to_string(pca.k) + " components but the model expects " +
                     std::to_string(cfg.in_bands));
  }
  if (batch < 1) throw ConfigError("batch must be positive");
  const io::HsiCube white = preprocess::apply_pca_whiten(cube, pca);
  TrainingFlagGuard guard(m);
  numerics::NoGradGuard no_grad;
  io::LabelMap out(cube.height, cube.width);
  const std::int64_t p = cfg.patch;
  const auto ss = static_cast<std::size_t>(pca.k * p * p);
  std::vector<float> buf;
  std::vector<std::int64_t> pred;
  for (std::int64_t s = 0; s < cube.pixels(); s += batch) {
    const std::int64_t nb = std::min(batch, cube.pixels() - s);
    Tensor<T> x(Shape{nb, pca.k, p, p});
    buf.resize(ss);
    for (std::int64_t i = 0; i < nb; ++i) {
      const std::int64_t idx = s + i;
      preprocess::extract_patch(white, idx / cube.width, idx % cube.width, p, buf);
      std::transform(buf.begin(), buf.end(), x.data() + static_cast<std::size_t>(i) * ss,
                     [](float v) { return static_cast<T>(v); });
    }
    pred.clear();
    argmax_rows(m.forward(Var<T>::constant(std::move(x))).value(), pred);
    for (std::int64_t i = 0; i < nb; ++i) {
      out.labels[static_cast<std::size_t>(s + i)] = static_cast<std::uint16_t>(pred[static_cast<std::size_t>(i)] + 1);
    }
  }
  return out;
}

#define HYSPEC_INSTANTIATE_TRAIN(T)                                                                       \
  template Var<T> classification_loss<T>(const Var<T>&, std::span<const std::int64_t>);                     \
  template class Adam<T>;                                                                                   \
  template class Trainer<T>;                                                                                \
  template void load_model_state<T>(model::SpectralViT<T>&, const Checkpoint&);                             \
  template std::vector<std::int64_t> predict<T>(model::SpectralViT<T>&, const Dataset&, std::int64_t);      \
  template MetricsReport evaluate<T>(model::SpectralViT<T>&, const Dataset&, std::int64_t);                 \
  template io::LabelMap predict_map<T>(model::SpectralViT<T>&, const io::HsiCube&, const preprocess::PcaModel&, \
                                       std::int64_t);

HYSPEC_INSTANTIATE_TRAIN(float)
HYSPEC_INSTANTIATE_TRAIN(double)

}  // namespace hyspec::train
