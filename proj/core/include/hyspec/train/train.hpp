#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hyspec/io/hsi_io.hpp"
#include "hyspec/model/model.hpp"
#include "hyspec/peft/peft.hpp"
#include "hyspec/preprocess/preprocess.hpp"
#include "hyspec/train/checkpoint.hpp"
#include "hyspec/train/metrics.hpp"

namespace hyspec::train {

// Patches as one flat [n, k, p, p] float array with 0-based labels.
struct Dataset {
  std::int64_t k = 0;
  std::int64_t p = 0;
  std::vector<float> data;
  std::vector<std::int64_t> labels;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  std::int64_t sample_size() const { return k * p * p; }
};

// Centered patches of `cube` at the given row-major pixel indices. Labels
// 1..K in `labels` become 0..K-1.
Dataset make_dataset(const io::HsiCube& cube, const io::LabelMap& labels, std::span<const std::int64_t> pixels,
                     std::int64_t p);
Dataset make_dataset(const std::vector<preprocess::Patch>& patches, std::int64_t k, std::int64_t p);

std::vector<std::int64_t> flatten(const std::vector<std::vector<std::int64_t>>& per_class);

// Cross-entropy on 0-based targets; IndexError when a target is outside [0, K).
template <typename T>
numerics::Var<T> classification_loss(const numerics::Var<T>& logits, std::span<const std::int64_t> targets);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  struct Slot {
    numerics::Tensor<T> m, v;
    std::int64_t step = 0;
  };

  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Updates every parameter that requires grad and holds one, then clears
  // its gradient. NumericError (with the parameter name) on non-finite
  // gradients, raised before any parameter changes.
  void step(model::Registry<T>& reg, double lr);
  // Forgets the state of parameters that no longer require grad.
  void prune(const model::Registry<T>& reg);

  const std::map<std::string, Slot>& slots() const { return slots_; }
  std::map<std::string, Slot>& slots() { return slots_; }

 private:
  AdamConfig cfg_;
  std::map<std::string, Slot> slots_;
};

enum class Protocol { kFull, kPeft, kWarmPeft };
Protocol parse_protocol(const std::string& s);
const char* protocol_name(Protocol p);

struct TrainConfig {
  double lr = 1e-3;
  std::int64_t batch = 64;
  std::int64_t epochs = 100;
  std::uint64_t seed = 0;
  Protocol protocol = Protocol::kWarmPeft;
  double warm_fraction = 0.5;
  std::int64_t eval_every = 10;  // epochs between eval + checkpoint; 0 disables
  AdamConfig adam;

  void validate() const;
  std::int64_t warm_epochs() const;
};

struct EvalPoint {
  std::int64_t epoch = 0;
  double oa = 0.0;
};

template <typename T>
class Trainer {
 public:
  Trainer(model::SpectralViT<T>& m, TrainConfig cfg, peft::ClrSchedule sched);

  // Trains until cfg.epochs. With `checkpoint` non-empty, the state is saved
  // there every eval_every epochs and after the final epoch; `eval` (if
  // given) is scored at the same cadence.
  void fit(const Dataset& train, const Dataset* eval = nullptr, const std::filesystem::path& checkpoint = {},
           std::ostream* log = nullptr);

  Checkpoint snapshot() const;
  void restore(const Checkpoint& ckpt);

  std::int64_t iteration() const { return iteration_; }
  const std::vector<std::pair<std::int64_t, double>>& loss_trace() const { return losses_; }
  const std::vector<double>& epoch_losses() const { return epoch_losses_; }
  const std::vector<EvalPoint>& eval_trace() const { return evals_; }
  // "iteration,loss" lines with %.9g values.
  std::string loss_csv() const;

  static std::int64_t batches_per_epoch(std::int64_t n, std::int64_t batch);

 private:
  std::vector<std::vector<std::int64_t>> plan_epoch(std::int64_t n);
  peft::TrainableSet trainable_for(std::int64_t epoch) const;

  model::SpectralViT<T>& model_;
  TrainConfig cfg_;
  peft::ClrSchedule sched_;
  Adam<T> adam_;
  std::mt19937_64 rng_;
  std::int64_t iteration_ = 0;
  std::vector<std::pair<std::int64_t, double>> losses_;
  std::vector<double> epoch_losses_;
  std::vector<EvalPoint> evals_;
};

// Copies parameters and running statistics out of a checkpoint.
template <typename T>
void load_model_state(model::SpectralViT<T>& m, const Checkpoint& ckpt);

template <typename T>
std::vector<std::int64_t> predict(model::SpectralViT<T>& m, const Dataset& data, std::int64_t batch = 64);

template <typename T>
MetricsReport evaluate(model::SpectralViT<T>& m, const Dataset& data, std::int64_t batch = 64);

// Classifies every pixel of a raw cube: whiten with `pca`, extract the
// centered reflect-padded patch and take the argmax class (1-based).
template <typename T>
io::LabelMap predict_map(model::SpectralViT<T>& m, const io::HsiCube& cube, const preprocess::PcaModel& pca,
                         std::int64_t batch = 64);

}  // namespace hyspec::train
