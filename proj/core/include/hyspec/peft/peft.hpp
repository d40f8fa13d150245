#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "hyspec/model/model.hpp"

namespace hyspec::peft {

// Triangular waveform whose amplitude halves every cycle.
struct ClrSchedule {
  double base = 0.8;
  double max = 1.5;
  std::int64_t step_up = 100;
  std::int64_t step_down = 100;

  void validate() const;
};

double clr_scale(std::int64_t t, const ClrSchedule& sched);

// Sets gamma = clr_scale(t) on every LoRA layer; returns gamma.
template <typename T>
double apply_clr(model::SpectralViT<T>& m, std::int64_t t, const ClrSchedule& sched);

enum class TrainableSet { kFull, kPeft };

TrainableSet parse_trainable_set(const std::string& s);

// kFull: every parameter trainable. kPeft: only LoRA A/B factors.
template <typename T>
void set_trainable(model::SpectralViT<T>& m, TrainableSet mode);

// Folds every adapter into its base weight at gamma = 1. Eval mode only.
template <typename T>
void merge_lora(model::SpectralViT<T>& m);

struct ParamReport {
  std::int64_t total = 0;
  std::int64_t trainable = 0;
  std::int64_t lora = 0;  // sum of r * (d_in + d_out)
  std::int64_t lora_layers = 0;
  std::int64_t blocks = 0;
  std::int64_t rank = 0;
  std::int64_t dim = 0;
  double rho_exact = 0.0;        // lora / total
  double rho_closed_form = 0.0;  // 2 r |L| / (d N)
  double trainable_fraction = 0.0;
  double attention_cost = 0.0;  // sum over blocks of N * M^2 * d
  std::map<std::string, std::int64_t> per_module;

  std::string to_text() const;
};

template <typename T>
ParamReport param_report(const model::SpectralViT<T>& m);

}  // namespace hyspec::peft
