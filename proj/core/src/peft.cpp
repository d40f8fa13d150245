#include "hyspec/peft/peft.hpp"

#include <cmath>
#include <cstdio>

namespace hyspec::peft {

void ClrSchedule::validate() const {
  if (step_up < 0 || step_down < 0) throw ConfigError("clr: step sizes must be non-negative");
  if (step_up + step_down == 0) throw ConfigError("clr: step_up + step_down must be positive");
  if (!(base <= max)) throw ConfigError("clr: base must not exceed max");
}

double clr_scale(std::int64_t t, const ClrSchedule& sched) {
  sched.validate();
  if (t < 0) throw ContractError("clr: iteration must be non-negative, got " + std::to_string(t));
  const std::int64_t period = sched.step_up + sched.step_down;
  const std::int64_t cycle = 1 + t / period;
  const std::int64_t x = t % period;
  const double s = x < sched.step_up ? static_cast<double>(x) / static_cast<double>(sched.step_up)
                                     : 1.0 - static_cast<double>(x - sched.step_up) / static_cast<double>(sched.step_down);
  return sched.base + (sched.max - sched.base) * s * std::ldexp(1.0, -static_cast<int>(std::min<std::int64_t>(cycle - 1, 2000)));
}

template <typename T>
double apply_clr(model::SpectralViT<T>& m, std::int64_t t, const ClrSchedule& sched) {
  const double g = clr_scale(t, sched);
  for (auto* l : m.lora_layers()) l->gamma = g;
  return g;
}

TrainableSet parse_trainable_set(const std::string& s) {
  if (s == "full") return TrainableSet::kFull;
  if (s == "peft") return TrainableSet::kPeft;
  throw ConfigError("unknown trainable set '" + s + "' (expected full or peft)");
}

template <typename T>
void set_trainable(model::SpectralViT<T>& m, TrainableSet mode) {
  for (auto& e : m.registry().params()) {
    const bool on = mode == TrainableSet::kFull || e.role != model::ParamRole::kBase;
    e.var.set_requires_grad(on);
    if (!on) e.var.zero_grad();
  }
}

template <typename T>
void merge_lora(model::SpectralViT<T>& m) {
  if (m.training()) throw ContractError("merge_lora: model must be in eval mode");
  for (auto* l : m.lora_layers()) l->merge();
}

namespace {

std::string module_of(const std::string& name) {
  const auto first = name.find('.');
  if (first == std::string::npos) return name;
  const std::string head = name.substr(0, first);
  if (head != "backbone") return head;
  const auto second = name.find('.', first + 1);
  return second == std::string::npos ? name : name.substr(0, second);
}

}  // namespace

template <typename T>
ParamReport param_report(const model::SpectralViT<T>& m) {
  const auto& cfg = m.config();
  ParamReport r;
  for (const auto& e : m.registry().params()) {
    const std::int64_t n = e.var.numel();
    r.total += n;
    if (e.var.requires_grad()) r.trainable += n;
    if (e.role != model::ParamRole::kBase) r.lora += n;
    r.per_module[module_of(e.name)] += n;
  }
  for (const auto* l : m.lora_layers()) {
    if (l->has_adapter()) ++r.lora_layers;
  }
  r.blocks = cfg.total_blocks();
  r.rank = cfg.lora_rank;
  r.dim = cfg.dim;
  r.rho_exact = r.total > 0 ? static_cast<double>(r.lora) / static_cast<double>(r.total) : 0.0;
  r.rho_closed_form = 2.0 * static_cast<double>(cfg.lora_rank) * static_cast<double>(r.blocks) /
                      (static_cast<double>(cfg.dim) * static_cast<double>(r.blocks));
  r.trainable_fraction = r.total > 0 ? static_cast<double>(r.trainable) / static_cast<double>(r.total) : 0.0;
  std::int64_t g = cfg.token_grid();
  const double m2 = static_cast<double>(cfg.window * cfg.window);
  for (std::size_t s = 0; s < cfg.depths.size(); ++s) {
    const std::int64_t gp = (g + cfg.window - 1) / cfg.window * cfg.window;
    r.attention_cost += static_cast<double>(cfg.depths[s]) * static_cast<double>(gp * gp) * m2 *
                        static_cast<double>(cfg.stage_dim(s));
    g = (g + 1) / 2;
  }
  return r;
}

std::string ParamReport::to_text() const {
  std::string out;
  char buf[128];
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s=%.9g\n", key, v);
    out += buf;
  };
  auto iline = [&](const std::string& key, std::int64_t v) { out += key + "=" + std::to_string(v) + "\n"; };
  iline("total_params", total);
  iline("trainable_params", trainable);
  iline("lora_params", lora);
  iline("lora_layers", lora_layers);
  iline("blocks", blocks);
  iline("rank", rank);
  iline("dim", dim);
  line("rho_exact", rho_exact);
  line("rho_closed_form", rho_closed_form);
  line("reduction_closed_form", 1.0 - rho_closed_form);
  line("trainable_fraction", trainable_fraction);
  line("window_attention_cost", attention_cost);
  for (const auto& [k, v] : per_module) iline("params." + k, v);
  return out;
}

#define HYSPEC_INSTANTIATE_PEFT(T)                                                       \
  template double apply_clr<T>(model::SpectralViT<T>&, std::int64_t, const ClrSchedule&); \
  template void set_trainable<T>(model::SpectralViT<T>&, TrainableSet);                  \
  template void merge_lora<T>(model::SpectralViT<T>&);                                   \
  template ParamReport param_report<T>(const model::SpectralViT<T>&);

HYSPEC_INSTANTIATE_PEFT(float)
HYSPEC_INSTANTIATE_PEFT(double)

}  // namespace hyspec::peft
