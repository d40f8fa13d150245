#include "hyspec/model/model.hpp"

#include <map>

namespace hyspec::model {

using namespace numerics;

void ModelConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("model." + field + ": " + why); };
  if (in_bands < 13) fail("in_bands", "the spectral kernel stack needs at least 13 components");
  if (patch < 4) fail("patch", "patch size must be at least 4");
  if (dim < 4) fail("dim", "must be at least 4");
  if (depths.empty()) fail("depths", "at least one stage is required");
  if (depths.size() != heads.size()) fail("heads", "length must equal the number of stages in depths");
  for (std::size_t s = 0; s < depths.size(); ++s) {
    if (depths[s] < 1) fail("depths", "every stage needs at least one block");
    if (heads[s] < 1) fail("heads", "every stage needs at least one head");
    if (stage_dim(s) % heads[s] != 0) {
      fail("heads", "stage " + std::to_string(s + 1) + " width " + std::to_string(stage_dim(s)) +
                        " is not divisible by " + std::to_string(heads[s]));
    }
  }
  if (window < 1) fail("window", "must be positive");
  if (lora_rank < 0) fail("lora.r", "must be non-negative");
  if (!(lora_alpha > 0.0)) fail("lora.alpha", "must be positive");
  if (!(lora_dropout >= 0.0 && lora_dropout < 1.0)) fail("lora.dropout", "must lie in [0, 1)");
  if (!(drop_path >= 0.0 && drop_path < 1.0)) fail("drop_path", "must lie in [0, 1)");
  if (!(band_drop >= 0.0 && band_drop < 1.0)) fail("band_drop", "must lie in [0, 1)");
  if (!(pos_drop >= 0.0 && pos_drop < 1.0)) fail("pos_drop", "must lie in [0, 1)");
  if (ffn_ratio < 1) fail("ffn_ratio", "must be at least 1");
  if (num_classes < 1) fail("num_classes", "must be at least 1");
  std::int64_t g = token_grid();
  for (std::size_t s = 0; s + 1 < depths.size(); ++s) {
    if (g < 2) fail("patch", "token grid shrinks below 2x2 before stage " + std::to_string(s + 2));
    g = (g + 1) / 2;
  }
}

std::int64_t ModelConfig::total_blocks() const {
  std::int64_t n = 0;
  for (auto d : depths) n += d;
  return n;
}

template <typename T>
SpectralViT<T>::SpectralViT(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Initializer init(seed);
  frontend_ = SpectralFrontend<T>(cfg_, init);
  backbone_ = Backbone<T>(cfg_, init);
  const std::int64_t c = cfg_.stage_dim(cfg_.depths.size() - 1);
  head_norm_ = LayerNorm<T>(c);
  head_ = LoraLinear<T>(c, cfg_.num_classes, cfg_.lora_rank, cfg_.lora_alpha, cfg_.lora_dropout, init);
  rebuild_registry();
}

template <typename T>
void SpectralViT<T>::rebuild_registry() {
  registry_ = Registry<T>();
  frontend_.collect("frontend", registry_);
  backbone_.collect("backbone", registry_);
  head_norm_.collect("head.norm", registry_);
  head_.collect("head.fc", registry_);
}

template <typename T>
Var<T> SpectralViT<T>::forward(const Var<T>& patches, std::mt19937_64* rng, ShapeTrace* trace) const {
  const Shape& s = patches.shape();
  if (s.size() != 4 || s[1] != cfg_.in_bands || s[2] != cfg_.patch || s[3] != cfg_.patch) {
    throw DimensionError("model expects [B, " + std::to_string(cfg_.in_bands) + ", " + std::to_string(cfg_.patch) +
                         ", " + std::to_string(cfg_.patch) + "], got " + shape_str(s));
  }
  const ForwardContext ctx{training_, rng, trace};
  Var<T> x = frontend_.forward(patches, ctx);
  x = backbone_.forward(x, ctx);
  x = mean(head_norm_.forward(x), {1, 2});
  const Var<T> logits = head_.forward(x, ctx);
  ctx.record("logits", logits.shape());
  return logits;
}

template <typename T>
std::vector<LoraLinear<T>*> SpectralViT<T>::lora_layers() {
  std::vector<LoraLinear<T>*> out;
  for (std::size_t s = 0; s < backbone_.stages(); ++s) {
    for (auto& b : backbone_.blocks(s)) {
      out.push_back(&b.attention().qkv());
      out.push_back(&b.attention().proj());
    }
  }
  out.push_back(&head_);
  return out;
}

template <typename T>
std::vector<const LoraLinear<T>*> SpectralViT<T>::lora_layers() const {
  auto self = const_cast<SpectralViT*>(this)->lora_layers();
  return {self.begin(), self.end()};
}

template <typename T>
std::size_t SpectralViT<T>::copy_from(const SpectralViT& other) {
  std::map<std::string, const Var<T>*> src;
  for (const auto& e : other.registry_.params()) src[e.name] = &e.var;
  std::size_t copied = 0;
  for (auto& e : registry_.params()) {
    auto it = src.find(e.name);
    if (it == src.end() || it->second->shape() != e.var.shape()) continue;
    e.var.mutable_value() = it->second->value();
    ++copied;
  }
  std::map<std::string, const BatchNormState<T>*> bufs;
  for (const auto& b : other.registry_.buffers()) bufs[b.name] = b.state.get();
  for (const auto& b : registry_.buffers()) {
    auto it = bufs.find(b.name);
    if (it == bufs.end() || it->second->running_mean.shape() != b.state->running_mean.shape()) continue;
    *b.state = *it->second;
    ++copied;
  }
  return copied;
}

template class SpectralViT<float>;
template class SpectralViT<double>;

}  // namespace hyspec::model
