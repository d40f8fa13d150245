#include "hyspec_cli/run_config.hpp"

#include <fstream>
#include <limits>
#include <optional>
#include <set>

namespace hyspec::cli {

using nlohmann::json;

namespace {

// Reads the members of one JSON object, tracking which keys were consumed.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* take(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void integer(const std::string& key, std::int64_t& dst, std::int64_t lo, std::int64_t hi) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_number_integer()) throw ConfigError(key_path(key) + ": expected an integer");
    const auto x = v->get<std::int64_t>();
    if (x < lo || x > hi) {
      throw ConfigError(key_path(key) + ": " + std::to_string(x) + " outside [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + "]");
    }
    dst = x;
  }

  void seed(const std::string& key, std::uint64_t& dst) {
    std::int64_t x = static_cast<std::int64_t>(dst);
    integer(key, x, 0, std::numeric_limits<std::int64_t>::max());
    dst = static_cast<std::uint64_t>(x);
  }

  void number(const std::string& key, double& dst, double lo, double hi, bool lo_open = false, bool hi_open = false) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_number()) throw ConfigError(key_path(key) + ": expected a number");
    const double x = v->get<double>();
    const bool ok = (lo_open ? x > lo : x >= lo) && (hi_open ? x < hi : x <= hi);
    if (!ok) {
      throw ConfigError(key_path(key) + ": " + json(x).dump() + " outside " + (lo_open ? "(" : "[") + json(lo).dump() +
                        ", " + json(hi).dump() + (hi_open ? ")" : "]"));
    }
    dst = x;
  }

  void string(const std::string& key, std::string& dst) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_string()) throw ConfigError(key_path(key) + ": expected a string");
    dst = v->get<std::string>();
  }

  void int_list(const std::string& key, std::vector<std::int64_t>& dst, std::int64_t lo) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_array() || v->empty()) throw ConfigError(key_path(key) + ": expected a non-empty array of integers");
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      const json& e = (*v)[i];
      const std::string p = key_path(key) + "[" + std::to_string(i) + "]";
      if (!e.is_number_integer()) throw ConfigError(p + ": expected an integer");
      if (e.get<std::int64_t>() < lo) throw ConfigError(p + ": must be at least " + std::to_string(lo));
      out.push_back(e.get<std::int64_t>());
    }
    dst = std::move(out);
  }

  std::optional<Section> child(const std::string& key) {
    const json* v = take(key);
    if (!v) return std::nullopt;
    return Section(*v, key_path(key));
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError(key_path(it.key()) + ": unknown key");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

constexpr std::int64_t kBig = 1LL << 31;

}  // namespace

void RunConfig::apply_seed(std::uint64_t seed) {
  data.synth.seed = seed;
  split_seed = seed;
  train.seed = seed;
}

model::ModelConfig RunConfig::resolved_model(std::int64_t num_classes) const {
  model::ModelConfig m = model;
  m.in_bands = pca_k;
  m.patch = patch;
  m.num_classes = num_classes;
  return m;
}

bool operator==(const RunConfig& a, const RunConfig& b) { return to_json(a) == to_json(b); }

RunConfig parse_config(const json& doc) {
  RunConfig c;
  Section root(doc, "");
  if (auto d = root.child("data")) {
    d->string("cube", c.data.cube);
    d->string("labels", c.data.labels);
    if (auto s = d->child("synth")) {
      s->integer("H", c.data.synth.height, 1, kBig);
      s->integer("W", c.data.synth.width, 1, kBig);
      s->integer("C", c.data.synth.bands, 1, kBig);
      std::int64_t k = c.data.synth.classes;
      s->integer("K", k, 1, 65535);
      c.data.synth.classes = static_cast<int>(k);
      s->number("noise", c.data.synth.noise_sigma, 0.0, 1e6);
      s->seed("seed", c.data.synth.seed);
      s->finish();
    }
    d->finish();
    if (c.data.cube.empty() != c.data.labels.empty()) {
      throw ConfigError("data: cube and labels must be given together");
    }
  }
  if (auto p = root.child("pca")) {
    p->integer("k", c.pca_k, 1, kBig);
    p->finish();
  }
  if (auto p = root.child("patches")) {
    p->integer("p", c.patch, 1, kBig);
    std::string mode = preprocess::patch_mode_name(c.patch_mode);
    p->string("mode", mode);
    try {
      c.patch_mode = preprocess::parse_patch_mode(mode);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("patches.mode: ") + e.what());
    }
    p->finish();
  }
  if (auto s = root.child("split")) {
    s->number("fraction", c.split_fraction, 0.0, 1.0, true, false);
    s->seed("seed", c.split_seed);
    s->finish();
  }
  if (auto m = root.child("model")) {
    m->integer("dim", c.model.dim, 4, kBig);
    m->int_list("depths", c.model.depths, 1);
    m->int_list("heads", c.model.heads, 1);
    m->integer("window", c.model.window, 1, kBig);
    if (auto l = m->child("lora")) {
      l->integer("r", c.model.lora_rank, 0, kBig);
      l->number("alpha", c.model.lora_alpha, 0.0, 1e9, true);
      l->number("dropout", c.model.lora_dropout, 0.0, 1.0, false, true);
      l->finish();
    }
    m->number("drop_path", c.model.drop_path, 0.0, 1.0, false, true);
    m->number("band_drop", c.model.band_drop, 0.0, 1.0, false, true);
    m->number("pos_drop", c.model.pos_drop, 0.0, 1.0, false, true);
    m->integer("ffn_ratio", c.model.ffn_ratio, 1, 64);
    m->finish();
    if (c.model.depths.size() != c.model.heads.size()) {
      throw ConfigError("model.heads: length " + std::to_string(c.model.heads.size()) +
                        " differs from model.depths length " + std::to_string(c.model.depths.size()));
    }
  }
  if (auto k = root.child("clr")) {
    k->number("base", c.clr.base, 0.0, 1e9);
    k->number("max", c.clr.max, 0.0, 1e9);
    k->integer("step_up", c.clr.step_up, 0, kBig);
    k->integer("step_down", c.clr.step_down, 0, kBig);
    k->finish();
    try {
      c.clr.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("clr: ") + e.what());
    }
  }
  if (auto t = root.child("train")) {
    t->number("lr", c.train.lr, 0.0, 1e9, true);
    t->integer("batch", c.train.batch, 1, kBig);
    t->integer("epochs", c.train.epochs, 0, kBig);
    t->seed("seed", c.train.seed);
    std::string mode = train::protocol_name(c.train.protocol);
    t->string("peft_mode", mode);
    try {
      c.train.protocol = train::parse_protocol(mode);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("train.peft_mode: ") + e.what());
    }
    t->number("warm_fraction", c.train.warm_fraction, 0.0, 1.0);
    t->integer("eval_every", c.train.eval_every, 0, kBig);
    t->number("beta1", c.train.adam.beta1, 0.0, 1.0, false, true);
    t->number("beta2", c.train.adam.beta2, 0.0, 1.0, false, true);
    t->number("eps", c.train.adam.eps, 0.0, 1.0, true);
    t->finish();
  }
  if (auto o = root.child("out")) {
    o->string("dir", c.out_dir);
    o->finish();
  }
  root.finish();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

json to_json(const RunConfig& c) {
  json j;
  j["data"] = {{"cube", c.data.cube},
               {"labels", c.data.labels},
               {"synth",
                {{"H", c.data.synth.height},
                 {"W", c.data.synth.width},
                 {"C", c.data.synth.bands},
                 {"K", c.data.synth.classes},
                 {"noise", c.data.synth.noise_sigma},
                 {"seed", c.data.synth.seed}}}};
  j["pca"] = {{"k", c.pca_k}};
  j["patches"] = {{"p", c.patch}, {"mode", preprocess::patch_mode_name(c.patch_mode)}};
  j["split"] = {{"fraction", c.split_fraction}, {"seed", c.split_seed}};
  j["model"] = {{"dim", c.model.dim},
                {"depths", c.model.depths},
                {"heads", c.model.heads},
                {"window", c.model.window},
                {"lora", {{"r", c.model.lora_rank}, {"alpha", c.model.lora_alpha}, {"dropout", c.model.lora_dropout}}},
                {"drop_path", c.model.drop_path},
                {"band_drop", c.model.band_drop},
                {"pos_drop", c.model.pos_drop},
                {"ffn_ratio", c.model.ffn_ratio}};
  j["clr"] = {{"base", c.clr.base}, {"max", c.clr.max}, {"step_up", c.clr.step_up}, {"step_down", c.clr.step_down}};
  j["train"] = {{"lr", c.train.lr},
                {"batch", c.train.batch},
                {"epochs", c.train.epochs},
                {"seed", c.train.seed},
                {"peft_mode", train::protocol_name(c.train.protocol)},
                {"warm_fraction", c.train.warm_fraction},
                {"eval_every", c.train.eval_every},
                {"beta1", c.train.adam.beta1},
                {"beta2", c.train.adam.beta2},
                {"eps", c.train.adam.eps}};
  j["out"] = {{"dir", c.out_dir}};
  return j;
}

void write_config_echo(const std::filesystem::path& path, const RunConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_json(cfg).dump(2) << '\n';
}

}  // namespace hyspec::cli
