#include "hyspec/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hyspec/error.hpp"

namespace hyspec::train {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

const NamedTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

namespace {

template <typename U>
void put(std::string& buf, U v) {
  char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  buf.append(bytes, sizeof(U));
}

class Cursor {
 public:
  explicit Cursor(const std::string& b) : buf_(b) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == buf_.size(); }

 private:
  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::string buf = "HSCK";
  put<std::uint32_t>(buf, kCheckpointVersion);
  put<std::uint64_t>(buf, ckpt.iteration);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.rng_state.size()));
  buf += ckpt.rng_state;
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (t.name.size() > 0xFFFF) throw ConfigError("checkpoint: tensor name too long: " + t.name.substr(0, 64));
    if (t.shape.size() > 0xFF) throw ConfigError("checkpoint: tensor rank too large for " + t.name);
    std::int64_t n = 1;
    for (auto e : t.shape) {
      if (e < 0 || e > 0xFFFFFFFFLL) throw ConfigError("checkpoint: extent out of range for " + t.name);
      n *= e;
    }
    if (n != static_cast<std::int64_t>(t.values.size())) {
      throw DimensionError("checkpoint: payload of " + t.name + " does not match its shape");
    }
    put<std::uint16_t>(buf, static_cast<std::uint16_t>(t.name.size()));
    buf += t.name;
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(t.shape.size()));
    for (auto e : t.shape) put<std::uint32_t>(buf, static_cast<std::uint32_t>(e));
    buf.append(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(float));
  }
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Cursor c(buf);
  if (c.bytes(4, "magic") != "HSCK") throw FormatError("bad checkpoint magic in " + path.string(), 0);
  const auto version = c.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
  }
  Checkpoint ckpt;
  ckpt.iteration = c.get<std::uint64_t>("iteration");
  const auto rng_len = c.get<std::uint32_t>("rng length");
  ckpt.rng_state = c.bytes(rng_len, "rng state");
  const auto count = c.get<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = c.get<std::uint16_t>("name length");
    t.name = c.bytes(name_len, "name");
    const auto rank = c.get<std::uint8_t>("rank");
    std::uint64_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      const auto e = c.get<std::uint32_t>("extent");
      t.shape.push_back(e);
      n *= e;
      if (n > buf.size()) throw FormatError("tensor " + t.name + " is larger than the file", c.pos());
    }
    c.need(n * sizeof(float), "payload");
    t.values.resize(n);
    const std::string raw = c.bytes(n * sizeof(float), "payload");
    std::memcpy(t.values.data(), raw.data(), raw.size());
    ckpt.tensors.push_back(std::move(t));
  }
  if (!c.done()) throw FormatError("trailing bytes after checkpoint payload", c.pos());
  return ckpt;
}

}  // namespace hyspec::train
