#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hyspec::train {

struct NamedTensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

// HSCK: "HSCK" | u32 version | u64 iteration | u32 rng length | rng text
//       | u32 count | count x {u16 name length | name | u8 rank
//       | rank x u32 extent | f32 payload}, all little-endian.
struct Checkpoint {
  std::uint64_t iteration = 0;
  std::string rng_state;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace hyspec::train
