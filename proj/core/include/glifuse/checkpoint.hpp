#pragma once

// Binary checkpoint container. Layout:
//   8-byte magic "GLFUSE01"
//   u32 version, u64 tensor count (little-endian)
//   manifest entries: u16 name length, name bytes, u8 rank,
//                     u64 dims[rank], u64 payload offset
//   u64 payload size, raw float32 little-endian payload
//   u64 metadata size, JSON metadata blob
// Save/load round-trips parameter bytes exactly.

#include <cstdint>
#include <string>
#include <vector>

namespace glifuse {

struct TensorBlob {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string kind;       // "seg2d", "seg3d" or "cls"
  std::string spec_json;  // model spec echo
  std::uint64_t epoch = 0;
  std::uint64_t optimizer_step = 0;
  std::string rng_state;
  std::vector<TensorBlob> tensors;  // parameters, norm stats, optimizer moments
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace glifuse
