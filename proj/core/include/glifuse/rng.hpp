#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace glifuse {

// Derives a module-specific seed from one master seed. The same
// (master, tag) pair always yields the same seed, distinct tags give
// unrelated streams.
std::uint64_t derive_seed(std::uint64_t master, std::string_view tag);

// Deterministic generator (xoshiro256** seeded via splitmix64) with
// its own distribution mappings, so sequences are bit-identical across
// platforms and standard library versions.
class Rng {
public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform double in [0, 1).
  double uniform();
  // Uniform double in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform index in [0, n). n must be > 0.
  std::size_t index(std::size_t n);
  // Standard normal via Box-Muller (second draw cached).
  double gaussian();

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

  // Full state round-trip, used by training checkpoints.
  std::string serialize() const;
  static Rng deserialize(const std::string& text);

private:
  Rng() = default;

  std::uint64_t state_[4] = {0, 0, 0, 0};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace glifuse
