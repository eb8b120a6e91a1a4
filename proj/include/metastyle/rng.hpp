#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace metastyle {

// Seeded generator whose outputs are identical on every platform: the engine
// is mt19937_64 (fully specified by the standard) and all derived draws are
// computed here rather than through the implementation-defined <random>
// distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, n) by rejection; n > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  // Uniform in [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  // Box-Muller.
  double normal();

  // k distinct indices from [0, n) in draw order (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace metastyle
