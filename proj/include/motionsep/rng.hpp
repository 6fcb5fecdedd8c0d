#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace motionsep {

// splitmix64 step; used to derive independent substream seeds.
uint64_t splitmix64(uint64_t& state);

// Mixes a master seed with a purpose tag into a substream seed. Distinct tags
// give statistically independent streams; identical (seed, tag) pairs give
// identical streams on every platform.
uint64_t derive_seed(uint64_t seed, std::string_view tag);

// Deterministic random source. std::mt19937_64's raw output is pinned by the
// standard, but std::normal_distribution / uniform_real_distribution are not,
// so all distributions here are built from raw bits by hand. Two Rng objects
// constructed with the same seed produce bit-identical sequences everywhere.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), engine_(seed) {}

  uint64_t seed() const { return seed_; }

  // Independent substream for a named purpose, unaffected by how much of this
  // stream has been consumed.
  Rng stream(std::string_view tag) const { return Rng(derive_seed(seed_, tag)); }

  uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive. Uses rejection sampling so
  // the result is exactly uniform.
  int64_t uniform_int(int64_t n);

  // Standard normal via Box-Muller. Each call consumes exactly two raw draws;
  // no spare is cached, so the draw count per call is fixed.
  double normal();

  void fill_normal(double* out, int64_t n);
  void fill_uniform(double* out, int64_t n, double lo = 0.0, double hi = 1.0);

 private:
  uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace motionsep
