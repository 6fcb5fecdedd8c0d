#include "motionsep/rng.hpp"

#include <cmath>
#include <numbers>

namespace motionsep {

uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t derive_seed(uint64_t seed, std::string_view tag) {
  // FNV-1a over the tag, then splitmix64 mixing with the master seed. The
  // double mix keeps adjacent master seeds from producing related streams.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  uint64_t state = seed ^ h;
  uint64_t a = splitmix64(state);
  uint64_t b = splitmix64(state);
  return a ^ (b << 1);
}

int64_t Rng::uniform_int(int64_t n) {
  const auto un = static_cast<uint64_t>(n);
  const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<int64_t>(x % un);
}

double Rng::normal() {
  // u1 in (0, 1] so the log is finite; u2 in [0, 1).
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void Rng::fill_normal(double* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = normal();
}

void Rng::fill_uniform(double* out, int64_t n, double lo, double hi) {
  for (int64_t i = 0; i < n; ++i) out[i] = uniform(lo, hi);
}

}  // namespace motionsep
