#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "motionsep/autograd.hpp"
#include "motionsep/rng.hpp"
#include "motionsep/tensor.hpp"

namespace motionsep::adapters {

// Which weight matrix inside a transformer an adapter attaches to.
enum class Slot { kQ, kK, kV, kFF1, kFF2 };

Slot slot_from_string(std::string_view s);
std::string to_string(Slot s);

// Low-rank adapter for a frozen (d_out, d_in) weight. A carries the small
// random init, B starts at zero so an untrained adapter is an exact no-op.
struct LoraAdapter {
  ag::NodeRef A;  // (rank, d_in)
  ag::NodeRef B;  // (d_out, rank)
  int rank = 0;
  double scale = 1.0;

  static LoraAdapter init(int d_out, int d_in, int rank, double scale, Rng& rng,
                          const std::string& name);

  // W x + scale * B (A x) on top of the base projection of x.
  ag::NodeRef apply(const ag::NodeRef& x, const ag::NodeRef& w) const;

  // Dense merged weight W + scale * B A, shape (d_out, d_in).
  Tensor merged(const Tensor& w) const;

  // scale * B A alone, shape (d_out, d_in).
  Tensor delta() const;

  int64_t d_in() const { return A->value.dim(1); }
  int64_t d_out() const { return B->value.dim(0); }
};

// Preset injection layouts. SpatialPath adapts spatial self-attention Q/K/V
// in every block; TAP adapts only the temporal attention Key; FullTemporal
// adapts temporal Q/K/V and both feed-forward matrices; Custom adapts a
// caller-chosen slot subset of the temporal transformers.
enum class PlanMode { kSpatialPath, kTap, kFullTemporal, kCustom };

PlanMode plan_mode_from_string(std::string_view s);
std::string to_string(PlanMode m);

// A (block path, slot) target plus its adapter. Paths name transformer
// sub-modules, e.g. "enc0.temporal" or "dec1.spatial".
struct PlanEntry {
  std::string path;
  Slot slot = Slot::kK;
  LoraAdapter adapter;
};

struct InjectionPlan {
  PlanMode mode = PlanMode::kTap;
  int rank = 0;
  double scale = 1.0;
  std::vector<PlanEntry> entries;

  // The adapter attached to (path, slot), or nullptr.
  const LoraAdapter* find(std::string_view path, Slot slot) const;
  std::vector<ag::NodeRef> parameters() const;
  int64_t parameter_count() const;
  void zero_grads() const;
};

// Named shorthand for the ablation vocabulary: tap | full | q | k | v | ff |
// qk. "k" is TAP; the rest are Custom slot subsets (except full).
struct PlanPreset {
  PlanMode mode = PlanMode::kTap;
  std::vector<Slot> custom_slots;
};
PlanPreset plan_preset_from_string(std::string_view s);

}  // namespace motionsep::adapters
