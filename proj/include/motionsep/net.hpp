#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "motionsep/adapters.hpp"
#include "motionsep/autograd.hpp"
#include "motionsep/synthvid.hpp"

namespace motionsep::net {

// How the decoder's skip connections are fed. Vanilla forwards each encoder
// block's final (post-temporal) output; the appearance highway forwards the
// pre-temporal spatial output instead, scaled by beta.
enum class SkipMode { kVanilla, kAppearanceHighway };

SkipMode skip_mode_from_string(std::string_view s);
std::string to_string(SkipMode m);

struct UNetConfig {
  int levels = 2;
  int base_channels = 24;  // channels double per level
  int heads = 2;
  int patch = 2;
  int height = 16;
  int width = 16;
  int max_frames = 8;
  int time_embed_dim = 32;
  int cond_embed_dim = 24;
  // Zero-init the temporal output projections (attention W_O and
  // feed-forward W2) so a fresh temporal path is an exact identity.
  bool temporal_zero_init = true;

  // Default inference-time skip behavior; callers can override per forward.
  SkipMode skip_mode = SkipMode::kVanilla;
  double beta = 1.1;
  double vanilla_skip_scale = 1.0;   // control knob for scale-vs-content probes
  uint32_t ah_level_mask = ~0u;      // which decoder levels rewire under AH

  void validate() const;
  int channels_at(int level) const { return base_channels << level; }
  int tokens_y() const { return height / patch; }
  int tokens_x() const { return width / patch; }
};

// Condition labels for one clip: motion id over the extended vocabulary
// (the closed labels plus one trainable "custom motion" trigger slot),
// shape, and palette bins for fg/bg colors.
struct CondLabels {
  int motion_id = 0;
  synthvid::ShapeKind shape = synthvid::ShapeKind::kCircle;
  int fg_bin = 0;
  int bg_bin = 0;
};
constexpr int kMotionVocab = synthvid::kNumMotions + 1;
constexpr int kCustomMotionId = synthvid::kNumMotions;  // the trigger slot

CondLabels labels_for(const synthvid::ClipSpec& spec);

// Skip-connection behavior for one forward pass.
struct SkipSettings {
  SkipMode mode = SkipMode::kVanilla;
  double beta = 1.1;
  double vanilla_scale = 1.0;
  uint32_t level_mask = ~0u;
};

// Captured decoder inputs: the merged skip+trunk hidden state right after
// the learned projection, per decoder level.
struct TraceEntry {
  int level = 0;
  int step = 0;       // sampler timestep tag (0 for single forwards)
  Tensor state;       // (b, f, tokens, channels)
};
struct HiddenStateTrace {
  std::string variant;
  std::vector<TraceEntry> entries;
};

// Attention row-stochasticity bookkeeping, accumulated across calls.
struct AttentionStats {
  int64_t rows = 0;
  double max_row_dev = 0.0;  // max |sum(weights) - 1| over all rows
};

struct ForwardOptions {
  const adapters::InjectionPlan* plan = nullptr;  // nullptr -> frozen base
  std::optional<SkipSettings> skip;               // default: config values
  HiddenStateTrace* trace = nullptr;
  int trace_step = 0;
  AttentionStats* attn_stats = nullptr;
};

// Multi-head attention over (B, n, d) token batches, with optional LoRA
// adapters on the Q/K/V projections. Exposed as a free function so tests can
// drive it directly.
struct AttentionWeights {
  ag::NodeRef wq, wk, wv, wo;  // each (d, d)
};
struct AttentionAdapters {
  const adapters::LoraAdapter* q = nullptr;
  const adapters::LoraAdapter* k = nullptr;
  const adapters::LoraAdapter* v = nullptr;
};
ag::NodeRef multihead_attention(const ag::NodeRef& xq, const ag::NodeRef& xkv,
                                const AttentionWeights& w, int heads,
                                const AttentionAdapters& ad = {},
                                AttentionStats* stats = nullptr);

// Sinusoidal timestep embedding, shape (dim).
Tensor time_embedding(int t, int dim);

class UNet {
 public:
  UNet(UNetConfig config, uint64_t seed);

  const UNetConfig& config() const { return config_; }

  // All trainable parameters in registration order.
  const std::vector<ag::NodeRef>& parameters() const { return params_; }
  ag::NodeRef param(const std::string& name) const;  // throws PlanError if absent
  void zero_grads() const;

  // Valid injection-plan paths ("enc0.temporal", "dec1.spatial", ...).
  std::vector<std::string> temporal_paths() const;
  std::vector<std::string> spatial_paths() const;
  // The frozen weight an adapter at (path, slot) attaches to.
  ag::NodeRef target_weight(const std::string& path, adapters::Slot slot) const;

  // Builds a validated plan against this model's shapes.
  adapters::InjectionPlan build_plan(const adapters::PlanPreset& preset, int rank, double scale,
                                     uint64_t seed) const;

  // Conditioning tokens for a batch, (b, 4, cond_embed_dim); rows are
  // trainable embedding-table lookups (motion, shape, fg, bg).
  ag::NodeRef cond_tokens(const std::vector<CondLabels>& labels) const;

  // Noise prediction. z: (b, f, h, w, 3) noisy input, t: per-clip timestep.
  ag::NodeRef forward(const ag::NodeRef& z, const std::vector<int>& t,
                      const std::vector<CondLabels>& labels,
                      const ForwardOptions& opts = {}) const;

  // Graph-free convenience wrapper.
  Tensor predict(const Tensor& z, const std::vector<int>& t,
                 const std::vector<CondLabels>& labels, const ForwardOptions& opts = {}) const;

  void save(const std::filesystem::path& path) const;
  static UNet load(const std::filesystem::path& path);

  // Copies parameter values (not structure) from another net with an
  // identical config; used to restore training state from checkpoints.
  void copy_values_from(const UNet& other);

 private:
  ag::NodeRef register_param(const std::string& name, Tensor init);
  void build_params(Rng& rng);

  UNetConfig config_;
  std::vector<ag::NodeRef> params_;
  std::map<std::string, ag::NodeRef> by_name_;
};

// Adapter checkpoint IO: the plan's metadata plus every entry's A/B pair.
void save_plan(const std::filesystem::path& path, const adapters::InjectionPlan& plan);
adapters::InjectionPlan load_plan(const std::filesystem::path& path, const UNet& model);

}  // namespace motionsep::net
