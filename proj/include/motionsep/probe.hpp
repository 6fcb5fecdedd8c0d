#pragma once

// Analysis layer: motion/appearance metrics over clips and hidden-state
// traces.  Everything here is read-only with respect to models — the probe
// consumes rendered or generated clips plus traces captured during sampling
// and turns them into the numbers the ablation tables report.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "motionsep/diffusion.hpp"
#include "motionsep/net.hpp"
#include "motionsep/synthvid.hpp"
#include "motionsep/tensor.hpp"

namespace motionsep::probe {

// ---------------------------------------------------------------------------
// Features.
// ---------------------------------------------------------------------------

// Motion descriptor of a (frames, h, w, c) tensor: for every adjacent frame
// pair and every cell of a g_eff x g_eff spatial grid (g_eff = min(grid, h, w)),
// the mean and the population variance of the temporal difference pooled over
// the cell's pixels and channels.  Length (frames-1) * g_eff^2 * 2.  Built
// from frame differences only, so a constant brightness offset leaves the
// features bit-identical and a static clip maps to the zero vector.
Tensor motion_features(const Tensor& frames, int grid);

// motion_features applied to a rendered clip's pixel data.
Tensor motion_features(const synthvid::VideoClip& clip, int grid);

// Reshape one traced hidden state (1, frames, tokens, channels) back onto its
// spatial token grid for level `level` of `cfg` and extract motion features.
// Throws ShapeError if the token count does not match the level's grid.
Tensor trace_features(const net::UNetConfig& cfg, const net::TraceEntry& entry,
                      int grid);

// ---------------------------------------------------------------------------
// Linear probe (binary logistic classifier).
// ---------------------------------------------------------------------------

struct LinearProbe {
  Tensor w;           // (d) weights in standardized space
  double b = 0.0;     // bias
  Tensor mu;          // (d) feature means used for standardization
  Tensor sigma;       // (d) feature scales (floored away from zero)

  // w . (x - mu)/sigma + b
  double margin(const Tensor& features) const;
};

struct ProbeEval {
  int label = 0;            // 1 if margin > 0 else 0
  double confidence = 0.0;  // sigmoid(margin) = P(class 1)
};

// Fit a logistic-regression probe by deterministic full-batch gradient
// descent on standardized features (zero init, fixed iteration count, small
// L2 ridge for stability on separable data).  Requires at least 8 samples in
// each class (ConfigError otherwise); all feature vectors must share one
// length (ShapeError otherwise).  Degenerate data — some feature dimension
// non-finite, or the two classes identical as sets of points — is rejected
// with ConfigError.
LinearProbe fit_probe(const std::vector<Tensor>& class0,
                      const std::vector<Tensor>& class1);

ProbeEval probe_eval(const LinearProbe& probe, const Tensor& features);

// ---------------------------------------------------------------------------
// Motion judge: one-vs-rest over the five base motions.
// ---------------------------------------------------------------------------

// Clip descriptor the judge classifies on: the grid features (length-
// normalized, so contrast cancels) concatenated with foreground-trajectory
// statistics — per-step centroid displacements, speeds, and relative mass
// changes plus summary scalars (mean speed, net/total displacement, turning,
// signed curl, vertical dominance, mass variation, net displacement).  The
// trajectory block separates the motion vocabulary almost by construction:
// slides never reverse, bounces are vertical, orbits have consistent curl,
// grow-shrink barely moves but pulses in mass.
Tensor judge_features(const synthvid::VideoClip& clip, int grid);
Tensor judge_features(const Tensor& frames, int grid);

struct JudgeConfig {
  int frames = 6;
  int height = 16;
  int width = 16;
  int grid = 4;                    // feature grid
  int train_per_motion = 96;       // rendered training clips per motion
  int holdout_per_motion = 16;     // rendered holdout clips per motion
  double min_holdout_acc = 0.95;   // validity gate
  std::uint64_t seed = 7;
};

class MotionJudge {
 public:
  // Train one-vs-rest probes on freshly rendered clips of all five motions
  // and gate on holdout accuracy: if the judge cannot reach
  // cfg.min_holdout_acc on held-out renders it is not a trustworthy metric
  // and training throws MetricGateError.
  static MotionJudge train(const JudgeConfig& cfg);

  // argmax over per-motion margins; `classify_features` expects a
  // judge_features() vector.
  synthvid::MotionLabel classify(const synthvid::VideoClip& clip) const;
  synthvid::MotionLabel classify_features(const Tensor& features) const;

  // Fraction of clips classified as `target`.
  double accuracy(const std::vector<synthvid::VideoClip>& clips,
                  synthvid::MotionLabel target) const;

  double holdout_accuracy() const { return holdout_accuracy_; }
  const JudgeConfig& config() const { return cfg_; }

 private:
  JudgeConfig cfg_;
  std::vector<LinearProbe> probes_;  // one per MotionLabel, in all_motions() order
  double holdout_accuracy_ = 0.0;
};

// ---------------------------------------------------------------------------
// Appearance metrics.
// ---------------------------------------------------------------------------

struct AppearanceEstimate {
  synthvid::Rgb fg{0, 0, 0};       // estimated foreground color
  synthvid::ShapeKind shape = synthvid::ShapeKind::kCircle;
  double shape_iou = 0.0;          // mask IoU of the winning shape template
  double fill = 0.0;               // diagnostic: mask fill ratio of the bbox
  double width_ratio = 0.0;        // diagnostic: top/bottom mean mask width
  int mask_pixels = 0;             // size of the largest foreground component
};

// Estimate the foreground appearance of a clip: background = per-channel
// median of the frame with the largest foreground, foreground mask = largest
// connected component of pixels far from background, color = mean over
// strong mask pixels.  The shape is identified by template matching: each
// vocabulary shape is rasterized with the renderer's own geometry over a
// local grid of centers and sizes seeded from the mask's centroid and area,
// and the best mask IoU wins — on a clean render the true shape reproduces
// the mask exactly (IoU 1.0).
AppearanceEstimate estimate_appearance(const synthvid::VideoClip& clip);
AppearanceEstimate estimate_appearance(const Tensor& frames);

// How well the clip realizes `target`: 0.5 * graded foreground-color match
// (1 at exact color, falling to 0 at rgb distance kColorFullMiss) + 0.5 *
// shape-detector agreement (1 or 0).  In [0, 1].
double appearance_alignment(const synthvid::VideoClip& clip,
                            const synthvid::AppearanceSpec& target);

// Mean detect_artifact score over the clips: how strongly the reference-set
// artifact persists in generated videos.  In [0, 1].
double appearance_leak(const std::vector<synthvid::VideoClip>& clips,
                       const synthvid::ArtifactSpec& artifact, int window = 1);

// Mean cosine similarity between flattened consecutive frames of the clip's
// [-1, 1] signal.  Both frames zero -> 1 (nothing changed); exactly one
// zero -> 0.  In [-1, 1], and 1.0 for a static clip.
double temporal_consistency(const synthvid::VideoClip& clip);
double temporal_consistency(const Tensor& frames);

// ---------------------------------------------------------------------------
// Hidden-state trace comparison.
// ---------------------------------------------------------------------------

struct SimilarityPoint {
  int level = 0;
  int step = 0;        // diffusion step t the forward ran at
  double cosine = 0.0;
};

struct SimilarityProfile {
  std::vector<SimilarityPoint> points;  // ordered as in the traces
  double mean() const;
  double mean_at_level(int level) const;
};

// Cosine similarity between two traces, entry by entry.  Entries are matched
// positionally and must agree on (level, step) — a key mismatch is a
// ConfigError, a state-shape mismatch a ShapeError.  Both states flatten to
// vectors; two zero vectors give cosine 1, exactly one zero gives 0.
SimilarityProfile cosine_profile(const net::HiddenStateTrace& a,
                                 const net::HiddenStateTrace& b);

// Run the ancestral sampler over `model` (with `plan`/`skip` applied and
// `labels` as conditioning) while capturing the hidden-state trace at every
// step.  Returns the generated signal (1, frames, h, w, 3) and the trace.
struct TracedSample {
  Tensor signal;
  net::HiddenStateTrace trace;
};
TracedSample trace_sampling(const net::UNet& model,
                            const adapters::InjectionPlan* plan,
                            const net::SkipSettings& skip,
                            const net::CondLabels& labels,
                            const diffusion::NoiseSchedule& sched, int frames,
                            std::uint64_t seed,
                            const std::string& variant = "");

// ---------------------------------------------------------------------------
// Metric suite.
// ---------------------------------------------------------------------------

struct ClipMetrics {
  int index = 0;
  bool motion_correct = false;
  double app_align = 0.0;
  double app_leak = 0.0;          // detect_artifact score of this clip
  double temporal_consist = 0.0;
};

struct MetricsReport {
  std::string variant;
  std::uint64_t config_hash = 0;
  double motion_acc = 0.0;        // mean of breakdown[i].motion_correct
  double app_align = 0.0;         // mean of breakdown[i].app_align
  double app_leak = 0.0;          // mean of breakdown[i].app_leak
  double temporal_consist = 0.0;  // mean of breakdown[i].temporal_consist
  std::vector<ClipMetrics> breakdown;
};

struct MetricSuiteOptions {
  std::string variant;
  std::uint64_t config_hash = 0;
  synthvid::MotionLabel motion = synthvid::MotionLabel::kBounce;  // expected motion
  std::vector<synthvid::AppearanceSpec> targets;  // per clip, or single shared
  const synthvid::ArtifactSpec* artifact = nullptr;  // required for app_leak
  int window = 1;                                    // artifact search window
};

// Score a batch of generated clips against prompts.  `targets` must hold one
// spec per clip or exactly one shared spec (ShapeError otherwise); a missing
// artifact spec is a ConfigError because app_leak would be meaningless.
MetricsReport metric_suite(const std::vector<synthvid::VideoClip>& clips,
                           const MotionJudge& judge,
                           const MetricSuiteOptions& opt);

// ---------------------------------------------------------------------------
// CSV writers.
// ---------------------------------------------------------------------------

// Long format: variant,config_hash,metric,value — one row per headline
// metric of each report.
void write_report_csv(const std::filesystem::path& path,
                      const std::vector<MetricsReport>& reports);

// level,step,cosine rows, one per profile point, preceded by a header.
void write_profile_csv(const std::filesystem::path& path,
                       const SimilarityProfile& profile);

// Human-readable table of the same headline metrics, one block per report.
void write_summary(const std::filesystem::path& path,
                   const std::vector<MetricsReport>& reports);

// Graded color match used inside appearance_alignment, exposed for tests:
// 1 - min(1, |a - b|_2 / kColorFullMiss).
double color_match(const synthvid::Rgb& a, const synthvid::Rgb& b);

// RGB distance at which a foreground color counts as a complete miss: the
// minimum pairwise distance within the foreground palette (blue vs cyan,
// ~0.415), so an estimate sitting on the nearest wrong palette color scores
// ~0 while small estimation error barely moves the score.
inline constexpr double kColorFullMiss = 0.41;

}  // namespace motionsep::probe
