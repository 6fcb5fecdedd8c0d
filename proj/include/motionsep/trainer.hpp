#pragma once

#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "motionsep/adapters.hpp"
#include "motionsep/config.hpp"
#include "motionsep/diffusion.hpp"
#include "motionsep/net.hpp"
#include "motionsep/synthvid.hpp"

namespace motionsep::trainer {

// One supervised example in model signal space.
struct TrainItem {
  Tensor z0;  // (f, h, w, 3), values in [-1, 1]
  net::CondLabels labels;
};

// Clips -> training items. With trigger_motion the motion id is replaced by
// the custom trigger slot: reference clips teach a held-out concept, so they
// must not be labeled with a pretrained motion row.
std::vector<TrainItem> make_items(const std::vector<synthvid::VideoClip>& clips,
                                  bool trigger_motion);

// Plain momentum-free SGD: w -= lr * grad for every parameter that
// accumulated a gradient this step; consumed gradients are cleared.
void sgd_step(const std::vector<ag::NodeRef>& params, double lr);

void set_requires_grad(const std::vector<ag::NodeRef>& params, bool on);

// Sum of squared gradient entries over a parameter set (0 where has_grad is
// false); lets tests assert that frozen sets never receive gradient.
double grad_norm_sq(const std::vector<ag::NodeRef>& params);

// RAII freeze: disables gradient tracking on construction, restores the
// previous flags on destruction.
class FreezeGuard {
 public:
  explicit FreezeGuard(const std::vector<ag::NodeRef>& params);
  ~FreezeGuard();
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<ag::NodeRef> params_;
  std::vector<char> saved_;
};

// Per-phase knobs. One TrainConfig describes one phase; run_customization
// distills three of them from a RunConfig.
struct TrainConfig {
  double lr = 1e-3;
  int steps = 100;
  int batch = 4;
  uint64_t seed = 7;
  std::string plan = "tap";      // temporal-phase layout (ablation vocabulary)
  bool ah_in_training = false;   // AH active while training vs post-processing
  double beta = 1.1;             // AH strength when ah_in_training
  int rank = 4;
  double scale = 1.0;
  diffusion::ScheduleConfig sched;
  int ckpt_every = 0;  // pretraining snapshot cadence; 0 = final only

  void validate() const;  // positive lr/steps/batch, rank >= 1, valid schedule
};

double median(std::vector<double> values);

// One phase's outcome. The decile medians feed the loss-decrease property:
// median over the last 10% of steps < median over the first 10%.
struct PhaseReport {
  std::vector<double> loss_curve;  // per-step training loss
  double val_loss = std::numeric_limits<double>::quiet_NaN();  // pretraining only

  double final_loss() const;
  double first_decile_median() const;
  double last_decile_median() const;
};

// Progress callback: (completed step, total steps, loss at that step).
using StepLogger = std::function<void(int, int, double)>;

// Phase 0: every parameter trainable, denoising loss over corpus batches with
// uniform t in [1, T]. Runs with vanilla skip connections regardless of the
// model's configured sampling default. A non-finite loss aborts with
// TrainingDivergedError. When val is nonempty, val_loss holds the final
// deterministic validation loss (evenly spaced t, fixed noise draw). With
// ckpt_every > 0 and a snapshot_dir, intermediate checkpoints are written as
// base-<step>.msc.
PhaseReport pretrain_base(net::UNet& model, const std::vector<TrainItem>& corpus,
                          const TrainConfig& cfg, const std::vector<TrainItem>& val = {},
                          const std::filesystem::path& snapshot_dir = {},
                          const StepLogger& log = {});

// Phase 1: spatial-path LoRA fitting. Each step draws one uniformly random
// frame per sampled clip and trains on the resulting one-frame clips; only
// the plan's parameters receive gradient (the base model is frozen for the
// duration). The plan must be a SpatialPath plan built against this model.
PhaseReport train_spatial_path(const net::UNet& model, adapters::InjectionPlan& plan,
                               const std::vector<TrainItem>& refset, const TrainConfig& cfg,
                               const StepLogger& log = {});

// Phase 2: temporal-path LoRA fitting over full clips. The plan must target
// temporal transformers (TAP, FullTemporal, or Custom). spatial_frozen, when
// present, is injected alongside but receives no gradient. Training runs with
// vanilla skips unless cfg.ah_in_training, which switches the skip source to
// the appearance highway at strength cfg.beta.
PhaseReport train_temporal_path(const net::UNet& model, adapters::InjectionPlan& plan,
                                const adapters::InjectionPlan* spatial_frozen,
                                const std::vector<TrainItem>& refset, const TrainConfig& cfg,
                                const StepLogger& log = {});

// Union of two plans for a joint forward pass; entries keep their own
// adapters and scales. In-memory only, never persisted. Throws PlanError if
// the plans share a (path, slot) target.
adapters::InjectionPlan merge_plans(const adapters::InjectionPlan& a,
                                    const adapters::InjectionPlan& b);

// Atomic writes: temp file in the destination directory, then rename.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
void save_model_atomic(const net::UNet& model, const std::filesystem::path& path);
void save_plan_atomic(const adapters::InjectionPlan& plan, const std::filesystem::path& path);

// Everything run_customization leaves in the output directory. spatial is a
// training artifact only: the inference bundle is base + temporal, the
// spatial adapters are dropped after the temporal phase is supervised.
struct CheckpointSet {
  std::filesystem::path dir;
  std::filesystem::path base;         // base.msc (model kind)
  std::filesystem::path spatial;      // spatial.msc (adapter kind)
  std::filesystem::path temporal;     // temporal.msc (adapter kind)
  std::filesystem::path manifest;     // manifest.txt
  std::filesystem::path config_file;  // config.cfg (canonical effective config)
  PhaseReport pretrain_report;
  PhaseReport spatial_report;
  PhaseReport temporal_report;
  uint64_t config_hash = 0;
};

struct RunOptions {
  // Require and reuse an existing checkpoint instead of training the phase;
  // missing file -> DependencyError (phases run in a fixed order).
  bool reuse_base = false;
  bool reuse_spatial = false;
  // How far to run: 0 stops after pretraining, 1 after the spatial path,
  // 2 runs all three phases. Partial runs still write config.cfg and the
  // loss curves of the phases they executed; the manifest is only written
  // by full runs, and it marks reused phases explicitly.
  int max_phase = 2;
  StepLogger log;                                // per-step progress
  std::function<void(const std::string&)> info;  // phase-level messages
};

// The full dual-path procedure. Builds the corpus (held-out motion excluded)
// and the artifact-carrying reference set, then pretrains, fits the spatial
// path, and fits the temporal path. Each phase resumes from the previous
// phase's checkpoint as written, so replaying the manifest reproduces all
// three checkpoints bit-identically.
CheckpointSet run_customization(const config::RunConfig& rc, const RunOptions& opt = {});

// The pointers a finished run leaves behind, as read back from manifest.txt.
struct Manifest {
  uint64_t schema = 0;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
  std::string config_file;  // paths relative to the manifest's directory
  std::string base;
  std::string spatial;
  std::string temporal;

  static Manifest read(const std::filesystem::path& path);
};

}  // namespace motionsep::trainer
