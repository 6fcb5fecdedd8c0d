#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "motionsep/diffusion.hpp"
#include "motionsep/net.hpp"
#include "motionsep/synthvid.hpp"

namespace motionsep::config {

uint64_t fnv1a64(std::string_view text);

// Flat structured config text: "key = value" lines under [section] headers,
// '#' or ';' comments, and a mandatory top-level "schema = N" line. Every
// key present in the file must be consumed by the loader; leftovers are
// reported as ConfigError so typos cannot silently fall back to defaults.
class ConfigFile {
 public:
  static ConfigFile parse_file(const std::filesystem::path& path);
  static ConfigFile parse_string(const std::string& text, const std::string& origin = "<string>");

  bool has(const std::string& section, const std::string& key) const;
  std::string get_string(const std::string& section, const std::string& key,
                         const std::string& fallback) const;
  int get_int(const std::string& section, const std::string& key, int fallback) const;
  uint64_t get_u64(const std::string& section, const std::string& key, uint64_t fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;

  // Throws ConfigError naming every key that was never read.
  void check_consumed() const;

 private:
  struct Entry {
    std::string value;
    mutable bool consumed = false;
  };
  const Entry* find(const std::string& section, const std::string& key) const;

  std::string origin_;
  std::map<std::string, std::map<std::string, Entry>> data_;
};

inline constexpr int kSchemaVersion = 1;

// The complete description of one run. Defaults are a working desk-scale
// experiment; a config file overrides fields; the canonical form (and hash)
// covers the effective values, defaulted or not.
struct RunConfig {
  uint64_t seed = 7;
  std::string out_dir = "runs/out";

  struct Synth {
    int frames = 6;
    int height = 16;
    int width = 16;
    int corpus_per_motion = 16;      // pretraining clips per non-held-out motion
    int refset_count = 4;            // customization reference clips
    std::string custom_motion = "zigzag";  // held out from pretraining
    int artifact_row = 0;
    int artifact_col = 11;
    double artifact_contrast = 0.9;
  } synth;

  net::UNetConfig net;  // height/width/max_frames mirror the synth section
  diffusion::ScheduleConfig sched;

  struct Pretrain {
    double lr = 1e-3;
    int steps = 2000;
    int batch = 4;
    int val_clips = 8;
    double loss_threshold = 0.5;
    int ckpt_every = 0;  // 0: final checkpoint only
  } pretrain;

  struct Spatial {
    double lr = 1e-3;
    int steps = 400;
    int batch = 4;
    int rank = 4;
    double scale = 1.0;
  } spatial;

  struct Temporal {
    double lr = 1e-3;
    int steps = 1000;
    int batch = 4;
    int rank = 4;
    double scale = 1.0;
    std::string plan = "tap";
    bool ah_in_training = false;  // Table-3 knob: AH active while training
  } temporal;

  struct Sample {
    int tau = 30;            // PLI threshold; default round(0.3 T)
    int snapshot_every = 0;  // 0: no snapshots
  } sample;

  struct Probe {
    int eval_specs = 3;  // held-out appearance specs in the prompt grid
    int window = 1;      // artifact detector search window
    int grid = 4;        // motion-feature cells per axis
    int judge_train_per_motion = 96;
    int judge_holdout_per_motion = 16;
  } probe;

  static RunConfig defaults() { return RunConfig(); }
  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_string(const std::string& text, const std::string& origin = "<string>");

  void validate() const;  // throws ConfigError on any out-of-range field

  // Effective config as config-file text, fixed key order; hash is FNV-1a
  // over exactly this text. out_dir is excluded: two runs that differ only
  // in where they write results are the same experiment.
  std::string canonical() const;
  uint64_t hash() const { return fnv1a64(canonical()); }
  std::string hash_hex() const;  // 16 lowercase hex digits

  // Phase-scoped fingerprints: hashes of canonical-text prefixes. Training
  // is deterministic, so two configs with equal pretrain_hash() produce
  // bit-identical base checkpoints (same data, net, schedule and pretrain
  // knobs), equal spatial_hash() additionally pins the spatial adapters, and
  // equal train_hash() pins all three checkpoints. Used to decide when a
  // stored checkpoint can stand in for retraining a phase. Conservative: the
  // prefixes include every field up to the cut, whether or not the phase
  // reads it.
  uint64_t pretrain_hash() const;  // canonical text before [spatial]
  uint64_t spatial_hash() const;   // canonical text before [temporal]
  uint64_t train_hash() const;     // canonical text before [sample]

  synthvid::ArtifactSpec artifact() const;
  synthvid::MotionLabel custom_motion_label() const;
};

}  // namespace motionsep::config
