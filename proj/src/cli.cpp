#include "motionsep/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <utility>

#include "motionsep/adapters.hpp"
#include "motionsep/diffusion.hpp"
#include "motionsep/errors.hpp"
#include "motionsep/net.hpp"
#include "motionsep/rng.hpp"
#include "motionsep/synthvid.hpp"
#include "motionsep/tensor.hpp"

namespace motionsep::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string hex16(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void say(const InfoLog& info, const std::string& msg) {
  if (info) info(msg);
}

// ---------------------------------------------------------------------------
// Flag-value parsing. The std:: converters accept junk suffixes and negative
// wraparound, so every number is checked for full consumption.
// ---------------------------------------------------------------------------

uint64_t parse_flag_u64(const std::string& s, const std::string& flag) {
  try {
    if (s.empty() || s[0] == '-') throw std::invalid_argument("negative");
    size_t pos = 0;
    const unsigned long long v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("suffix");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("flag '" + flag + "' expects an unsigned integer, got '" + s + "'");
  }
}

int parse_flag_int(const std::string& s, const std::string& flag) {
  try {
    size_t pos = 0;
    const int v = std::stoi(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("suffix");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("flag '" + flag + "' expects an integer, got '" + s + "'");
  }
}

double parse_flag_double(const std::string& s, const std::string& flag) {
  try {
    size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size() || !std::isfinite(v)) throw std::invalid_argument("suffix");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("flag '" + flag + "' expects a finite number, got '" + s + "'");
  }
}

// ---------------------------------------------------------------------------
// Shared run plumbing.
// ---------------------------------------------------------------------------

fs::path train_dir(const config::RunConfig& rc) { return fs::path(rc.out_dir) / "train"; }

net::SkipSettings skip_from(const net::UNetConfig& n) {
  net::SkipSettings s;
  s.mode = n.skip_mode;
  s.beta = n.beta;
  s.vanilla_scale = n.vanilla_skip_scale;
  s.level_mask = n.ah_level_mask;
  return s;
}

// The untouched pretrained model: vanilla skips at its configured scale.
net::SkipSettings base_skip(const net::UNet& model) {
  net::SkipSettings s;
  s.mode = net::SkipMode::kVanilla;
  s.vanilla_scale = model.config().vanilla_skip_scale;
  return s;
}

net::CondLabels labels_for_spec(const synthvid::AppearanceSpec& a, int motion_id) {
  net::CondLabels l;
  l.motion_id = motion_id;
  l.shape = a.shape;
  l.fg_bin = synthvid::nearest_fg_bin(a.fg);
  l.bg_bin = synthvid::nearest_bg_bin(a.bg);
  return l;
}

diffusion::EpsModel eps_model(const net::UNet& model, const adapters::InjectionPlan* plan,
                              const net::SkipSettings& skip, const net::CondLabels& labels) {
  return [&model, plan, skip, labels](const Tensor& zt, int t) {
    net::ForwardOptions opts;
    opts.plan = plan;
    opts.skip = skip;
    const auto b = static_cast<size_t>(zt.dim(0));
    return model.predict(zt, std::vector<int>(b, t), std::vector<net::CondLabels>(b, labels),
                         opts);
  };
}

// One generated clip per eval spec. All commands and suites share the
// "eval-clip-<i>" seed stream, so every variant denoises from the same
// initial noise and the comparisons are paired.
std::vector<synthvid::VideoClip> sample_eval_clips(
    const net::UNet& model, const adapters::InjectionPlan* plan, const net::SkipSettings& skip,
    int tau, const config::RunConfig& rc, const std::vector<synthvid::AppearanceSpec>& specs) {
  const diffusion::NoiseSchedule sched(rc.sched);
  const Shape shape{1, rc.synth.frames, rc.synth.height, rc.synth.width, 3};
  std::vector<synthvid::VideoClip> clips;
  clips.reserve(specs.size());
  for (size_t i = 0; i < specs.size(); ++i) {
    const net::CondLabels labels = labels_for_spec(specs[i], net::kCustomMotionId);
    diffusion::PliOptions po;
    po.tau = tau;
    const Tensor z = diffusion::sample_pli(
        sched, shape, eps_model(model, plan, skip, labels),
        eps_model(model, nullptr, base_skip(model), labels),
        derive_seed(rc.seed, "eval-clip-" + std::to_string(i)), po);
    clips.push_back(diffusion::to_video_clip(z));
  }
  return clips;
}

probe::MetricsReport run_metrics(const std::vector<synthvid::VideoClip>& clips,
                                 const probe::MotionJudge& judge, const config::RunConfig& rc,
                                 uint64_t config_hash, const std::string& variant,
                                 const std::vector<synthvid::AppearanceSpec>& targets) {
  probe::MetricSuiteOptions mo;
  mo.variant = variant;
  mo.config_hash = config_hash;
  mo.motion = rc.custom_motion_label();
  mo.targets = targets;
  const synthvid::ArtifactSpec art = rc.artifact();
  mo.artifact = &art;
  mo.window = rc.probe.window;
  return probe::metric_suite(clips, judge, mo);
}

std::string metrics_line(const std::string& label, const probe::MetricsReport& r) {
  char buf[160];
  std::snprintf(buf, sizeof(buf),
                "%s: motion_acc=%.4f app_align=%.4f app_leak=%.4f temporal_consist=%.4f",
                label.c_str(), r.motion_acc, r.app_align, r.app_leak, r.temporal_consist);
  return buf;
}

// ---------------------------------------------------------------------------
// Checkpoint reuse. Training is deterministic, so a stored checkpoint whose
// config fingerprint matches is byte-identical to what retraining would
// produce; reuse is purely a time saving and never changes outputs.
// ---------------------------------------------------------------------------

struct ReuseFlags {
  bool base = false;
  bool spatial = false;
};

// What the config.cfg sidecar proves about the checkpoints next to it.
ReuseFlags detect_reuse(const config::RunConfig& rc, const fs::path& dir) {
  ReuseFlags r;
  const fs::path cfgf = dir / "config.cfg";
  if (!fs::exists(cfgf)) return r;
  config::RunConfig stored;
  try {
    stored = config::RunConfig::from_file(cfgf);
  } catch (const std::exception&) {
    return r;  // foreign or corrupt sidecar: train from scratch
  }
  r.base = fs::exists(dir / "base.msc") && stored.pretrain_hash() == rc.pretrain_hash();
  r.spatial =
      r.base && fs::exists(dir / "spatial.msc") && stored.spatial_hash() == rc.spatial_hash();
  return r;
}

// A finished run is marked by its manifest; the manifest is written last, and
// retraining removes it first, so a matching hash vouches for all three
// checkpoints.
bool finished_run(const config::RunConfig& rc, const fs::path& dir) {
  const fs::path mf = dir / "manifest.txt";
  if (!fs::exists(mf)) return false;
  try {
    const trainer::Manifest m = trainer::Manifest::read(mf);
    return m.config_hash == rc.hash() && fs::exists(dir / m.base) &&
           fs::exists(dir / m.spatial) && fs::exists(dir / m.temporal);
  } catch (const std::exception&) {
    return false;
  }
}

trainer::CheckpointSet stored_checkpoint_set(const config::RunConfig& rc) {
  trainer::CheckpointSet out;
  out.dir = fs::path(rc.out_dir);
  out.base = out.dir / "base.msc";
  out.spatial = out.dir / "spatial.msc";
  out.temporal = out.dir / "temporal.msc";
  out.manifest = out.dir / "manifest.txt";
  out.config_file = out.dir / "config.cfg";
  out.config_hash = rc.hash();
  return out;
}

// Run phases 0..max_phase of the customization pipeline into rc.out_dir,
// reusing whatever stored checkpoints the fingerprints endorse.
trainer::CheckpointSet customize_core(const config::RunConfig& rc, int max_phase,
                                      const InfoLog& info) {
  rc.validate();
  const fs::path dir(rc.out_dir);
  if (max_phase >= 2 && finished_run(rc, dir)) {
    say(info, "customize: " + dir.string() + " is up to date, reusing its checkpoints");
    return stored_checkpoint_set(rc);
  }
  const ReuseFlags r = detect_reuse(rc, dir);
  if (max_phase == 0 && r.base) {
    say(info, "pretrain: " + (dir / "base.msc").string() + " is up to date, reusing it");
    return stored_checkpoint_set(rc);
  }
  if (max_phase == 1 && r.spatial) {
    say(info, "spatial: " + (dir / "spatial.msc").string() + " is up to date, reusing it");
    return stored_checkpoint_set(rc);
  }
  // Invalidate the completion marker before touching anything so a partial
  // rerun can never masquerade as the finished run it is replacing.
  std::error_code ec;
  fs::remove(dir / "manifest.txt", ec);
  trainer::RunOptions opt;
  opt.max_phase = max_phase;
  opt.reuse_base = r.base;
  opt.reuse_spatial = max_phase >= 1 && r.spatial;
  opt.info = info;
  return trainer::run_customization(rc, opt);
}

// Within one ablation suite, variants that share a phase fingerprint share
// the phase's checkpoint: the first variant trains it, later variants import
// the files (byte-identical to retraining, by determinism).
struct TrainPool {
  fs::path dir;
  InfoLog info;
  std::map<uint64_t, fs::path> base_cache;     // pretrain_hash -> base.msc
  std::map<uint64_t, fs::path> spatial_cache;  // spatial_hash -> spatial.msc

  trainer::CheckpointSet ensure(config::RunConfig rc, const std::string& name, int max_phase) {
    rc.out_dir = (dir / name).string();
    const fs::path d(rc.out_dir);
    const bool done = max_phase >= 2 && finished_run(rc, d);
    if (!done) {
      ReuseFlags r = detect_reuse(rc, d);
      // Import the closest shared lineage: spatial implies base.
      const auto sp = spatial_cache.find(rc.spatial_hash());
      if (!r.spatial && max_phase >= 1 && sp != spatial_cache.end() &&
          sp->second != d / "spatial.msc") {
        const fs::path src = sp->second.parent_path();
        fs::create_directories(d);
        fs::copy_file(src / "base.msc", d / "base.msc", fs::copy_options::overwrite_existing);
        fs::copy_file(src / "spatial.msc", d / "spatial.msc",
                      fs::copy_options::overwrite_existing);
        fs::copy_file(src / "config.cfg", d / "config.cfg",
                      fs::copy_options::overwrite_existing);
        say(info, name + ": imported base + spatial checkpoints from " + src.string());
      } else if (!r.base) {
        const auto ba = base_cache.find(rc.pretrain_hash());
        if (ba != base_cache.end() && ba->second != d / "base.msc") {
          const fs::path src = ba->second.parent_path();
          fs::create_directories(d);
          fs::copy_file(src / "base.msc", d / "base.msc", fs::copy_options::overwrite_existing);
          fs::copy_file(src / "config.cfg", d / "config.cfg",
                        fs::copy_options::overwrite_existing);
          say(info, name + ": imported base checkpoint from " + src.string());
        }
      }
    }
    trainer::CheckpointSet cs = done ? stored_checkpoint_set(rc)
                                     : customize_core(rc, max_phase, info);
    if (done) say(info, name + ": up to date, reusing its checkpoints");
    base_cache.emplace(rc.pretrain_hash(), cs.base);
    if (max_phase >= 1) spatial_cache.emplace(rc.spatial_hash(), cs.spatial);
    return cs;
  }
};

// ---------------------------------------------------------------------------
// Checkpoint loading for sampling commands.
// ---------------------------------------------------------------------------

struct Bundle {
  net::UNet model;
  adapters::InjectionPlan temporal;
};

Bundle load_bundle(const config::RunConfig& rc) {
  const fs::path dir = train_dir(rc);
  const fs::path mf = dir / "manifest.txt";
  if (!fs::exists(mf)) {
    throw DependencyError("missing checkpoint manifest " + mf.string() +
                          "; run 'motionsep customize' first");
  }
  const trainer::Manifest m = trainer::Manifest::read(mf);
  const config::RunConfig stored = config::RunConfig::from_file(dir / m.config_file);
  // Sampling-time knobs (skip mode, beta, scale, level mask) may differ from
  // what the checkpoints were trained with -- that is precisely how the
  // beta/skip probes work -- but everything else that shaped the training
  // must match, or these checkpoints belong to a different experiment.
  config::RunConfig want = rc;
  want.net.skip_mode = stored.net.skip_mode;
  want.net.beta = stored.net.beta;
  want.net.vanilla_skip_scale = stored.net.vanilla_skip_scale;
  want.net.ah_level_mask = stored.net.ah_level_mask;
  if (want.train_hash() != stored.train_hash()) {
    throw ConfigError("checkpoints in " + dir.string() +
                      " were produced by a different training configuration (stored config hash " +
                      hex16(stored.hash()) + "); re-run 'motionsep customize'");
  }
  net::UNet model = net::UNet::load(dir / m.base);
  adapters::InjectionPlan plan = net::load_plan(dir / m.temporal, model);
  return Bundle{std::move(model), std::move(plan)};
}

// ---------------------------------------------------------------------------
// Ablation scaffolding.
// ---------------------------------------------------------------------------

struct SuiteRow {
  std::string variant;
  std::string knob;  // x-axis value; equals `variant` when there is no knob
  probe::MetricsReport rep;
};

std::string row_label(const SuiteRow& r) {
  return r.knob == r.variant ? r.variant : r.variant + "@" + r.knob;
}

std::string suite_results_csv(const std::vector<SuiteRow>& rows) {
  std::vector<size_t> order(rows.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const auto& ra = rows[a];
    const auto& rb = rows[b];
    if (ra.rep.motion_acc != rb.rep.motion_acc) return ra.rep.motion_acc > rb.rep.motion_acc;
    if (ra.rep.app_align != rb.rep.app_align) return ra.rep.app_align > rb.rep.app_align;
    if (ra.variant != rb.variant) return ra.variant < rb.variant;
    return ra.knob < rb.knob;
  });
  std::ostringstream os;
  os << "rank,variant,knob,config_hash,motion_acc,app_align,app_leak,temporal_consist\n";
  for (size_t i = 0; i < order.size(); ++i) {
    const SuiteRow& r = rows[order[i]];
    os << (i + 1) << ',' << r.variant << ',' << r.knob << ',' << hex16(r.rep.config_hash) << ','
       << fmt_double(r.rep.motion_acc) << ',' << fmt_double(r.rep.app_align) << ','
       << fmt_double(r.rep.app_leak) << ',' << fmt_double(r.rep.temporal_consist) << '\n';
  }
  return os.str();
}

void write_suite_outputs(const fs::path& dir, const std::string& suite,
                         const std::vector<SuiteRow>& rows, const InfoLog& info) {
  trainer::write_text_atomic(dir / "results.csv", suite_results_csv(rows));

  std::vector<std::string> labels;
  ChartSeries acc{"motion_acc", {}}, align{"app_align", {}}, leak{"app_leak", {}},
      consist{"temporal_consist", {}};
  std::vector<probe::MetricsReport> reports;
  for (const SuiteRow& r : rows) {
    labels.push_back(row_label(r));
    acc.values.push_back(r.rep.motion_acc);
    align.values.push_back(r.rep.app_align);
    leak.values.push_back(r.rep.app_leak);
    consist.values.push_back(r.rep.temporal_consist);
    reports.push_back(r.rep);
    say(info, metrics_line(suite + "[" + row_label(r) + "]", r.rep));
  }
  write_line_chart(dir / "metrics.svg", "ablate " + suite, labels, {acc, align, leak, consist});
  probe::write_summary(dir / "summary.txt", reports);
  say(info, "results: " + (dir / "results.csv").string());
}

// Per-row eyeball artifact: the first generated clip of the row.
void export_row_clip(const fs::path& dir, const SuiteRow& row,
                     const std::vector<synthvid::VideoClip>& clips) {
  if (clips.empty()) return;
  fs::create_directories(dir / "clips");
  synthvid::export_gif(clips.front(), dir / "clips" / (row_label(row) + ".gif"));
}

std::vector<SuiteRow> suite_table1(const config::RunConfig& rc, const fs::path& dir,
                                   const InfoLog& info) {
  TrainPool pool{dir / "train", info, {}, {}};
  const probe::MotionJudge& judge = shared_judge(judge_config(rc));
  const auto specs = eval_specs(rc);
  std::vector<SuiteRow> rows;

  // Row 1: the pretrained model with no adaptation at all. Sampling runs
  // with the plain vanilla forward, exactly what PLI's tau = T would use.
  trainer::CheckpointSet cs0 = pool.ensure(rc, "base", 0);
  {
    const net::UNet model = net::UNet::load(cs0.base);
    const auto clips = sample_eval_clips(model, nullptr, base_skip(model), 0, rc, specs);
    rows.push_back({"base", "base", run_metrics(clips, judge, rc, rc.hash(), "base", specs)});
    export_row_clip(dir, rows.back(), clips);
  }

  // One adapted row per temporal plan; base and spatial checkpoints are
  // shared across plans, only the temporal path retrains. Sampling isolates
  // the plan knob: pure adapted model (tau = 0), skip mode from the config.
  for (const std::string plan : {"full", "q", "k", "v", "ff", "qk"}) {
    config::RunConfig rcv = rc;
    rcv.temporal.plan = plan;
    trainer::CheckpointSet cs = pool.ensure(rcv, plan, 2);
    const net::UNet model = net::UNet::load(cs.base);
    const adapters::InjectionPlan tplan = net::load_plan(cs.temporal, model);
    const auto clips = sample_eval_clips(model, &tplan, skip_from(rc.net), 0, rc, specs);
    rows.push_back({plan, plan, run_metrics(clips, judge, rcv, rcv.hash(), plan, specs)});
    export_row_clip(dir, rows.back(), clips);
  }
  return rows;
}

std::vector<SuiteRow> suite_beta_sweep(const config::RunConfig& rc, const fs::path& dir,
                                       const InfoLog& info) {
  TrainPool pool{dir / "train", info, {}, {}};
  const probe::MotionJudge& judge = shared_judge(judge_config(rc));
  const auto specs = eval_specs(rc);
  trainer::CheckpointSet cs = pool.ensure(rc, rc.temporal.plan, 2);
  const net::UNet model = net::UNet::load(cs.base);
  const adapters::InjectionPlan tplan = net::load_plan(cs.temporal, model);

  std::vector<SuiteRow> rows;
  for (const double beta : {1.0, 1.05, 1.1, 1.15, 1.2}) {
    char knob[16];
    std::snprintf(knob, sizeof(knob), "%.2f", beta);
    {
      // The appearance highway at scale beta.
      net::SkipSettings skip = skip_from(rc.net);
      skip.mode = net::SkipMode::kAppearanceHighway;
      skip.beta = beta;
      const auto clips = sample_eval_clips(model, &tplan, skip, 0, rc, specs);
      rows.push_back({"ah", knob, run_metrics(clips, judge, rc, rc.hash(), "ah@" + std::string(knob), specs)});
      export_row_clip(dir, rows.back(), clips);
    }
    {
      // Control: vanilla skips with the temporal source scaled by the same
      // factor, separating the highway's content swap from its gain.
      net::SkipSettings skip = skip_from(rc.net);
      skip.mode = net::SkipMode::kVanilla;
      skip.vanilla_scale = beta;
      const auto clips = sample_eval_clips(model, &tplan, skip, 0, rc, specs);
      rows.push_back(
          {"vanilla", knob, run_metrics(clips, judge, rc, rc.hash(), "vanilla@" + std::string(knob), specs)});
      export_row_clip(dir, rows.back(), clips);
    }
  }
  return rows;
}

std::vector<SuiteRow> suite_ah_train_vs_post(const config::RunConfig& rc, const fs::path& dir,
                                             const InfoLog& info) {
  TrainPool pool{dir / "train", info, {}, {}};
  const probe::MotionJudge& judge = shared_judge(judge_config(rc));
  const auto specs = eval_specs(rc);
  std::vector<SuiteRow> rows;
  for (const bool in_training : {true, false}) {
    const std::string name = in_training ? "ah-train" : "ah-post";
    config::RunConfig rcv = rc;
    rcv.temporal.ah_in_training = in_training;
    trainer::CheckpointSet cs = pool.ensure(rcv, name, 2);
    const net::UNet model = net::UNet::load(cs.base);
    const adapters::InjectionPlan tplan = net::load_plan(cs.temporal, model);
    // Both variants sample under the highway; they differ only in whether
    // the temporal path saw it during training.
    net::SkipSettings skip = skip_from(rc.net);
    skip.mode = net::SkipMode::kAppearanceHighway;
    const auto clips = sample_eval_clips(model, &tplan, skip, 0, rc, specs);
    rows.push_back({name, in_training ? "train" : "post",
                    run_metrics(clips, judge, rcv, rcv.hash(), name, specs)});
    export_row_clip(dir, rows.back(), clips);
  }
  return rows;
}

std::vector<SuiteRow> suite_pli(const config::RunConfig& rc, const fs::path& dir,
                                const InfoLog& info) {
  TrainPool pool{dir / "train", info, {}, {}};
  const probe::MotionJudge& judge = shared_judge(judge_config(rc));
  const auto specs = eval_specs(rc);
  trainer::CheckpointSet cs = pool.ensure(rc, rc.temporal.plan, 2);
  const net::UNet model = net::UNet::load(cs.base);
  const adapters::InjectionPlan tplan = net::load_plan(cs.temporal, model);

  const int T = rc.sched.steps;
  std::vector<SuiteRow> rows;
  for (const int tau : {0, static_cast<int>(std::llround(0.3 * T)), T}) {
    const auto clips = sample_eval_clips(model, &tplan, skip_from(rc.net), tau, rc, specs);
    const std::string knob = std::to_string(tau);
    rows.push_back(
        {"pli", knob, run_metrics(clips, judge, rc, rc.hash(), "pli@" + knob, specs)});
    export_row_clip(dir, rows.back(), clips);
  }
  return rows;
}

std::vector<SuiteRow> suite_components(const config::RunConfig& rc, const fs::path& dir,
                                       const InfoLog& info) {
  TrainPool pool{dir / "train", info, {}, {}};
  const probe::MotionJudge& judge = shared_judge(judge_config(rc));
  const auto specs = eval_specs(rc);

  // The full method is TAP + AH + PLI; each ablation removes one piece.
  config::RunConfig rc_tap = rc;
  rc_tap.temporal.plan = "tap";
  config::RunConfig rc_full = rc;
  rc_full.temporal.plan = "full";

  trainer::CheckpointSet cs0 = pool.ensure(rc_tap, "base", 0);
  trainer::CheckpointSet cs_tap = pool.ensure(rc_tap, "tap", 2);
  trainer::CheckpointSet cs_full = pool.ensure(rc_full, "full", 2);

  const net::UNet model = net::UNet::load(cs_tap.base);
  const adapters::InjectionPlan tap_plan = net::load_plan(cs_tap.temporal, model);
  const adapters::InjectionPlan full_plan = net::load_plan(cs_full.temporal, model);

  net::SkipSettings ah = skip_from(rc.net);
  ah.mode = net::SkipMode::kAppearanceHighway;
  net::SkipSettings vanilla = base_skip(model);
  const int tau = rc.sample.tau;

  struct Item {
    std::string name;
    const adapters::InjectionPlan* plan;
    net::SkipSettings skip;
    int tau;
  };
  const std::vector<Item> items = {
      {"full-method", &tap_plan, ah, tau},
      {"no-tap", &full_plan, ah, tau},
      {"no-ah", &tap_plan, vanilla, tau},
      {"no-pli", &tap_plan, ah, 0},
      {"base", nullptr, vanilla, 0},
  };
  std::vector<SuiteRow> rows;
  for (const Item& it : items) {
    const auto clips = sample_eval_clips(model, it.plan, it.skip, it.tau, rc, specs);
    const uint64_t hash = it.plan == &full_plan ? rc_full.hash()
                          : it.plan == nullptr  ? rc.hash()
                                                : rc_tap.hash();
    rows.push_back({it.name, it.name, run_metrics(clips, judge, rc, hash, it.name, specs)});
    export_row_clip(dir, rows.back(), clips);
  }
  (void)cs0;
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public surface.
// ---------------------------------------------------------------------------

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const ShapeError*>(&e)) return kExitShape;
  if (dynamic_cast<const PlanError*>(&e)) return kExitPlan;
  if (dynamic_cast<const VocabError*>(&e)) return kExitVocab;
  if (dynamic_cast<const DependencyError*>(&e)) return kExitDependency;
  if (dynamic_cast<const FileFormatError*>(&e)) return kExitFileFormat;
  if (dynamic_cast<const TrainingDivergedError*>(&e)) return kExitDiverged;
  if (dynamic_cast<const MetricGateError*>(&e)) return kExitMetricGate;
  return kExitFailure;
}

namespace {

const char* exit_label(int code) {
  switch (code) {
    case kExitConfig: return "config error";
    case kExitShape: return "shape error";
    case kExitPlan: return "plan error";
    case kExitVocab: return "vocabulary error";
    case kExitDependency: return "dependency error";
    case kExitFileFormat: return "file format error";
    case kExitDiverged: return "training diverged";
    case kExitMetricGate: return "metric gate failure";
    default: return "error";
  }
}

}  // namespace

const std::vector<std::string>& ablate_suites() {
  static const std::vector<std::string> kSuites = {"table1", "beta_sweep", "ah_train_vs_post",
                                                   "pli", "components"};
  return kSuites;
}

std::string usage() {
  std::ostringstream os;
  os << "motionsep -- motion customization lab for a miniature video diffusion model\n"
     << "\n"
     << "usage: motionsep <command> [flags]\n"
     << "\n"
     << "commands:\n"
     << "  synth       render the dataset (corpus, reference set, eval previews)\n"
     << "  pretrain    phase 0 only: train the base model\n"
     << "  customize   full dual-path run: pretrain + spatial + temporal LoRAs\n"
     << "  sample      generate clips for the eval prompt grid with PLI\n"
     << "  probe       metric suite + hidden-state similarity profile vs the base\n"
     << "  ablate      run an ablation suite (requires --suite)\n"
     << "  help        this text\n"
     << "\n"
     << "flags:\n"
     << "  --config FILE     run configuration (defaults when omitted)\n"
     << "  --seed N          override the run seed\n"
     << "  --out-dir DIR     override the output directory\n"
     << "  --suite NAME      ablate suite: table1 | beta_sweep | ah_train_vs_post |\n"
     << "                    pli | components\n"
     << "  --tau N           PLI phase boundary (sample section)\n"
     << "  --beta X          appearance highway scale (net section)\n"
     << "  --plan P          temporal plan: tap | full | q | k | v | ff | qk\n"
     << "  --skip-mode M     skip source: vanilla | ah\n"
     << "  --ah-phase P      highway during training ('train') or only at\n"
     << "                    sampling time ('post')\n"
     << "\n"
     << "outputs land under <out-dir>/{dataset,train,samples,probe,ablate-<suite>}.\n"
     << "pretrain and customize reuse checkpoints in <out-dir>/train whose stored\n"
     << "config fingerprints match; training is deterministic, so reuse is\n"
     << "byte-identical to retraining. remove the directory to force a fresh run.\n"
     << "\n"
     << "exit codes: 1 unexpected error, 2 config, 3 shape, 4 plan, 5 vocabulary,\n"
     << "6 missing dependency, 7 file format, 8 training diverged, 9 metric gate.\n";
  return os.str();
}

Options parse_args(const std::vector<std::string>& args) {
  if (args.empty()) {
    throw ConfigError("missing command; run 'motionsep help' for usage");
  }
  Options o;
  const std::string& cmd = args[0];
  if (cmd == "help" || cmd == "--help" || cmd == "-h") {
    o.command = "help";
    return o;
  }
  static const std::vector<std::string> kCommands = {"synth",  "pretrain", "customize",
                                                     "sample", "probe",    "ablate"};
  if (std::find(kCommands.begin(), kCommands.end(), cmd) == kCommands.end()) {
    throw VocabError("unknown command '" + cmd +
                     "'; commands: synth, pretrain, customize, sample, probe, ablate, help");
  }
  o.command = cmd;
  for (size_t i = 1; i < args.size(); ++i) {
    std::string flag = args[i];
    std::optional<std::string> inline_value;
    if (flag.rfind("--", 0) == 0) {
      if (const size_t eq = flag.find('='); eq != std::string::npos) {
        inline_value = flag.substr(eq + 1);
        flag = flag.substr(0, eq);
      }
    } else {
      throw ConfigError("unexpected argument '" + args[i] + "'; flags look like --name value");
    }
    const auto value = [&]() -> std::string {
      if (inline_value) return *inline_value;
      if (i + 1 >= args.size()) throw ConfigError("flag '" + flag + "' expects a value");
      return args[++i];
    };
    if (flag == "--config") {
      o.config_path = value();
    } else if (flag == "--seed") {
      o.seed = parse_flag_u64(value(), flag);
    } else if (flag == "--out-dir") {
      o.out_dir = value();
    } else if (flag == "--suite") {
      o.suite = value();
    } else if (flag == "--tau") {
      o.tau = parse_flag_int(value(), flag);
    } else if (flag == "--beta") {
      o.beta = parse_flag_double(value(), flag);
    } else if (flag == "--plan") {
      o.plan = value();
    } else if (flag == "--skip-mode") {
      o.skip_mode = value();
    } else if (flag == "--ah-phase") {
      o.ah_phase = value();
    } else {
      throw ConfigError("unknown flag '" + flag + "'; run 'motionsep help' for usage");
    }
  }
  if (o.command == "ablate") {
    if (!o.suite) {
      throw ConfigError(
          "ablate requires --suite; suites: table1, beta_sweep, ah_train_vs_post, pli, "
          "components");
    }
    const auto& suites = ablate_suites();
    if (std::find(suites.begin(), suites.end(), *o.suite) == suites.end()) {
      throw VocabError("unknown suite '" + *o.suite +
                       "'; suites: table1, beta_sweep, ah_train_vs_post, pli, components");
    }
  } else if (o.suite) {
    throw ConfigError("--suite only applies to the ablate command");
  }
  return o;
}

config::RunConfig effective_config(const Options& opt) {
  config::RunConfig rc = opt.config_path ? config::RunConfig::from_file(*opt.config_path)
                                         : config::RunConfig::defaults();
  if (opt.seed) rc.seed = *opt.seed;
  if (opt.out_dir) rc.out_dir = *opt.out_dir;
  if (opt.tau) rc.sample.tau = *opt.tau;
  if (opt.beta) rc.net.beta = *opt.beta;
  if (opt.plan) {
    adapters::plan_preset_from_string(*opt.plan);  // vocabulary check
    rc.temporal.plan = *opt.plan;
  }
  if (opt.skip_mode) rc.net.skip_mode = net::skip_mode_from_string(*opt.skip_mode);
  if (opt.ah_phase) {
    if (*opt.ah_phase == "train") {
      rc.temporal.ah_in_training = true;
    } else if (*opt.ah_phase == "post") {
      rc.temporal.ah_in_training = false;
    } else {
      throw VocabError("--ah-phase must be 'train' or 'post', got '" + *opt.ah_phase + "'");
    }
  }
  rc.validate();
  return rc;
}

std::vector<synthvid::AppearanceSpec> eval_specs(const config::RunConfig& rc) {
  // Appearances already taught to the spatial path are off the grid; the
  // metrics are about generalizing appearance, not recalling the references.
  const auto refs = synthvid::build_reference_set(rc.custom_motion_label(), rc.synth.refset_count,
                                                  rc.artifact(), rc.synth.frames, rc.synth.height,
                                                  rc.synth.width, rc.seed);
  std::set<std::pair<int, int>> used;  // (shape, fg bin)
  for (const auto& c : refs) {
    if (c.spec) {
      used.insert({static_cast<int>(c.spec->appearance.shape),
                   synthvid::nearest_fg_bin(c.spec->appearance.fg)});
    }
  }
  Rng root(rc.seed);
  Rng rng = root.stream("eval-specs");
  const synthvid::ArtifactSpec art = rc.artifact();
  std::vector<synthvid::AppearanceSpec> out;
  for (int i = 0; i < rc.probe.eval_specs; ++i) {
    bool found = false;
    for (int tries = 0; tries < 100 && !found; ++tries) {
      const synthvid::AppearanceSpec a = synthvid::random_appearance(rng, false, art);
      const std::pair<int, int> key{static_cast<int>(a.shape), synthvid::nearest_fg_bin(a.fg)};
      if (!used.count(key)) {
        used.insert(key);
        out.push_back(a);
        found = true;
      }
    }
    if (!found) {
      throw ConfigError("eval prompt grid: could not draw " +
                        std::to_string(rc.probe.eval_specs) +
                        " appearance specs distinct from the reference set; lower probe.eval_specs");
    }
  }
  return out;
}

probe::JudgeConfig judge_config(const config::RunConfig& rc) {
  probe::JudgeConfig jc;
  jc.frames = rc.synth.frames;
  jc.height = rc.synth.height;
  jc.width = rc.synth.width;
  jc.grid = rc.probe.grid;
  jc.train_per_motion = rc.probe.judge_train_per_motion;
  jc.holdout_per_motion = rc.probe.judge_holdout_per_motion;
  return jc;  // validity gate and seed stay at their fixed defaults
}

const probe::MotionJudge& shared_judge(const probe::JudgeConfig& cfg) {
  static std::mutex mu;
  static std::map<std::string, std::unique_ptr<probe::MotionJudge>> cache;
  std::ostringstream key;
  key << cfg.frames << '|' << cfg.height << '|' << cfg.width << '|' << cfg.grid << '|'
      << cfg.train_per_motion << '|' << cfg.holdout_per_motion << '|'
      << fmt_double(cfg.min_holdout_acc) << '|' << cfg.seed;
  const std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key.str());
  if (it == cache.end()) {
    it = cache.emplace(key.str(), std::make_unique<probe::MotionJudge>(probe::MotionJudge::train(cfg)))
             .first;
  }
  return *it->second;
}

// ---------------------------------------------------------------------------
// SVG chart.
// ---------------------------------------------------------------------------

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (const char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

}  // namespace

void write_line_chart(const fs::path& path, const std::string& title,
                      const std::vector<std::string>& x_labels,
                      const std::vector<ChartSeries>& series) {
  if (x_labels.empty() || series.empty()) {
    throw ConfigError("line chart needs at least one x label and one series");
  }
  for (const ChartSeries& s : series) {
    if (s.values.size() != x_labels.size()) {
      throw ShapeError("line chart series '" + s.label + "' has " +
                       std::to_string(s.values.size()) + " values for " +
                       std::to_string(x_labels.size()) + " x labels");
    }
  }
  const double W = 760, H = 420, L = 64, R = 180, T = 48, B = 84;
  const double pw = W - L - R, ph = H - T - B;
  double lo = 0.0, hi = 1.0;
  for (const ChartSeries& s : series) {
    for (const double v : s.values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (!(hi > lo)) hi = lo + 1.0;
  const size_t n = x_labels.size();
  const auto X = [&](size_t i) { return n == 1 ? L + pw / 2 : L + pw * double(i) / double(n - 1); };
  const auto Y = [&](double v) { return T + ph * (1.0 - (v - lo) / (hi - lo)); };
  static const char* kColors[] = {"#3b6fd4", "#d45353", "#3d9e57", "#b07ad6",
                                  "#d4963b", "#4fb8c9"};
  constexpr size_t kNumColors = sizeof(kColors) / sizeof(kColors[0]);

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" viewBox=\"0 0 " << W << " " << H << "\">\n"
     << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"#ffffff\"/>\n"
     << "<text x=\"" << px(L + pw / 2) << "\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\""
     << " text-anchor=\"middle\" fill=\"#222222\">" << xml_escape(title) << "</text>\n";
  // Horizontal gridlines and y tick labels.
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    const double y = Y(v);
    char lab[24];
    std::snprintf(lab, sizeof(lab), "%.2f", v);
    os << "<line x1=\"" << px(L) << "\" y1=\"" << px(y) << "\" x2=\"" << px(L + pw) << "\" y2=\""
       << px(y) << "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n"
       << "<text x=\"" << px(L - 8) << "\" y=\"" << px(y + 4)
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\" fill=\"#444444\">"
       << lab << "</text>\n";
  }
  // Axes.
  os << "<line x1=\"" << px(L) << "\" y1=\"" << px(T) << "\" x2=\"" << px(L) << "\" y2=\""
     << px(T + ph) << "\" stroke=\"#444444\" stroke-width=\"1\"/>\n"
     << "<line x1=\"" << px(L) << "\" y1=\"" << px(T + ph) << "\" x2=\"" << px(L + pw)
     << "\" y2=\"" << px(T + ph) << "\" stroke=\"#444444\" stroke-width=\"1\"/>\n";
  // X labels, slanted so long knob names stay legible.
  for (size_t i = 0; i < n; ++i) {
    os << "<text x=\"" << px(X(i)) << "\" y=\"" << px(T + ph + 16)
       << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\" fill=\"#444444\""
       << " transform=\"rotate(-30 " << px(X(i)) << " " << px(T + ph + 16) << ")\">"
       << xml_escape(x_labels[i]) << "</text>\n";
  }
  // Series polylines, markers and legend.
  for (size_t s = 0; s < series.size(); ++s) {
    const char* color = kColors[s % kNumColors];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (size_t i = 0; i < n; ++i) {
      if (i) os << ' ';
      os << px(X(i)) << ',' << px(Y(series[s].values[i]));
    }
    os << "\"/>\n";
    for (size_t i = 0; i < n; ++i) {
      os << "<circle cx=\"" << px(X(i)) << "\" cy=\"" << px(Y(series[s].values[i]))
         << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = T + 16 + 18.0 * double(s);
    os << "<line x1=\"" << px(W - R + 12) << "\" y1=\"" << px(ly - 4) << "\" x2=\""
       << px(W - R + 34) << "\" y2=\"" << px(ly - 4) << "\" stroke=\"" << color
       << "\" stroke-width=\"2\"/>\n"
       << "<text x=\"" << px(W - R + 40) << "\" y=\"" << px(ly)
       << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#222222\">"
       << xml_escape(series[s].label) << "</text>\n";
  }
  os << "</svg>\n";
  trainer::write_text_atomic(path, os.str());
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

fs::path cmd_synth(const config::RunConfig& rc, const InfoLog& info) {
  rc.validate();
  const fs::path dir = fs::path(rc.out_dir) / "dataset";
  const int f = rc.synth.frames, h = rc.synth.height, w = rc.synth.width;
  const synthvid::MotionLabel held = rc.custom_motion_label();
  std::vector<synthvid::MotionLabel> motions;
  for (const synthvid::MotionLabel m : synthvid::all_motions()) {
    if (m != held) motions.push_back(m);
  }
  const auto corpus = synthvid::build_corpus(motions, rc.synth.corpus_per_motion, f, h, w, rc.seed);
  const auto refset = synthvid::build_reference_set(held, rc.synth.refset_count, rc.artifact(), f,
                                                    h, w, rc.seed);
  const auto evals = eval_specs(rc);
  fs::create_directories(dir / "corpus");
  fs::create_directories(dir / "refset");
  fs::create_directories(dir / "eval");

  const auto spec_line = [](const synthvid::ClipSpec& s) {
    std::ostringstream os;
    os << "motion=" << synthvid::to_string(s.motion)
       << " shape=" << synthvid::to_string(s.appearance.shape)
       << " fg=" << synthvid::nearest_fg_bin(s.appearance.fg)
       << " bg=" << synthvid::nearest_bg_bin(s.appearance.bg)
       << " artifact=" << (s.appearance.with_artifact ? "true" : "false");
    return os.str();
  };

  std::ostringstream man;
  man << "# synthetic dataset\n"
      << "schema = 1\n"
      << "config_hash = " << rc.hash_hex() << "\n"
      << "seed = " << rc.seed << "\n"
      << "custom_motion = " << rc.synth.custom_motion << " (held out of the corpus)\n";
  man << "\n[corpus]\ncount = " << corpus.size() << "\n";
  for (size_t i = 0; i < corpus.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "clip-%03zu", i);
    save_tensor(dir / "corpus" / (std::string(name) + ".mst"), corpus[i].data);
    synthvid::export_gif(corpus[i], dir / "corpus" / (std::string(name) + ".gif"));
    man << name << ": " << spec_line(corpus[i].spec.value()) << "\n";
  }
  const synthvid::ArtifactSpec art = rc.artifact();
  man << "\n[refset]\ncount = " << refset.size() << "\n"
      << "artifact: row=" << art.row << " col=" << art.col << " size=" << art.size
      << " contrast=" << fmt_double(art.contrast) << "\n";
  for (size_t i = 0; i < refset.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "ref-%zu", i);
    save_tensor(dir / "refset" / (std::string(name) + ".mst"), refset[i].data);
    synthvid::export_gif(refset[i], dir / "refset" / (std::string(name) + ".gif"));
    synthvid::export_ppm(refset[i], dir / "refset" / (std::string(name) + "-frames"), name);
    man << name << ": " << spec_line(refset[i].spec.value()) << "\n";
  }
  man << "\n[eval]\ncount = " << evals.size() << "\n";
  for (size_t i = 0; i < evals.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "eval-%zu", i);
    synthvid::ClipSpec preview;
    preview.motion = held;
    preview.appearance = evals[i];
    preview.frames = f;
    preview.height = h;
    preview.width = w;
    synthvid::export_gif(synthvid::render_clip(preview), dir / "eval" / (std::string(name) + ".gif"));
    man << name << ": shape=" << synthvid::to_string(evals[i].shape)
        << " fg=" << synthvid::nearest_fg_bin(evals[i].fg)
        << " bg=" << synthvid::nearest_bg_bin(evals[i].bg) << "\n";
  }
  trainer::write_text_atomic(dir / "dataset.txt", man.str());
  say(info, "dataset: " + std::to_string(corpus.size()) + " corpus clips, " +
                std::to_string(refset.size()) + " reference clips, " +
                std::to_string(evals.size()) + " eval prompts -> " + dir.string());
  return dir;
}

trainer::CheckpointSet cmd_pretrain(const config::RunConfig& rc, const InfoLog& info) {
  config::RunConfig tr = rc;
  tr.out_dir = train_dir(rc).string();
  return customize_core(tr, 0, info);
}

trainer::CheckpointSet cmd_customize(const config::RunConfig& rc, const InfoLog& info) {
  config::RunConfig tr = rc;
  tr.out_dir = train_dir(rc).string();
  return customize_core(tr, 2, info);
}

fs::path cmd_sample(const config::RunConfig& rc, const InfoLog& info) {
  rc.validate();
  const Bundle b = load_bundle(rc);
  const fs::path dir = fs::path(rc.out_dir) / "samples";
  fs::create_directories(dir);
  const auto specs = eval_specs(rc);
  const diffusion::NoiseSchedule sched(rc.sched);
  const net::SkipSettings skip = skip_from(rc.net);
  const Shape shape{1, rc.synth.frames, rc.synth.height, rc.synth.width, 3};

  std::ostringstream man;
  man << "# generated samples\n"
      << "schema = 1\n"
      << "config_hash = " << rc.hash_hex() << "\n"
      << "seed = " << rc.seed << "\n"
      << "plan = " << rc.temporal.plan << "\n"
      << "skip_mode = " << net::to_string(skip.mode) << "\n"
      << "beta = " << fmt_double(skip.beta) << "\n"
      << "tau = " << rc.sample.tau << "\n"
      << "count = " << specs.size() << "\n\n";

  for (size_t i = 0; i < specs.size(); ++i) {
    const net::CondLabels labels = labels_for_spec(specs[i], net::kCustomMotionId);
    const uint64_t clip_seed = derive_seed(rc.seed, "eval-clip-" + std::to_string(i));
    diffusion::PliOptions po;
    po.tau = rc.sample.tau;
    diffusion::SampleDebug dbg;
    if (rc.sample.snapshot_every > 0) {
      for (int t = rc.sample.snapshot_every; t <= sched.steps(); t += rc.sample.snapshot_every) {
        po.snapshot_at.push_back(t);
      }
      po.debug = &dbg;
    }
    const Tensor z = diffusion::sample_pli(sched, shape, eps_model(b.model, &b.temporal, skip, labels),
                                           eps_model(b.model, nullptr, base_skip(b.model), labels),
                                           clip_seed, po);
    const synthvid::VideoClip clip = diffusion::to_video_clip(z);
    char name[32];
    std::snprintf(name, sizeof(name), "sample-%zu", i);
    save_tensor(dir / (std::string(name) + ".mst"), clip.data);
    synthvid::export_gif(clip, dir / (std::string(name) + ".gif"));
    synthvid::export_ppm(clip, dir / (std::string(name) + "-frames"), name);
    for (size_t j = 0; j < dbg.snapshots.size(); ++j) {
      save_tensor(dir / (std::string(name) + "-snap-" + std::to_string(dbg.snapshot_steps[j]) +
                         ".mst"),
                  dbg.snapshots[j]);
    }
    man << name << ": seed=" << clip_seed
        << " shape=" << synthvid::to_string(specs[i].shape)
        << " fg=" << synthvid::nearest_fg_bin(specs[i].fg)
        << " bg=" << synthvid::nearest_bg_bin(specs[i].bg) << "\n";
    say(info, std::string(name) + ": " + (dir / (std::string(name) + ".gif")).string());
  }
  trainer::write_text_atomic(dir / "samples.txt", man.str());
  return dir;
}

fs::path cmd_probe(const config::RunConfig& rc, const InfoLog& info) {
  rc.validate();
  const Bundle b = load_bundle(rc);
  const probe::MotionJudge& judge = shared_judge(judge_config(rc));
  const fs::path dir = fs::path(rc.out_dir) / "probe";
  fs::create_directories(dir);
  const auto specs = eval_specs(rc);
  const diffusion::NoiseSchedule sched(rc.sched);
  const net::SkipSettings skip = skip_from(rc.net);
  const std::string variant =
      rc.temporal.plan + (skip.mode == net::SkipMode::kAppearanceHighway ? "+ah" : "");

  std::vector<synthvid::VideoClip> vclips, bclips;
  std::vector<probe::SimilarityProfile> profiles;
  for (size_t i = 0; i < specs.size(); ++i) {
    const net::CondLabels labels = labels_for_spec(specs[i], net::kCustomMotionId);
    const uint64_t clip_seed = derive_seed(rc.seed, "eval-clip-" + std::to_string(i));
    // Paired trajectories: both nets denoise from the same initial noise, so
    // the per-(level, step) cosine compares like against like.
    const probe::TracedSample adapted = probe::trace_sampling(
        b.model, &b.temporal, skip, labels, sched, rc.synth.frames, clip_seed, variant);
    const probe::TracedSample base = probe::trace_sampling(
        b.model, nullptr, base_skip(b.model), labels, sched, rc.synth.frames, clip_seed, "base");
    vclips.push_back(diffusion::to_video_clip(adapted.signal));
    bclips.push_back(diffusion::to_video_clip(base.signal));
    profiles.push_back(probe::cosine_profile(adapted.trace, base.trace));
    synthvid::export_gif(vclips.back(), dir / ("clip-" + std::to_string(i) + ".gif"));
    synthvid::export_gif(bclips.back(), dir / ("base-" + std::to_string(i) + ".gif"));
  }
  // Pointwise mean across the prompt grid; all profiles share the same keys.
  probe::SimilarityProfile profile = profiles.front();
  for (size_t k = 1; k < profiles.size(); ++k) {
    for (size_t j = 0; j < profile.points.size(); ++j) {
      profile.points[j].cosine += profiles[k].points[j].cosine;
    }
  }
  for (auto& p : profile.points) p.cosine /= double(profiles.size());

  const std::vector<probe::MetricsReport> reports = {
      run_metrics(vclips, judge, rc, rc.hash(), variant, specs),
      run_metrics(bclips, judge, rc, rc.hash(), "base", specs),
  };
  probe::write_report_csv(dir / "report.csv", reports);
  probe::write_summary(dir / "summary.txt", reports);
  probe::write_profile_csv(dir / "profile.csv", profile);

  // Similarity chart: one series per decoder level over the denoising steps.
  std::map<int, ChartSeries> by_level;
  std::vector<std::string> step_labels;
  const int first_level = profile.points.empty() ? 0 : profile.points.front().level;
  for (const auto& p : profile.points) {
    auto [it, fresh] = by_level.try_emplace(p.level, ChartSeries{"level " + std::to_string(p.level), {}});
    it->second.values.push_back(p.cosine);
    if (p.level == first_level) step_labels.push_back("t=" + std::to_string(p.step));
  }
  std::vector<ChartSeries> series;
  for (auto& [lvl, s] : by_level) series.push_back(std::move(s));
  write_line_chart(dir / "profile.svg", "cosine(" + variant + ", base)", step_labels, series);

  for (const auto& r : reports) say(info, metrics_line(r.variant, r));
  say(info, "probe report: " + (dir / "report.csv").string());
  return dir;
}

fs::path cmd_ablate(const config::RunConfig& rc, const std::string& suite, const InfoLog& info) {
  rc.validate();
  const auto& suites = ablate_suites();
  if (std::find(suites.begin(), suites.end(), suite) == suites.end()) {
    throw VocabError("unknown suite '" + suite +
                     "'; suites: table1, beta_sweep, ah_train_vs_post, pli, components");
  }
  const fs::path dir = fs::path(rc.out_dir) / ("ablate-" + suite);
  fs::create_directories(dir);
  std::vector<SuiteRow> rows;
  if (suite == "table1") {
    rows = suite_table1(rc, dir, info);
  } else if (suite == "beta_sweep") {
    rows = suite_beta_sweep(rc, dir, info);
  } else if (suite == "ah_train_vs_post") {
    rows = suite_ah_train_vs_post(rc, dir, info);
  } else if (suite == "pli") {
    rows = suite_pli(rc, dir, info);
  } else {
    rows = suite_components(rc, dir, info);
  }
  write_suite_outputs(dir, suite, rows, info);
  return dir;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    const Options o = parse_args(args);
    if (o.command == "help") {
      out << usage();
      return kExitOk;
    }
    const config::RunConfig rc = effective_config(o);
    const InfoLog info = [&out](const std::string& s) { out << s << "\n"; };
    if (o.command == "synth") {
      cmd_synth(rc, info);
    } else if (o.command == "pretrain") {
      cmd_pretrain(rc, info);
    } else if (o.command == "customize") {
      cmd_customize(rc, info);
    } else if (o.command == "sample") {
      cmd_sample(rc, info);
    } else if (o.command == "probe") {
      cmd_probe(rc, info);
    } else {
      cmd_ablate(rc, *o.suite, info);
    }
    return kExitOk;
  } catch (const std::exception& e) {
    const int code = exit_code_for(e);
    err << exit_label(code) << ": " << e.what() << "\n";
    return code;
  }
}

}  // namespace motionsep::cli
