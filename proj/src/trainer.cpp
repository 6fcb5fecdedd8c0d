#include "motionsep/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <optional>
#include <sstream>

#include "motionsep/errors.hpp"
#include "motionsep/rng.hpp"

namespace fs = std::filesystem;

namespace motionsep::trainer {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double scalar(const Tensor& t) {
  if (t.size() != 1) throw ShapeError("expected a scalar loss tensor");
  return t.data()[0];
}

// Mean squared error over two same-shaped tensors, plain loops (graph-free
// evaluation path).
double mse_plain(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mse_plain: shape mismatch");
  double acc = 0.0;
  for (int64_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

// Every phase uses an explicit skip setting so the model's configured
// sampling default never leaks into training.
net::SkipSettings vanilla_skip(const net::UNet& model) {
  net::SkipSettings s;
  s.mode = net::SkipMode::kVanilla;
  s.vanilla_scale = model.config().vanilla_skip_scale;
  return s;
}

struct Batch {
  Tensor z0;  // (b, f, h, w, 3)
  std::vector<net::CondLabels> labels;
};

// Stacks whole clips item-wise.
Batch gather_batch(const std::vector<TrainItem>& items, const std::vector<int64_t>& idx) {
  const Shape& one = items[idx[0]].z0.shape();
  Shape shape = one;
  shape.insert(shape.begin(), static_cast<int64_t>(idx.size()));
  Batch out{Tensor(shape), {}};
  const int64_t stride = items[idx[0]].z0.size();
  for (size_t i = 0; i < idx.size(); ++i) {
    const TrainItem& it = items[idx[i]];
    std::memcpy(out.z0.data() + static_cast<int64_t>(i) * stride, it.z0.data(),
                sizeof(double) * stride);
    out.labels.push_back(it.labels);
  }
  return out;
}

// Stacks one chosen frame per item into one-frame clips, (b, 1, h, w, 3).
Batch gather_frames(const std::vector<TrainItem>& items, const std::vector<int64_t>& idx,
                    const std::vector<int64_t>& frame) {
  const Shape& one = items[idx[0]].z0.shape();  // (f, h, w, 3)
  const int64_t stride = one[1] * one[2] * one[3];
  Batch out{Tensor({static_cast<int64_t>(idx.size()), 1, one[1], one[2], one[3]}), {}};
  for (size_t i = 0; i < idx.size(); ++i) {
    const TrainItem& it = items[idx[i]];
    std::memcpy(out.z0.data() + static_cast<int64_t>(i) * stride,
                it.z0.data() + frame[i] * stride, sizeof(double) * stride);
    out.labels.push_back(it.labels);
  }
  return out;
}

void check_items(const char* who, const std::vector<TrainItem>& items, const net::UNet& model) {
  const net::UNetConfig& c = model.config();
  const Shape want{items[0].z0.dim(0), c.height, c.width, 3};
  for (const TrainItem& it : items) {
    if (it.z0.shape() != want) {
      throw ShapeError(std::string(who) + ": items must share shape (f, " +
                       std::to_string(c.height) + ", " + std::to_string(c.width) + ", 3)");
    }
  }
  const int64_t f = want[0];
  if (f < 1 || f > c.max_frames) {
    throw ShapeError(std::string(who) + ": clip frame count " + std::to_string(f) +
                     " outside [1, " + std::to_string(c.max_frames) + "]");
  }
}

[[noreturn]] void diverged(const char* phase, int step, double loss) {
  std::ostringstream os;
  os << phase << " diverged at step " << step << ": loss = " << loss
     << " (reduce the learning rate or check the data pipeline)";
  throw TrainingDivergedError(os.str());
}

// Deterministic validation loss: the whole val set as one batch, timesteps
// evenly spread over [1, T], one fixed noise draw derived from the phase
// seed. Comparable across checkpoints of the same run.
double eval_items(const net::UNet& model, const std::vector<TrainItem>& val,
                  const diffusion::NoiseSchedule& sched, uint64_t seed) {
  std::vector<int64_t> idx(val.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
  Batch b = gather_batch(val, idx);

  const int n = static_cast<int>(val.size());
  const int T = sched.steps();
  std::vector<int> t(n);
  for (int i = 0; i < n; ++i) {
    t[i] = n == 1 ? (T + 1) / 2
                  : 1 + static_cast<int>(std::llround(static_cast<double>(T - 1) * i / (n - 1)));
  }
  Tensor eps(b.z0.shape());
  Rng(seed).stream("val-eps").fill_normal(eps.data(), eps.size());

  const Tensor zt = diffusion::add_noise(sched, b.z0, eps, t);
  net::ForwardOptions opts;
  opts.skip = vanilla_skip(model);
  const Tensor eps_hat = model.predict(zt, t, b.labels, opts);
  return mse_plain(eps_hat, eps);
}

}  // namespace

std::vector<TrainItem> make_items(const std::vector<synthvid::VideoClip>& clips,
                                  bool trigger_motion) {
  std::vector<TrainItem> items;
  items.reserve(clips.size());
  for (const synthvid::VideoClip& clip : clips) {
    if (!clip.spec) {
      throw ConfigError("make_items: clip carries no spec, labels are unknown");
    }
    TrainItem it{diffusion::to_signal(clip), net::labels_for(*clip.spec)};
    if (trigger_motion) it.labels.motion_id = net::kCustomMotionId;
    items.push_back(std::move(it));
  }
  return items;
}

void sgd_step(const std::vector<ag::NodeRef>& params, double lr) {
  for (const ag::NodeRef& p : params) {
    if (!p->has_grad) continue;
    double* w = p->value.data();
    const double* g = p->grad.data();
    for (int64_t i = 0; i < p->value.size(); ++i) w[i] -= lr * g[i];
    p->clear_grad();
  }
}

void set_requires_grad(const std::vector<ag::NodeRef>& params, bool on) {
  for (const ag::NodeRef& p : params) p->requires_grad = on;
}

double grad_norm_sq(const std::vector<ag::NodeRef>& params) {
  double acc = 0.0;
  for (const ag::NodeRef& p : params) {
    if (!p->has_grad) continue;
    const double* g = p->grad.data();
    for (int64_t i = 0; i < p->value.size(); ++i) acc += g[i] * g[i];
  }
  return acc;
}

FreezeGuard::FreezeGuard(const std::vector<ag::NodeRef>& params) : params_(params) {
  saved_.reserve(params_.size());
  for (const ag::NodeRef& p : params_) {
    saved_.push_back(p->requires_grad ? 1 : 0);
    p->requires_grad = false;
  }
}

FreezeGuard::~FreezeGuard() {
  for (size_t i = 0; i < params_.size(); ++i) params_[i]->requires_grad = saved_[i] != 0;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("trainer: lr must be positive");
  if (steps < 1) throw ConfigError("trainer: steps must be >= 1");
  if (batch < 1) throw ConfigError("trainer: batch must be >= 1");
  if (rank < 1) throw ConfigError("trainer: rank must be >= 1");
  if (!(beta > 0.0)) throw ConfigError("trainer: beta must be positive");
  if (ckpt_every < 0) throw ConfigError("trainer: ckpt_every must be >= 0");
  sched.validate();
}

double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  const size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  if (values.size() % 2 == 1) return values[mid];
  const double hi = values[mid];
  const double lo = *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lo + hi);
}

double PhaseReport::final_loss() const {
  return loss_curve.empty() ? std::numeric_limits<double>::quiet_NaN() : loss_curve.back();
}

double PhaseReport::first_decile_median() const {
  if (loss_curve.empty()) return std::numeric_limits<double>::quiet_NaN();
  const size_t n = std::max<size_t>(1, loss_curve.size() / 10);
  return median({loss_curve.begin(), loss_curve.begin() + n});
}

double PhaseReport::last_decile_median() const {
  if (loss_curve.empty()) return std::numeric_limits<double>::quiet_NaN();
  const size_t n = std::max<size_t>(1, loss_curve.size() / 10);
  return median({loss_curve.end() - n, loss_curve.end()});
}

PhaseReport pretrain_base(net::UNet& model, const std::vector<TrainItem>& corpus,
                          const TrainConfig& cfg, const std::vector<TrainItem>& val,
                          const std::filesystem::path& snapshot_dir, const StepLogger& log) {
  cfg.validate();
  if (corpus.empty()) throw ConfigError("pretrain_base: corpus is empty");
  check_items("pretrain_base", corpus, model);
  if (!val.empty()) check_items("pretrain_base", val, model);

  const diffusion::NoiseSchedule sched(cfg.sched);
  Rng batch_rng = Rng(cfg.seed).stream("batch");
  Rng t_rng = Rng(cfg.seed).stream("t");
  Rng eps_rng = Rng(cfg.seed).stream("eps");

  PhaseReport rep;
  rep.loss_curve.reserve(static_cast<size_t>(cfg.steps));
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<int64_t> idx(cfg.batch);
    for (int64_t& i : idx) i = batch_rng.uniform_int(static_cast<int64_t>(corpus.size()));
    Batch b = gather_batch(corpus, idx);

    std::vector<int> t(cfg.batch);
    for (int& ti : t) ti = 1 + static_cast<int>(t_rng.uniform_int(sched.steps()));
    Tensor eps(b.z0.shape());
    eps_rng.fill_normal(eps.data(), eps.size());

    auto graph = [&](const Tensor& zt, const std::vector<int>& tt) {
      net::ForwardOptions opts;
      opts.skip = vanilla_skip(model);
      return model.forward(ag::constant(zt), tt, b.labels, opts);
    };
    ag::NodeRef loss = diffusion::training_loss(graph, sched, b.z0, t, eps);
    const double value = scalar(loss->value);
    if (!std::isfinite(value)) diverged("pretraining", step, value);
    ag::backward(loss);
    sgd_step(model.parameters(), cfg.lr);

    rep.loss_curve.push_back(value);
    if (log) log(step, cfg.steps, value);
    if (cfg.ckpt_every > 0 && !snapshot_dir.empty() && step % cfg.ckpt_every == 0) {
      save_model_atomic(model, snapshot_dir / ("base-" + std::to_string(step) + ".msc"));
    }
  }
  if (!val.empty()) rep.val_loss = eval_items(model, val, sched, cfg.seed);
  return rep;
}

PhaseReport train_spatial_path(const net::UNet& model, adapters::InjectionPlan& plan,
                               const std::vector<TrainItem>& refset, const TrainConfig& cfg,
                               const StepLogger& log) {
  cfg.validate();
  if (refset.empty()) throw ConfigError("train_spatial_path: reference set is empty");
  check_items("train_spatial_path", refset, model);
  if (plan.mode != adapters::PlanMode::kSpatialPath) {
    throw PlanError("train_spatial_path: plan must target spatial self-attention, got mode '" +
                    adapters::to_string(plan.mode) + "'");
  }

  const diffusion::NoiseSchedule sched(cfg.sched);
  const FreezeGuard freeze(model.parameters());
  Rng batch_rng = Rng(cfg.seed).stream("batch");
  Rng frame_rng = Rng(cfg.seed).stream("frame");
  Rng t_rng = Rng(cfg.seed).stream("t");
  Rng eps_rng = Rng(cfg.seed).stream("eps");
  const int64_t frames = refset[0].z0.dim(0);

  PhaseReport rep;
  rep.loss_curve.reserve(static_cast<size_t>(cfg.steps));
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<int64_t> idx(cfg.batch), frame(cfg.batch);
    for (int64_t& i : idx) i = batch_rng.uniform_int(static_cast<int64_t>(refset.size()));
    for (int64_t& f : frame) f = frame_rng.uniform_int(frames);
    Batch b = gather_frames(refset, idx, frame);

    std::vector<int> t(cfg.batch);
    for (int& ti : t) ti = 1 + static_cast<int>(t_rng.uniform_int(sched.steps()));
    Tensor eps(b.z0.shape());
    eps_rng.fill_normal(eps.data(), eps.size());

    auto graph = [&](const Tensor& zt, const std::vector<int>& tt) {
      net::ForwardOptions opts;
      opts.plan = &plan;
      opts.skip = vanilla_skip(model);
      return model.forward(ag::constant(zt), tt, b.labels, opts);
    };
    ag::NodeRef loss = diffusion::training_loss(graph, sched, b.z0, t, eps);
    const double value = scalar(loss->value);
    if (!std::isfinite(value)) diverged("spatial path", step, value);
    ag::backward(loss);
    sgd_step(plan.parameters(), cfg.lr);

    rep.loss_curve.push_back(value);
    if (log) log(step, cfg.steps, value);
  }
  return rep;
}

PhaseReport train_temporal_path(const net::UNet& model, adapters::InjectionPlan& plan,
                                const adapters::InjectionPlan* spatial_frozen,
                                const std::vector<TrainItem>& refset, const TrainConfig& cfg,
                                const StepLogger& log) {
  cfg.validate();
  if (refset.empty()) throw ConfigError("train_temporal_path: reference set is empty");
  check_items("train_temporal_path", refset, model);
  if (plan.mode == adapters::PlanMode::kSpatialPath) {
    throw PlanError("train_temporal_path: plan must target temporal transformers");
  }
  if (spatial_frozen && spatial_frozen->mode != adapters::PlanMode::kSpatialPath) {
    throw PlanError("train_temporal_path: the frozen plan must be a spatial-path plan");
  }

  const diffusion::NoiseSchedule sched(cfg.sched);
  const FreezeGuard freeze_model(model.parameters());
  std::optional<FreezeGuard> freeze_spatial;
  if (spatial_frozen) freeze_spatial.emplace(spatial_frozen->parameters());

  adapters::InjectionPlan joint;
  const adapters::InjectionPlan* fwd_plan = &plan;
  if (spatial_frozen) {
    joint = merge_plans(*spatial_frozen, plan);
    fwd_plan = &joint;
  }

  net::SkipSettings skip = vanilla_skip(model);
  if (cfg.ah_in_training) {
    skip.mode = net::SkipMode::kAppearanceHighway;
    skip.beta = cfg.beta;
    skip.level_mask = model.config().ah_level_mask;
  }

  Rng batch_rng = Rng(cfg.seed).stream("batch");
  Rng t_rng = Rng(cfg.seed).stream("t");
  Rng eps_rng = Rng(cfg.seed).stream("eps");

  PhaseReport rep;
  rep.loss_curve.reserve(static_cast<size_t>(cfg.steps));
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<int64_t> idx(cfg.batch);
    for (int64_t& i : idx) i = batch_rng.uniform_int(static_cast<int64_t>(refset.size()));
    Batch b = gather_batch(refset, idx);

    std::vector<int> t(cfg.batch);
    for (int& ti : t) ti = 1 + static_cast<int>(t_rng.uniform_int(sched.steps()));
    Tensor eps(b.z0.shape());
    eps_rng.fill_normal(eps.data(), eps.size());

    auto graph = [&](const Tensor& zt, const std::vector<int>& tt) {
      net::ForwardOptions opts;
      opts.plan = fwd_plan;
      opts.skip = skip;
      return model.forward(ag::constant(zt), tt, b.labels, opts);
    };
    ag::NodeRef loss = diffusion::training_loss(graph, sched, b.z0, t, eps);
    const double value = scalar(loss->value);
    if (!std::isfinite(value)) diverged("temporal path", step, value);
    ag::backward(loss);
    sgd_step(plan.parameters(), cfg.lr);

    rep.loss_curve.push_back(value);
    if (log) log(step, cfg.steps, value);
  }
  return rep;
}

adapters::InjectionPlan merge_plans(const adapters::InjectionPlan& a,
                                    const adapters::InjectionPlan& b) {
  adapters::InjectionPlan out;
  out.mode = adapters::PlanMode::kCustom;
  out.rank = std::max(a.rank, b.rank);
  out.scale = 1.0;  // entries carry their own adapter scales
  out.entries = a.entries;
  for (const adapters::PlanEntry& e : b.entries) {
    if (out.find(e.path, e.slot)) {
      throw PlanError("merge_plans: both plans adapt " + e.path + " " +
                      adapters::to_string(e.slot));
    }
    out.entries.push_back(e);
  }
  return out;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    os << text;
    os.flush();
    if (!os) throw DependencyError("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void save_model_atomic(const net::UNet& model, const fs::path& path) {
  fs::path tmp = path;
  tmp += ".tmp";
  model.save(tmp);
  fs::rename(tmp, path);
}

void save_plan_atomic(const adapters::InjectionPlan& plan, const fs::path& path) {
  fs::path tmp = path;
  tmp += ".tmp";
  net::save_plan(tmp, plan);
  fs::rename(tmp, path);
}

namespace {

bool same_net_config(const net::UNetConfig& a, const net::UNetConfig& b) {
  return a.levels == b.levels && a.base_channels == b.base_channels && a.heads == b.heads &&
         a.patch == b.patch && a.height == b.height && a.width == b.width &&
         a.max_frames == b.max_frames && a.time_embed_dim == b.time_embed_dim &&
         a.cond_embed_dim == b.cond_embed_dim && a.temporal_zero_init == b.temporal_zero_init &&
         a.skip_mode == b.skip_mode && a.beta == b.beta &&
         a.vanilla_skip_scale == b.vanilla_skip_scale && a.ah_level_mask == b.ah_level_mask;
}

void append_phase(std::ostringstream& os, const char* name, const PhaseReport& rep,
                  bool reused) {
  os << "[" << name << "]\n";
  if (reused) {
    // The phase checkpoint was taken as-is from disk; this run has no loss
    // curve for it.
    os << "reused = true\n";
    return;
  }
  os << "steps = " << rep.loss_curve.size() << "\n"
     << "final_loss = " << fmt_double(rep.final_loss()) << "\n"
     << "first_decile_median = " << fmt_double(rep.first_decile_median()) << "\n"
     << "last_decile_median = " << fmt_double(rep.last_decile_median()) << "\n";
}

std::string curve_csv(const PhaseReport& rep) {
  std::ostringstream os;
  os << "step,loss\n";
  for (size_t i = 0; i < rep.loss_curve.size(); ++i) {
    os << (i + 1) << "," << fmt_double(rep.loss_curve[i]) << "\n";
  }
  return os.str();
}

}  // namespace

CheckpointSet run_customization(const config::RunConfig& rc, const RunOptions& opt) {
  rc.validate();
  if (opt.max_phase < 0 || opt.max_phase > 2) {
    throw ConfigError("run_customization: max_phase must lie in [0, 2]");
  }
  const auto info = [&](const std::string& msg) {
    if (opt.info) opt.info(msg);
  };

  CheckpointSet out;
  out.dir = fs::path(rc.out_dir);
  out.base = out.dir / "base.msc";
  out.spatial = out.dir / "spatial.msc";
  out.temporal = out.dir / "temporal.msc";
  out.manifest = out.dir / "manifest.txt";
  out.config_file = out.dir / "config.cfg";
  out.config_hash = rc.hash();
  fs::create_directories(out.dir);

  // Data. The customization motion is held out of the corpus entirely, so
  // the temporal path has to learn it rather than retrieve it.
  const synthvid::MotionLabel held_out = rc.custom_motion_label();
  std::vector<synthvid::MotionLabel> corpus_motions;
  for (int m = 0; m < synthvid::kNumMotions; ++m) {
    if (m != static_cast<int>(held_out)) {
      corpus_motions.push_back(static_cast<synthvid::MotionLabel>(m));
    }
  }
  const int f = rc.synth.frames, h = rc.synth.height, w = rc.synth.width;
  const std::vector<TrainItem> corpus =
      make_items(synthvid::build_corpus(corpus_motions, rc.synth.corpus_per_motion, f, h, w,
                                        rc.seed),
                 /*trigger_motion=*/false);
  const int per_val =
      (rc.pretrain.val_clips + static_cast<int>(corpus_motions.size()) - 1) /
      static_cast<int>(corpus_motions.size());
  std::vector<synthvid::VideoClip> val_clips = synthvid::build_corpus(
      corpus_motions, per_val, f, h, w, derive_seed(rc.seed, "val-corpus"));
  val_clips.resize(static_cast<size_t>(rc.pretrain.val_clips));
  const std::vector<TrainItem> val = make_items(val_clips, /*trigger_motion=*/false);
  const std::vector<TrainItem> refset =
      make_items(synthvid::build_reference_set(held_out, rc.synth.refset_count, rc.artifact(),
                                               f, h, w, rc.seed),
                 /*trigger_motion=*/true);

  // Phase 0: pretraining (or reuse). Later phases always resume from the
  // checkpoint as written, so a replay from disk is bit-identical.
  if (opt.reuse_base) {
    if (!fs::exists(out.base)) {
      throw DependencyError("run_customization: reuse_base set but " + out.base.string() +
                            " is missing; run the pretraining phase first");
    }
    info("pretrain: reusing " + out.base.string());
  } else {
    net::UNet fresh(rc.net, rc.seed);
    TrainConfig pc;
    pc.lr = rc.pretrain.lr;
    pc.steps = rc.pretrain.steps;
    pc.batch = rc.pretrain.batch;
    pc.seed = derive_seed(rc.seed, "pretrain");
    pc.sched = rc.sched;
    pc.ckpt_every = rc.pretrain.ckpt_every;
    info("pretrain: " + std::to_string(pc.steps) + " steps on " +
         std::to_string(corpus.size()) + " clips");
    out.pretrain_report = pretrain_base(fresh, corpus, pc, val, out.dir, opt.log);
    save_model_atomic(fresh, out.base);
    info("pretrain: val_loss = " + fmt_double(out.pretrain_report.val_loss));
  }
  net::UNet model = net::UNet::load(out.base);
  if (!same_net_config(model.config(), rc.net)) {
    throw ConfigError("run_customization: " + out.base.string() +
                      " was trained with a different net configuration");
  }
  const auto write_provenance = [&](bool ran_spatial, bool ran_temporal) {
    write_text_atomic(out.config_file, rc.canonical());
    if (!opt.reuse_base) {
      write_text_atomic(out.dir / "pretrain_loss.csv", curve_csv(out.pretrain_report));
    }
    if (ran_spatial) {
      write_text_atomic(out.dir / "spatial_loss.csv", curve_csv(out.spatial_report));
    }
    if (ran_temporal) {
      write_text_atomic(out.dir / "temporal_loss.csv", curve_csv(out.temporal_report));
    }
  };
  if (opt.max_phase < 1) {
    write_provenance(false, false);
    return out;
  }

  // Phase 1: spatial path (or reuse).
  if (opt.reuse_spatial) {
    if (!fs::exists(out.spatial)) {
      throw DependencyError("run_customization: reuse_spatial set but " + out.spatial.string() +
                            " is missing; run the spatial phase first");
    }
    info("spatial: reusing " + out.spatial.string());
  } else {
    adapters::InjectionPlan splan =
        model.build_plan(adapters::PlanPreset{adapters::PlanMode::kSpatialPath, {}},
                         rc.spatial.rank, rc.spatial.scale, derive_seed(rc.seed, "spatial"));
    TrainConfig sc;
    sc.lr = rc.spatial.lr;
    sc.steps = rc.spatial.steps;
    sc.batch = rc.spatial.batch;
    sc.rank = rc.spatial.rank;
    sc.scale = rc.spatial.scale;
    sc.seed = derive_seed(rc.seed, "spatial-train");
    sc.sched = rc.sched;
    info("spatial: " + std::to_string(sc.steps) + " steps on " + std::to_string(refset.size()) +
         " reference clips");
    out.spatial_report = train_spatial_path(model, splan, refset, sc, opt.log);
    save_plan_atomic(splan, out.spatial);
  }
  adapters::InjectionPlan spatial_plan = net::load_plan(out.spatial, model);
  if (opt.max_phase < 2) {
    write_provenance(!opt.reuse_spatial, false);
    return out;
  }

  // Phase 2: temporal path.
  {
    adapters::InjectionPlan tplan =
        model.build_plan(adapters::plan_preset_from_string(rc.temporal.plan), rc.temporal.rank,
                         rc.temporal.scale, derive_seed(rc.seed, "temporal"));
    TrainConfig tc;
    tc.lr = rc.temporal.lr;
    tc.steps = rc.temporal.steps;
    tc.batch = rc.temporal.batch;
    tc.rank = rc.temporal.rank;
    tc.scale = rc.temporal.scale;
    tc.plan = rc.temporal.plan;
    tc.ah_in_training = rc.temporal.ah_in_training;
    tc.beta = rc.net.beta;
    tc.seed = derive_seed(rc.seed, "temporal-train");
    tc.sched = rc.sched;
    info("temporal: " + std::to_string(tc.steps) + " steps, plan '" + tc.plan + "'" +
         (tc.ah_in_training ? ", AH in training" : ""));
    out.temporal_report = train_temporal_path(model, tplan, &spatial_plan, refset, tc, opt.log);
    save_plan_atomic(tplan, out.temporal);
  }

  // Provenance: effective config, loss curves, and the manifest binding them.
  write_provenance(!opt.reuse_spatial, true);

  std::ostringstream ms;
  ms << "# customization manifest\n"
     << "schema = 1\n\n"
     << "[run]\n"
     << "config_hash = " << rc.hash_hex() << "\n"
     << "seed = " << rc.seed << "\n"
     << "config_file = config.cfg\n\n"
     << "[checkpoints]\n"
     << "base = base.msc\n"
     << "spatial = spatial.msc\n"
     << "temporal = temporal.msc\n\n";
  append_phase(ms, "pretrain", out.pretrain_report, opt.reuse_base);
  if (!opt.reuse_base) {
    ms << "val_loss = " << fmt_double(out.pretrain_report.val_loss) << "\n"
       << "loss_curve = pretrain_loss.csv\n";
  }
  ms << "\n";
  append_phase(ms, "spatial", out.spatial_report, opt.reuse_spatial);
  if (!opt.reuse_spatial) ms << "loss_curve = spatial_loss.csv\n";
  ms << "\n";
  append_phase(ms, "temporal", out.temporal_report, false);
  ms << "plan = " << rc.temporal.plan << "\n"
     << "ah_in_training = " << (rc.temporal.ah_in_training ? "true" : "false") << "\n"
     << "loss_curve = temporal_loss.csv\n";
  write_text_atomic(out.manifest, ms.str());
  info("manifest: " + out.manifest.string());
  return out;
}

Manifest Manifest::read(const fs::path& path) {
  const config::ConfigFile cf = config::ConfigFile::parse_file(path);
  Manifest m;
  m.schema = cf.get_u64("", "schema", 0);
  if (m.schema != 1) {
    throw FileFormatError(path.string() + ": unsupported manifest schema " +
                          std::to_string(m.schema));
  }
  const std::string hex = cf.get_string("run", "config_hash", "");
  if (hex.size() != 16 || hex.find_first_not_of("0123456789abcdef") != std::string::npos) {
    throw FileFormatError(path.string() + ": bad config_hash '" + hex + "'");
  }
  m.config_hash = std::stoull(hex, nullptr, 16);
  m.seed = cf.get_u64("run", "seed", 0);
  m.config_file = cf.get_string("run", "config_file", "");
  m.base = cf.get_string("checkpoints", "base", "");
  m.spatial = cf.get_string("checkpoints", "spatial", "");
  m.temporal = cf.get_string("checkpoints", "temporal", "");
  for (const std::string* s : {&m.config_file, &m.base, &m.spatial, &m.temporal}) {
    if (s->empty()) throw FileFormatError(path.string() + ": manifest is missing entries");
  }
  return m;
}

}  // namespace motionsep::trainer
