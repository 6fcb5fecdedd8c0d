#include "motionsep/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "motionsep/errors.hpp"

namespace motionsep::diffusion {

ScheduleKind schedule_kind_from_string(std::string_view s) {
  if (s == "linear") return ScheduleKind::kLinear;
  if (s == "cosine") return ScheduleKind::kCosine;
  throw VocabError("unknown schedule kind: " + std::string(s));
}

std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::kLinear ? "linear" : "cosine";
}

void ScheduleConfig::validate() const {
  if (steps < 2) throw ConfigError("diffusion.steps must be >= 2");
  if (kind == ScheduleKind::kLinear) {
    if (beta_start <= 0.0 || beta_end >= 1.0 || beta_start > beta_end) {
      throw ConfigError("diffusion betas must satisfy 0 < beta_start <= beta_end < 1");
    }
  } else {
    if (cosine_s <= 0.0) throw ConfigError("diffusion.cosine_s must be positive");
  }
}

NoiseSchedule::NoiseSchedule(const ScheduleConfig& cfg) {
  cfg.validate();
  const int T = cfg.steps;
  beta_.resize(static_cast<size_t>(T));
  if (cfg.kind == ScheduleKind::kLinear) {
    for (int t = 1; t <= T; ++t) {
      beta_[static_cast<size_t>(t - 1)] =
          cfg.beta_start + (cfg.beta_end - cfg.beta_start) * (t - 1) / (T - 1);
    }
  } else {
    // Cosine schedule: abar(t) = f(t)/f(0) with
    // f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2), betas derived and clipped.
    auto f = [&](double t) {
      const double x = (t / T + cfg.cosine_s) / (1.0 + cfg.cosine_s) * M_PI / 2.0;
      const double c = std::cos(x);
      return c * c;
    };
    const double f0 = f(0.0);
    double prev = 1.0;
    for (int t = 1; t <= T; ++t) {
      const double abar = f(static_cast<double>(t)) / f0;
      const double b = std::min(1.0 - abar / prev, 0.999);
      beta_[static_cast<size_t>(t - 1)] = b;
      prev *= 1.0 - b;
    }
  }

  alpha_.resize(beta_.size());
  alpha_bar_.assign(beta_.size() + 1, 1.0);  // alpha_bar_[0] = 1
  sigma_.resize(beta_.size());
  for (size_t i = 0; i < beta_.size(); ++i) {
    alpha_[i] = 1.0 - beta_[i];
    alpha_bar_[i + 1] = alpha_bar_[i] * alpha_[i];
    // Posterior variance (1-abar_{t-1})/(1-abar_t) * beta_t; zero at t=1.
    sigma_[i] = std::sqrt((1.0 - alpha_bar_[i]) / (1.0 - alpha_bar_[i + 1]) * beta_[i]);
  }
}

namespace {

void check_t(int t, int lo, int hi, const char* what) {
  if (t < lo || t > hi) {
    throw ConfigError(std::string(what) + " timestep " + std::to_string(t) + " outside [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

}  // namespace

double NoiseSchedule::beta(int t) const {
  check_t(t, 1, steps(), "beta");
  return beta_[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha(int t) const {
  check_t(t, 1, steps(), "alpha");
  return alpha_[static_cast<size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  check_t(t, 0, steps(), "alpha_bar");
  return alpha_bar_[static_cast<size_t>(t)];
}

double NoiseSchedule::sigma(int t) const {
  check_t(t, 1, steps(), "sigma");
  return sigma_[static_cast<size_t>(t - 1)];
}

Tensor add_noise(const NoiseSchedule& s, const Tensor& z0, const Tensor& eps, int t) {
  if (!z0.same_shape(eps)) {
    throw ShapeError("add_noise: z0 " + shape_str(z0.shape()) + " vs eps " +
                     shape_str(eps.shape()));
  }
  check_t(t, 1, s.steps(), "add_noise");
  const double a = std::sqrt(s.alpha_bar(t));
  const double b = std::sqrt(1.0 - s.alpha_bar(t));
  Tensor out(z0.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = a * z0[i] + b * eps[i];
  return out;
}

Tensor add_noise(const NoiseSchedule& s, const Tensor& z0, const Tensor& eps,
                 const std::vector<int>& t) {
  if (!z0.same_shape(eps)) {
    throw ShapeError("add_noise: z0 " + shape_str(z0.shape()) + " vs eps " +
                     shape_str(eps.shape()));
  }
  if (z0.ndim() < 1 || z0.dim(0) != static_cast<int64_t>(t.size())) {
    throw ShapeError("add_noise: " + std::to_string(t.size()) + " timesteps for batch " +
                     shape_str(z0.shape()));
  }
  const int64_t rows = z0.dim(0);
  const int64_t stride = rows == 0 ? 0 : z0.size() / rows;
  Tensor out(z0.shape());
  for (int64_t r = 0; r < rows; ++r) {
    check_t(t[static_cast<size_t>(r)], 1, s.steps(), "add_noise");
    const double abar = s.alpha_bar(t[static_cast<size_t>(r)]);
    const double a = std::sqrt(abar), b = std::sqrt(1.0 - abar);
    for (int64_t i = r * stride; i < (r + 1) * stride; ++i) out[i] = a * z0[i] + b * eps[i];
  }
  return out;
}

ag::NodeRef training_loss(const BatchEpsGraph& model, const NoiseSchedule& s, const Tensor& z0,
                          const std::vector<int>& t, const Tensor& eps) {
  Tensor zt = add_noise(s, z0, eps, t);
  ag::NodeRef pred = model(zt, t);
  if (!pred->value.same_shape(eps)) {
    throw ShapeError("training_loss: model returned " + shape_str(pred->value.shape()) +
                     " for target " + shape_str(eps.shape()));
  }
  return ag::mse(pred, ag::constant(eps));
}

Tensor ddpm_step(const NoiseSchedule& s, const Tensor& zt, const Tensor& eps_hat, int t,
                 const Tensor& noise) {
  if (!zt.same_shape(eps_hat)) {
    throw ShapeError("ddpm_step: z " + shape_str(zt.shape()) + " vs eps_hat " +
                     shape_str(eps_hat.shape()));
  }
  const double sig = t == 1 ? 0.0 : s.sigma(t);
  if (sig > 0.0 && !zt.same_shape(noise)) {
    throw ShapeError("ddpm_step: noise shape mismatch at t=" + std::to_string(t));
  }
  const double inv_sqrt_alpha = 1.0 / std::sqrt(s.alpha(t));
  const double coef = (1.0 - s.alpha(t)) / std::sqrt(1.0 - s.alpha_bar(t));
  Tensor out(zt.shape());
  for (int64_t i = 0; i < out.size(); ++i) {
    out[i] = inv_sqrt_alpha * (zt[i] - coef * eps_hat[i]);
    if (sig > 0.0) out[i] += sig * noise[i];
  }
  return out;
}

Tensor sample_pli(const NoiseSchedule& s, const Shape& shape, const EpsModel& adapted,
                  const EpsModel& base, uint64_t seed, const PliOptions& opts) {
  const int T = s.steps();
  if (opts.tau < 0 || opts.tau > T) {
    throw ConfigError("pli tau " + std::to_string(opts.tau) + " outside [0, " +
                      std::to_string(T) + "]");
  }
  for (int t : opts.snapshot_at) check_t(t, 1, T, "snapshot");

  // One noise stream drives everything, with a fixed draw order that does
  // not depend on which model produced the predictions.
  Rng rng = Rng(seed).stream("sample");
  Tensor z(shape);
  rng.fill_normal(z.data(), z.size());

  Tensor step_noise(shape);
  for (int t = T; t >= 1; --t) {
    const bool adapted_phase = t > opts.tau;
    Tensor eps_hat = adapted_phase ? adapted(z, t) : base(z, t);
    if (!eps_hat.same_shape(z)) {
      throw ShapeError("sampler: model returned " + shape_str(eps_hat.shape()) + " for z " +
                       shape_str(z.shape()));
    }
    if (opts.debug) (adapted_phase ? opts.debug->adapted_calls : opts.debug->base_calls)++;
    if (t > 1) {
      rng.fill_normal(step_noise.data(), step_noise.size());
      z = ddpm_step(s, z, eps_hat, t, step_noise);
    } else {
      z = ddpm_step(s, z, eps_hat, t, Tensor());
    }
    if (opts.debug &&
        std::find(opts.snapshot_at.begin(), opts.snapshot_at.end(), t) != opts.snapshot_at.end()) {
      opts.debug->snapshot_steps.push_back(t);
      opts.debug->snapshots.push_back(z);
    }
  }
  return z;
}

Tensor sample(const NoiseSchedule& s, const Shape& shape, const EpsModel& model, uint64_t seed,
              const PliOptions& opts) {
  PliOptions o = opts;
  o.tau = 0;
  return sample_pli(s, shape, model, model, seed, o);
}

Tensor to_signal(const synthvid::VideoClip& clip) {
  Tensor out(clip.data.shape());
  for (int64_t i = 0; i < out.size(); ++i) out[i] = 2.0 * clip.data[i] - 1.0;
  return out;
}

synthvid::VideoClip to_video_clip(const Tensor& z) {
  Tensor data = z;
  if (z.ndim() == 5 && z.dim(0) == 1) {
    data = z.reshaped({z.dim(1), z.dim(2), z.dim(3), z.dim(4)});
  }
  if (data.ndim() != 4 || data.dim(3) != 3) {
    throw ShapeError("to_video_clip: want (f, h, w, 3), got " + shape_str(z.shape()));
  }
  for (int64_t i = 0; i < data.size(); ++i) {
    data[i] = std::clamp((data[i] + 1.0) / 2.0, 0.0, 1.0);
  }
  synthvid::VideoClip clip;
  clip.data = std::move(data);
  return clip;
}

}  // namespace motionsep::diffusion
