#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "motionsep/autograd.hpp"
#include "motionsep/rng.hpp"
#include "motionsep/synthvid.hpp"
#include "motionsep/tensor.hpp"

namespace motionsep::diffusion {

enum class ScheduleKind { kLinear, kCosine };

ScheduleKind schedule_kind_from_string(std::string_view s);
std::string to_string(ScheduleKind k);

struct ScheduleConfig {
  ScheduleKind kind = ScheduleKind::kLinear;
  int steps = 100;           // T
  double beta_start = 1e-3;  // linear endpoints, scaled for the short T
  double beta_end = 0.08;
  double cosine_s = 0.008;   // cosine schedule offset

  void validate() const;  // throws ConfigError
};

// Precomputed DDPM quantities. Timesteps are 1-indexed: t runs over [1, T],
// and alpha_bar(0) == 1 by convention, which pins sigma(1) == 0 so the last
// reverse step is deterministic.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(const ScheduleConfig& cfg);

  int steps() const { return static_cast<int>(beta_.size()); }
  double beta(int t) const;       // t in [1, T]
  double alpha(int t) const;      // 1 - beta_t
  double alpha_bar(int t) const;  // t in [0, T]
  double sigma(int t) const;      // ancestral posterior stddev, t in [1, T]

 private:
  std::vector<double> beta_, alpha_, alpha_bar_, sigma_;
};

// Forward process: z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
Tensor add_noise(const NoiseSchedule& s, const Tensor& z0, const Tensor& eps, int t);

// Batched forward process with one timestep per leading-axis row.
Tensor add_noise(const NoiseSchedule& s, const Tensor& z0, const Tensor& eps,
                 const std::vector<int>& t);

// One reverse step given the model's noise prediction at t:
//   z_{t-1} = (z_t - (1-alpha_t)/sqrt(1-abar_t) eps_hat) / sqrt(alpha_t)
//             + sigma_t * noise.
// `noise` may be empty when sigma_t == 0 (t == 1); at t == 1 the stochastic
// term is dropped regardless of what is passed.
Tensor ddpm_step(const NoiseSchedule& s, const Tensor& zt, const Tensor& eps_hat, int t,
                 const Tensor& noise);

// A differentiable batch denoiser: (z_t, per-row t) -> eps_hat graph node.
// Conditioning, adapters and skip settings are bound by the caller.
using BatchEpsGraph = std::function<ag::NodeRef(const Tensor& zt, const std::vector<int>& t)>;

// Denoising score-matching loss: mse(eps, model(add_noise(z0, t, eps), t)).
// Returns the scalar loss node; backward() reaches whatever trainable leaves
// the callback wired in.
ag::NodeRef training_loss(const BatchEpsGraph& model, const NoiseSchedule& s, const Tensor& z0,
                          const std::vector<int>& t, const Tensor& eps);

// A plain denoiser for sampling: (z_t, t) -> predicted eps, same shape.
using EpsModel = std::function<Tensor(const Tensor&, int)>;

// Bookkeeping for sampler tests and probes.
struct SampleDebug {
  int adapted_calls = 0;
  int base_calls = 0;
  std::vector<int> snapshot_steps;  // the t whose step produced each snapshot
  std::vector<Tensor> snapshots;    // z_{t-1} right after that step
};

struct PliOptions {
  // Phase boundary: the adapted model denoises t > tau, the base model
  // t <= tau. tau == 0 uses the adapted model everywhere; tau == T the base.
  int tau = 0;
  std::vector<int> snapshot_at;  // t values to snapshot (after their step)
  SampleDebug* debug = nullptr;
};

// Ancestral sampler with the phased two-model split. All randomness comes
// from `seed` in a fixed draw order, so two runs that only differ in which
// model handles a phase see identical noise.
Tensor sample_pli(const NoiseSchedule& s, const Shape& shape, const EpsModel& adapted,
                  const EpsModel& base, uint64_t seed, const PliOptions& opts = {});

// Single-model convenience wrapper (tau == 0 path).
Tensor sample(const NoiseSchedule& s, const Shape& shape, const EpsModel& model, uint64_t seed,
              const PliOptions& opts = {});

// Pixel mapping between clip space [0, 1] and the model's signal space
// [-1, 1]. to_video_clip accepts (f, h, w, 3) or (1, f, h, w, 3) and clamps.
Tensor to_signal(const synthvid::VideoClip& clip);
synthvid::VideoClip to_video_clip(const Tensor& z);

}  // namespace motionsep::diffusion
