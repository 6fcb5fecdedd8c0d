#include "motionsep/diffusion.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "motionsep/autograd.hpp"
#include "motionsep/errors.hpp"
#include "motionsep/rng.hpp"

using namespace motionsep;
using diffusion::NoiseSchedule;
using diffusion::PliOptions;
using diffusion::ScheduleConfig;
using diffusion::ScheduleKind;

namespace {

ScheduleConfig linear_cfg(int T) {
  ScheduleConfig c;
  c.kind = ScheduleKind::kLinear;
  c.steps = T;
  return c;
}

ScheduleConfig cosine_cfg(int T) {
  ScheduleConfig c;
  c.kind = ScheduleKind::kCosine;
  c.steps = T;
  return c;
}

}  // namespace

TEST_CASE("schedule identities hold for both kinds") {
  for (const auto& cfg : {linear_cfg(100), cosine_cfg(100), linear_cfg(7), cosine_cfg(2)}) {
    NoiseSchedule s(cfg);
    const int T = s.steps();
    REQUIRE(T == cfg.steps);
    CHECK(s.alpha_bar(0) == 1.0);

    // Independent running product, and the defining relations.
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
      CHECK(s.alpha(t) > 0.0);
      CHECK(s.alpha(t) < 1.0);
      CHECK(std::abs(s.alpha(t) - (1.0 - s.beta(t))) < 1e-15);
      prod *= s.alpha(t);
      CHECK(std::abs(s.alpha_bar(t) - prod) < 1e-6);
      // abar strictly decreasing
      CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
      // sigma_t^2 = (1-abar_{t-1})/(1-abar_t) * beta_t
      const double want =
          (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
      CHECK(std::abs(s.sigma(t) * s.sigma(t) - want) < 1e-12);
      CHECK(std::isfinite(s.sigma(t)));
    }
    CHECK(s.sigma(1) == 0.0);  // abar_0 = 1 pins the last step deterministic
    if (T >= 50) CHECK(s.alpha_bar(1) > 0.9);  // near-clean head for real schedules
  }
}

TEST_CASE("linear schedule endpoints and terminal noising") {
  ScheduleConfig cfg = linear_cfg(100);
  NoiseSchedule s(cfg);
  CHECK(s.beta(1) == cfg.beta_start);
  CHECK(std::abs(s.beta(100) - cfg.beta_end) < 1e-15);
  // Interior point of the linspace.
  CHECK(std::abs(s.beta(50) - (cfg.beta_start + (cfg.beta_end - cfg.beta_start) * 49.0 / 99.0)) <
        1e-15);
  // By T the signal must be essentially gone.
  CHECK(s.alpha_bar(100) < 0.05);
}

TEST_CASE("schedule validation") {
  CHECK_THROWS_AS(NoiseSchedule{linear_cfg(1)}, ConfigError);
  ScheduleConfig bad = linear_cfg(10);
  bad.beta_start = 0.0;
  CHECK_THROWS_AS(NoiseSchedule{bad}, ConfigError);
  bad = linear_cfg(10);
  bad.beta_end = 1.0;
  CHECK_THROWS_AS(NoiseSchedule{bad}, ConfigError);
  bad = linear_cfg(10);
  bad.beta_start = 0.5;
  bad.beta_end = 0.1;
  CHECK_THROWS_AS(NoiseSchedule{bad}, ConfigError);
  bad = cosine_cfg(10);
  bad.cosine_s = 0.0;
  CHECK_THROWS_AS(NoiseSchedule{bad}, ConfigError);

  NoiseSchedule ok(linear_cfg(10));
  CHECK_THROWS_AS(ok.beta(0), ConfigError);
  CHECK_THROWS_AS(ok.beta(11), ConfigError);
  CHECK_THROWS_AS(ok.alpha_bar(-1), ConfigError);
  CHECK_NOTHROW(ok.alpha_bar(0));
}

TEST_CASE("add_noise matches the closed form") {
  NoiseSchedule s(linear_cfg(100));
  Rng rng(5);
  Tensor z0({3, 4});
  rng.fill_normal(z0.data(), z0.size());

  // eps = 0: pure attenuation.
  Tensor zero(z0.shape());
  for (int t : {1, 37, 100}) {
    Tensor zt = diffusion::add_noise(s, z0, zero, t);
    for (int64_t i = 0; i < z0.size(); ++i) {
      CHECK(std::abs(zt[i] - std::sqrt(s.alpha_bar(t)) * z0[i]) < 1e-15);
    }
  }
  // Near-clean boundary: abar_1 ~ 1 so z_1 ~ z0.
  Tensor eps(z0.shape());
  rng.fill_normal(eps.data(), eps.size());
  Tensor z1 = diffusion::add_noise(s, z0, eps, 1);
  CHECK(max_abs_diff(z1, z0) < 0.1);

  CHECK_THROWS_AS(diffusion::add_noise(s, z0, Tensor({3, 5}), 1), ShapeError);
  CHECK_THROWS_AS(diffusion::add_noise(s, z0, zero, 0), ConfigError);
  CHECK_THROWS_AS(diffusion::add_noise(s, z0, zero, 101), ConfigError);
}

TEST_CASE("add_noise Monte Carlo moments: variance 1-abar within 5 percent") {
  NoiseSchedule s(linear_cfg(100));
  Rng rng(42);
  const int n = 10000;
  for (int t : {10, 60, 100}) {
    const double z0v = 0.7;
    Tensor z0({1}, z0v);
    double sum = 0.0, sumsq = 0.0;
    Tensor eps({1});
    for (int i = 0; i < n; ++i) {
      eps[0] = rng.normal();
      const double zt = diffusion::add_noise(s, z0, eps, t)[0];
      sum += zt;
      sumsq += zt * zt;
    }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(mean - std::sqrt(s.alpha_bar(t)) * z0v) < 0.05);
    const double want = 1.0 - s.alpha_bar(t);
    CHECK(std::abs(var - want) < 0.05 * want);
  }
}

TEST_CASE("batched add_noise applies one timestep per row") {
  NoiseSchedule s(linear_cfg(50));
  Rng rng(9);
  Tensor z0({3, 5}), eps({3, 5});
  rng.fill_normal(z0.data(), z0.size());
  rng.fill_normal(eps.data(), eps.size());
  const std::vector<int> ts{3, 25, 50};
  Tensor batched = diffusion::add_noise(s, z0, eps, ts);
  for (int r = 0; r < 3; ++r) {
    Tensor row0({1, 5}), rowe({1, 5});
    for (int j = 0; j < 5; ++j) {
      row0[j] = z0[r * 5 + j];
      rowe[j] = eps[r * 5 + j];
    }
    Tensor single = diffusion::add_noise(s, row0, rowe, ts[static_cast<size_t>(r)]);
    for (int j = 0; j < 5; ++j) CHECK(batched[r * 5 + j] == single[j]);
  }
  CHECK_THROWS_AS(diffusion::add_noise(s, z0, eps, std::vector<int>{1, 2}), ShapeError);
}

TEST_CASE("ddpm_step algebra and the t=1 boundary") {
  NoiseSchedule s(linear_cfg(100));
  Rng rng(11);
  Tensor zt({2, 3});
  rng.fill_normal(zt.data(), zt.size());
  Tensor zero(zt.shape());

  // eps_hat = 0 at t = 1 (sigma = 0): pure rescale by 1/sqrt(alpha).
  Tensor out = diffusion::ddpm_step(s, zt, zero, 1, Tensor());
  for (int64_t i = 0; i < zt.size(); ++i) {
    CHECK(std::abs(out[i] - zt[i] / std::sqrt(s.alpha(1))) < 1e-15);
  }

  // At t = 1 the stochastic term is dropped even when noise is provided.
  Tensor noise(zt.shape());
  rng.fill_normal(noise.data(), noise.size());
  Tensor with_noise = diffusion::ddpm_step(s, zt, zero, 1, noise);
  CHECK(max_abs_diff(out, with_noise) == 0.0);

  // Full formula at an interior step, recomputed by hand.
  Tensor eps_hat(zt.shape());
  rng.fill_normal(eps_hat.data(), eps_hat.size());
  const int t = 40;
  Tensor stepped = diffusion::ddpm_step(s, zt, eps_hat, t, noise);
  for (int64_t i = 0; i < zt.size(); ++i) {
    const double want = (zt[i] - (1.0 - s.alpha(t)) / std::sqrt(1.0 - s.alpha_bar(t)) * eps_hat[i]) /
                            std::sqrt(s.alpha(t)) +
                        s.sigma(t) * noise[i];
    CHECK(std::abs(stepped[i] - want) < 1e-14);
  }

  CHECK_THROWS_AS(diffusion::ddpm_step(s, zt, zero, 0, Tensor()), ConfigError);
  CHECK_THROWS_AS(diffusion::ddpm_step(s, zt, Tensor({2, 2}), 5, noise), ShapeError);
  CHECK_THROWS_AS(diffusion::ddpm_step(s, zt, zero, 5, Tensor({1})), ShapeError);
}

TEST_CASE("one-step round trip: noise at t=1, denoise with the true eps") {
  NoiseSchedule s(linear_cfg(100));
  Rng rng(13);
  Tensor z0({4, 4}), eps({4, 4});
  rng.fill_normal(z0.data(), z0.size());
  rng.fill_normal(eps.data(), eps.size());
  Tensor z1 = diffusion::add_noise(s, z0, eps, 1);
  Tensor back = diffusion::ddpm_step(s, z1, eps, 1, Tensor());
  CHECK(max_abs_diff(back, z0) < 1e-12);
}

TEST_CASE("training loss: oracle model scores zero, zero model scores about one") {
  NoiseSchedule s(linear_cfg(100));
  Rng rng(17);

  // Model that returns exactly the eps that was mixed in. Reconstructing it
  // from (z_t, z0, t) exercises the add_noise/loss plumbing end to end.
  Tensor z0({2, 6});
  rng.fill_normal(z0.data(), z0.size());
  Tensor eps(z0.shape());
  rng.fill_normal(eps.data(), eps.size());
  const std::vector<int> ts{20, 77};

  auto oracle = [&](const Tensor& zt, const std::vector<int>& t) {
    Tensor rec(zt.shape());
    for (int r = 0; r < 2; ++r) {
      const double abar = s.alpha_bar(t[static_cast<size_t>(r)]);
      for (int j = 0; j < 6; ++j) {
        rec[r * 6 + j] = (zt[r * 6 + j] - std::sqrt(abar) * z0[r * 6 + j]) / std::sqrt(1.0 - abar);
      }
    }
    return ag::constant(rec);
  };
  CHECK(diffusion::training_loss(oracle, s, z0, ts, eps)->value[0] < 1e-20);

  // All-zero predictor: loss is mean(eps^2) ~ 1 in expectation.
  auto zero_model = [](const Tensor& zt, const std::vector<int>&) {
    return ag::constant(Tensor(zt.shape()));
  };
  double acc = 0.0;
  const int reps = 300;
  Tensor big({4, 10});
  for (int i = 0; i < reps; ++i) {
    Tensor e(big.shape());
    rng.fill_normal(e.data(), e.size());
    acc += diffusion::training_loss(zero_model, s, big, {5, 50, 75, 100}, e)->value[0];
  }
  CHECK(std::abs(acc / reps - 1.0) < 0.05);

  // Gradients reach leaves wired by the callback.
  ag::NodeRef w = ag::leaf(Tensor({1}, 0.5), true, "w");
  auto param_model = [&](const Tensor& zt, const std::vector<int>&) {
    return ag::mul(ag::constant(zt), ag::broadcast_to(ag::reshape(w, {1, 1}), zt.shape()));
  };
  ag::NodeRef loss = diffusion::training_loss(param_model, s, z0, ts, eps);
  ag::backward(loss);
  CHECK(w->has_grad);
  CHECK(std::abs(w->grad[0]) > 0.0);
}

TEST_CASE("pli sampler: degenerate taus bitwise-match single-model sampling") {
  NoiseSchedule s(linear_cfg(30));
  const Shape shape{1, 2, 4, 4, 3};

  diffusion::EpsModel damp = [](const Tensor& z, int) {
    Tensor e(z.shape());
    for (int64_t i = 0; i < z.size(); ++i) e[i] = 0.4 * z[i];
    return e;
  };
  diffusion::EpsModel shift = [](const Tensor& z, int t) {
    Tensor e(z.shape());
    for (int64_t i = 0; i < z.size(); ++i) e[i] = 0.2 * z[i] + 0.01 * t;
    return e;
  };
  diffusion::EpsModel poison = [](const Tensor& z, int) -> Tensor {
    throw std::logic_error("this model must never be called");
  };

  // tau = 0: adapted everywhere; the base model is never consulted.
  PliOptions t0;
  t0.tau = 0;
  Tensor a = diffusion::sample_pli(s, shape, damp, poison, 7, t0);
  Tensor single = diffusion::sample(s, shape, damp, 7);
  CHECK(max_abs_diff(a, single) == 0.0);

  // tau = T: base everywhere.
  PliOptions tT;
  tT.tau = s.steps();
  Tensor b = diffusion::sample_pli(s, shape, poison, shift, 7, tT);
  Tensor single_b = diffusion::sample(s, shape, shift, 7);
  CHECK(max_abs_diff(b, single_b) == 0.0);

  // Identical models: output independent of tau.
  PliOptions mid;
  mid.tau = 11;
  Tensor c = diffusion::sample_pli(s, shape, damp, damp, 7, mid);
  CHECK(max_abs_diff(c, single) == 0.0);

  // Determinism across runs.
  CHECK(max_abs_diff(diffusion::sample(s, shape, shift, 99), diffusion::sample(s, shape, shift, 99)) ==
        0.0);
  CHECK(max_abs_diff(diffusion::sample(s, shape, shift, 99), diffusion::sample(s, shape, shift, 98)) >
        0.0);
}

TEST_CASE("pli branch boundary: first T-tau calls adapted, remainder base, in order") {
  NoiseSchedule s(linear_cfg(20));
  const Shape shape{1, 4};
  for (int tau : {0, 1, 7, 19, 20}) {
    std::vector<char> order;
    diffusion::EpsModel adapted = [&](const Tensor& z, int) {
      order.push_back('a');
      return Tensor(z.shape());
    };
    diffusion::EpsModel base = [&](const Tensor& z, int) {
      order.push_back('b');
      return Tensor(z.shape());
    };
    diffusion::SampleDebug dbg;
    PliOptions o;
    o.tau = tau;
    o.debug = &dbg;
    diffusion::sample_pli(s, shape, adapted, base, 3, o);
    CHECK(dbg.adapted_calls == 20 - tau);
    CHECK(dbg.base_calls == tau);
    REQUIRE(static_cast<int>(order.size()) == 20);
    for (int i = 0; i < 20; ++i) {
      CHECK(order[static_cast<size_t>(i)] == (i < 20 - tau ? 'a' : 'b'));
    }
  }

  PliOptions bad;
  bad.tau = 21;
  CHECK_THROWS_AS(
      diffusion::sample_pli(
          s, shape, [](const Tensor& z, int) { return Tensor(z.shape()); },
          [](const Tensor& z, int) { return Tensor(z.shape()); }, 1, bad),
      ConfigError);
}

TEST_CASE("sampler snapshots capture the requested steps") {
  NoiseSchedule s(linear_cfg(12));
  const Shape shape{1, 3};
  diffusion::SampleDebug dbg;
  PliOptions o;
  o.snapshot_at = {12, 6, 1};
  o.debug = &dbg;
  diffusion::EpsModel m = [](const Tensor& z, int) {
    Tensor e(z.shape());
    for (int64_t i = 0; i < z.size(); ++i) e[i] = 0.3 * z[i];
    return e;
  };
  Tensor out = diffusion::sample_pli(s, shape, m, m, 4, o);
  REQUIRE(dbg.snapshot_steps == std::vector<int>{12, 6, 1});
  REQUIRE(dbg.snapshots.size() == 3);
  for (const auto& snap : dbg.snapshots) CHECK(snap.shape() == shape);
  // The t=1 snapshot is the final output itself.
  CHECK(max_abs_diff(dbg.snapshots[2], out) == 0.0);

  PliOptions bad;
  bad.snapshot_at = {13};
  CHECK_THROWS_AS(diffusion::sample_pli(s, shape, m, m, 4, bad), ConfigError);
}

TEST_CASE("signal/clip space mapping round-trips and clamps") {
  synthvid::ClipSpec spec;
  spec.frames = 3;
  spec.height = 8;
  spec.width = 8;
  synthvid::VideoClip clip = synthvid::render_clip(spec);
  Tensor sig = diffusion::to_signal(clip);
  CHECK(sig.min() >= -1.0);
  CHECK(sig.max() <= 1.0);
  synthvid::VideoClip back = diffusion::to_video_clip(sig);
  CHECK(max_abs_diff(back.data, clip.data) < 1e-15);

  // Batch axis of one is squeezed; out-of-range values clamp.
  Tensor wild({1, 2, 4, 4, 3});
  for (int64_t i = 0; i < wild.size(); ++i) wild[i] = (i % 2 == 0) ? 5.0 : -5.0;
  synthvid::VideoClip clamped = diffusion::to_video_clip(wild);
  CHECK(clamped.data.shape() == Shape{2, 4, 4, 3});
  CHECK(clamped.data.min() == 0.0);
  CHECK(clamped.data.max() == 1.0);

  CHECK_THROWS_AS(diffusion::to_video_clip(Tensor({2, 4, 4, 2})), ShapeError);
}
