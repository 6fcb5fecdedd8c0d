#include "motionsep/net.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "motionsep/adapters.hpp"
#include "motionsep/autograd.hpp"
#include "motionsep/errors.hpp"
#include "motionsep/rng.hpp"

using namespace motionsep;
using adapters::PlanMode;
using adapters::Slot;
using net::CondLabels;
using net::ForwardOptions;
using net::SkipMode;
using net::SkipSettings;
using net::UNet;
using net::UNetConfig;

namespace {

UNetConfig tiny_config() {
  UNetConfig c;
  c.levels = 2;
  c.base_channels = 4;
  c.heads = 2;
  c.patch = 2;
  c.height = 8;
  c.width = 8;
  c.max_frames = 4;
  c.time_embed_dim = 8;
  c.cond_embed_dim = 4;
  return c;
}

Tensor random_clip(int64_t b, int64_t f, int64_t h, int64_t w, uint64_t seed) {
  Tensor z({b, f, h, w, 3});
  Rng rng(seed);
  rng.fill_normal(z.data(), z.size());
  return z;
}

std::vector<CondLabels> two_labels() {
  CondLabels a;
  a.motion_id = 0;
  a.shape = synthvid::ShapeKind::kCircle;
  a.fg_bin = 1;
  a.bg_bin = 2;
  CondLabels b;
  b.motion_id = net::kCustomMotionId;  // the trainable trigger slot
  b.shape = synthvid::ShapeKind::kTriangle;
  b.fg_bin = 4;
  b.bg_bin = 0;
  return {a, b};
}

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "motionsep-net-tests";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("config validation rejects bad geometry") {
  UNetConfig c = tiny_config();
  CHECK_NOTHROW(c.validate());

  UNetConfig bad = c;
  bad.heads = 3;  // does not divide base_channels
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.patch = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.height = 10;  // 10/2 = 5 tokens, not divisible by 2^(levels-1)
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.time_embed_dim = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  bad = c;
  bad.beta = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("time embedding matches the sinusoid formula") {
  const int dim = 8, half = 4;
  for (int t : {0, 1, 17, 80}) {
    Tensor e = net::time_embedding(t, dim);
    REQUIRE(e.shape() == Shape{dim});
    for (int i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
      CHECK(std::abs(e[i] - std::sin(t * freq)) < 1e-12);
      CHECK(std::abs(e[half + i] - std::cos(t * freq)) < 1e-12);
    }
  }
  // t = 0: all sines zero, all cosines one.
  Tensor e0 = net::time_embedding(0, dim);
  for (int i = 0; i < half; ++i) {
    CHECK(e0[i] == 0.0);
    CHECK(e0[half + i] == 1.0);
  }
}

TEST_CASE("multihead attention matches a loop oracle") {
  // Single head so the oracle stays simple; random projections.
  const int64_t B = 2, n = 3, d = 4;
  Rng rng(31);
  Tensor xt({B, n, d}), wq({d, d}), wk({d, d}), wv({d, d}), wo({d, d});
  for (Tensor* t : {&xt, &wq, &wk, &wv, &wo}) rng.fill_normal(t->data(), t->size());

  net::AttentionWeights w{ag::leaf(wq, false, "wq"), ag::leaf(wk, false, "wk"),
                          ag::leaf(wv, false, "wv"), ag::leaf(wo, false, "wo")};
  net::AttentionStats stats;
  ag::NodeRef xn = ag::constant(xt);
  Tensor got = multihead_attention(xn, xn, w, /*heads=*/1, {}, &stats)->value;

  // Oracle with plain loops.
  auto proj = [&](const Tensor& m, int64_t bi, int64_t i, int64_t o) {
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j) s += m[o * d + j] * xt[(bi * n + i) * d + j];
    return s;
  };
  Tensor want({B, n, d});
  for (int64_t bi = 0; bi < B; ++bi) {
    for (int64_t i = 0; i < n; ++i) {
      // attention row for query i
      std::vector<double> logits(n);
      for (int64_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (int64_t c = 0; c < d; ++c) s += proj(wq, bi, i, c) * proj(wk, bi, j, c);
        logits[static_cast<size_t>(j)] = s / std::sqrt(static_cast<double>(d));
      }
      double mx = logits[0];
      for (double v : logits) mx = std::max(mx, v);
      double z = 0.0;
      for (double& v : logits) {
        v = std::exp(v - mx);
        z += v;
      }
      for (double& v : logits) v /= z;
      // o = sum_j a_j V_j, then the output projection
      std::vector<double> ov(static_cast<size_t>(d), 0.0);
      for (int64_t j = 0; j < n; ++j) {
        for (int64_t c = 0; c < d; ++c) ov[static_cast<size_t>(c)] += logits[static_cast<size_t>(j)] * proj(wv, bi, j, c);
      }
      for (int64_t o = 0; o < d; ++o) {
        double s = 0.0;
        for (int64_t c = 0; c < d; ++c) s += wo[o * d + c] * ov[static_cast<size_t>(c)];
        want[(bi * n + i) * d + o] = s;
      }
    }
  }
  CHECK(max_abs_diff(got, want) < 1e-12);
  CHECK(stats.rows == B * n);
  CHECK(stats.max_row_dev < 1e-12);
}

TEST_CASE("forward produces finite epsilon predictions of the input shape") {
  UNet model(tiny_config(), 42);
  Tensor z = random_clip(2, 3, 8, 8, 1);
  Tensor out = model.predict(z, {5, 40}, two_labels());
  CHECK(out.shape() == z.shape());
  CHECK(out.all_finite());
  // The net must actually transform the input, not pass it through.
  CHECK(max_abs_diff(out, z) > 1e-3);
}

TEST_CASE("same seed gives bitwise-identical models and outputs") {
  UNet a(tiny_config(), 9);
  UNet b(tiny_config(), 9);
  REQUIRE(a.parameters().size() == b.parameters().size());
  for (size_t i = 0; i < a.parameters().size(); ++i) {
    CHECK(max_abs_diff(a.parameters()[i]->value, b.parameters()[i]->value) == 0.0);
  }
  Tensor z = random_clip(1, 2, 8, 8, 2);
  CHECK(max_abs_diff(a.predict(z, {7}, {two_labels()[0]}),
                     b.predict(z, {7}, {two_labels()[0]})) == 0.0);

  UNet c(tiny_config(), 10);
  CHECK(max_abs_diff(a.predict(z, {7}, {two_labels()[0]}),
                     c.predict(z, {7}, {two_labels()[0]})) > 0.0);
}

TEST_CASE("attention rows stay stochastic through a full forward") {
  UNet model(tiny_config(), 3);
  Tensor z = random_clip(1, 3, 8, 8, 4);
  net::AttentionStats stats;
  ForwardOptions opts;
  opts.attn_stats = &stats;
  model.predict(z, {12}, {two_labels()[0]}, opts);
  CHECK(stats.rows > 0);
  CHECK(stats.max_row_dev < 1e-9);
}

TEST_CASE("zero-initialized temporal path makes AH at beta 1 the identity rewiring") {
  UNetConfig cfg = tiny_config();
  REQUIRE(cfg.temporal_zero_init);
  UNet model(cfg, 21);
  Tensor z = random_clip(1, 3, 8, 8, 5);
  const std::vector<int> t{30};
  const std::vector<CondLabels> labels{two_labels()[0]};

  ForwardOptions vanilla;
  vanilla.skip = SkipSettings{SkipMode::kVanilla, 1.0, 1.0, ~0u};
  ForwardOptions ah;
  ah.skip = SkipSettings{SkipMode::kAppearanceHighway, 1.0, 1.0, ~0u};

  Tensor out_v = model.predict(z, t, labels, vanilla);
  Tensor out_a = model.predict(z, t, labels, ah);
  CHECK(max_abs_diff(out_v, out_a) < 1e-14);

  // Once the temporal output projection moves off zero the two wirings must
  // actually diverge.
  Rng rng(77);
  for (const char* name : {"enc0.tp.attn.wo", "enc1.tp.attn.wo"}) {
    Tensor& w = model.param(name)->value;
    for (int64_t i = 0; i < w.size(); ++i) w[i] += 0.05 * rng.normal();
  }
  Tensor out_v2 = model.predict(z, t, labels, vanilla);
  Tensor out_a2 = model.predict(z, t, labels, ah);
  CHECK(max_abs_diff(out_v2, out_a2) > 1e-6);
}

TEST_CASE("skip controls are live: beta, level mask and vanilla scale") {
  UNetConfig cfg = tiny_config();
  UNet model(cfg, 33);
  // Give the temporal path real content so spatial != temporal.
  Rng rng(55);
  for (const auto& p : model.parameters()) {
    if (p->name.find(".tp.attn.wo") != std::string::npos ||
        p->name.find(".tp.ff.w2") != std::string::npos) {
      for (int64_t i = 0; i < p->value.size(); ++i) p->value[i] += 0.05 * rng.normal();
    }
  }
  Tensor z = random_clip(1, 3, 8, 8, 6);
  const std::vector<int> t{10};
  const std::vector<CondLabels> labels{two_labels()[0]};

  auto run = [&](SkipSettings s) {
    ForwardOptions o;
    o.skip = s;
    return model.predict(z, t, labels, o);
  };

  Tensor ah_10 = run({SkipMode::kAppearanceHighway, 1.0, 1.0, ~0u});
  Tensor ah_13 = run({SkipMode::kAppearanceHighway, 1.3, 1.0, ~0u});
  CHECK(max_abs_diff(ah_10, ah_13) > 1e-8);

  // Masking out every level turns AH back into vanilla regardless of beta.
  Tensor vanilla = run({SkipMode::kVanilla, 1.0, 1.0, ~0u});
  Tensor ah_masked = run({SkipMode::kAppearanceHighway, 2.0, 1.0, 0u});
  CHECK(max_abs_diff(vanilla, ah_masked) == 0.0);

  Tensor ah_lvl0 = run({SkipMode::kAppearanceHighway, 1.3, 1.0, 1u});
  CHECK(max_abs_diff(ah_13, ah_lvl0) > 1e-8);

  Tensor van_scaled = run({SkipMode::kVanilla, 1.0, 0.9, ~0u});
  CHECK(max_abs_diff(vanilla, van_scaled) > 1e-8);
}

TEST_CASE("plan presets produce the documented injection layouts") {
  UNet model(tiny_config(), 8);

  auto tap = model.build_plan({PlanMode::kTap, {}}, 2, 1.0, 100);
  CHECK(tap.entries.size() == 4);
  const auto tpaths = model.temporal_paths();
  for (size_t i = 0; i < tap.entries.size(); ++i) {
    CHECK(tap.entries[i].path == tpaths[i]);
    CHECK(tap.entries[i].slot == Slot::kK);
    const auto w = model.target_weight(tap.entries[i].path, Slot::kK);
    CHECK(tap.entries[i].adapter.d_out() == w->value.dim(0));
    CHECK(tap.entries[i].adapter.d_in() == w->value.dim(1));
  }

  auto full = model.build_plan({PlanMode::kFullTemporal, {}}, 2, 1.0, 100);
  CHECK(full.entries.size() == 4 * 5);

  auto spatial = model.build_plan({PlanMode::kSpatialPath, {}}, 2, 1.0, 100);
  CHECK(spatial.entries.size() == 4 * 3);
  for (const auto& e : spatial.entries) {
    CHECK(e.path.find(".spatial") != std::string::npos);
  }

  auto custom = model.build_plan({PlanMode::kCustom, {Slot::kV}}, 2, 1.0, 100);
  CHECK(custom.entries.size() == 4);
  for (const auto& e : custom.entries) CHECK(e.slot == Slot::kV);

  CHECK_THROWS_AS(model.build_plan({PlanMode::kCustom, {}}, 2, 1.0, 100), PlanError);
  CHECK_THROWS_AS(model.build_plan({PlanMode::kCustom, {Slot::kQ, Slot::kQ}}, 2, 1.0, 100),
                  PlanError);
  CHECK_THROWS_AS(model.build_plan({PlanMode::kTap, {}}, 0, 1.0, 100), PlanError);
}

TEST_CASE("fresh plan leaves the forward untouched; injection equals merged weights") {
  UNet model(tiny_config(), 13);
  // Give the temporal output projections real content; with them at their
  // zero init, nothing a temporal K adapter does could reach the output.
  Rng wiggle(55);
  for (const auto& p : model.parameters()) {
    if (p->name.find(".tp.attn.wo") != std::string::npos ||
        p->name.find(".tp.ff.w2") != std::string::npos) {
      for (int64_t i = 0; i < p->value.size(); ++i) p->value[i] += 0.05 * wiggle.normal();
    }
  }
  Tensor z = random_clip(1, 3, 8, 8, 7);
  const std::vector<int> t{25};
  const std::vector<CondLabels> labels{two_labels()[1]};

  auto plan = model.build_plan({PlanMode::kTap, {}}, 2, 1.0, 200);
  ForwardOptions with;
  with.plan = &plan;
  Tensor base_out = model.predict(z, t, labels);
  CHECK(max_abs_diff(model.predict(z, t, labels, with), base_out) == 0.0);

  // Push B off zero: now the injected forward must match a clone whose
  // target weights were replaced by the dense merged form.
  Rng rng(99);
  for (auto& e : plan.entries) {
    Tensor& b = e.adapter.B->value;
    for (int64_t i = 0; i < b.size(); ++i) b[i] = 0.3 * rng.normal();
  }
  Tensor injected = model.predict(z, t, labels, with);
  CHECK(max_abs_diff(injected, base_out) > 1e-8);

  UNet clone(tiny_config(), 13);
  clone.copy_values_from(model);
  for (const auto& e : plan.entries) {
    const auto w = clone.target_weight(e.path, e.slot);
    w->value = e.adapter.merged(w->value);
  }
  Tensor merged_out = clone.predict(z, t, labels);
  CHECK(max_abs_diff(injected, merged_out) < 1e-9);
}

TEST_CASE("gradients through the full forward match finite differences") {
  UNetConfig cfg = tiny_config();
  UNet model(cfg, 17);
  auto plan = model.build_plan({PlanMode::kTap, {}}, 2, 1.0, 300);
  // Non-zero B (and temporal output projections) so adapter gradients are
  // informative rather than identically zero.
  Rng rng(111);
  for (auto& e : plan.entries) {
    Tensor& b = e.adapter.B->value;
    for (int64_t i = 0; i < b.size(); ++i) b[i] = 0.2 * rng.normal();
  }
  for (const auto& p : model.parameters()) {
    if (p->name.find(".tp.attn.wo") != std::string::npos ||
        p->name.find(".tp.ff.w2") != std::string::npos) {
      for (int64_t i = 0; i < p->value.size(); ++i) p->value[i] += 0.05 * rng.normal();
    }
  }

  Tensor z = random_clip(1, 2, 8, 8, 8);
  Tensor target = random_clip(1, 2, 8, 8, 9);
  const std::vector<int> t{33};
  const std::vector<CondLabels> labels{two_labels()[0]};

  ForwardOptions opts;
  opts.plan = &plan;
  auto loss = [&]() {
    return ag::mse(model.forward(ag::constant(z), t, labels, opts), ag::constant(target));
  };

  ag::NodeRef l = loss();
  ag::backward(l);

  std::vector<ag::NodeRef> checked = {
      plan.entries[0].adapter.A, plan.entries[0].adapter.B, model.param("enc1.tp.attn.wk"),
      model.param("merge0.w"),   model.param("cond.motion"), model.param("patch.pos"),
      model.param("head.w"),     model.param("dec1.tp.ln1.g"),
  };
  const double h = 1e-5;
  for (const auto& p : checked) {
    REQUIRE(p->has_grad);
    Tensor grad = p->grad;  // copy before FD evaluations rebuild graphs
    for (int64_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = loss()->value[0];
      p->value[i] = keep - h;
      const double dn = loss()->value[0];
      p->value[i] = keep;
      const double fd = (up - dn) / (2 * h);
      const double tol = 2e-6 * std::max({1.0, std::abs(fd), std::abs(grad[i])});
      CHECK(std::abs(fd - grad[i]) < tol);
    }
  }
}

TEST_CASE("cond tokens gather the right embedding rows") {
  UNet model(tiny_config(), 5);
  auto labels = two_labels();
  Tensor tok = model.cond_tokens(labels)->value;
  REQUIRE(tok.shape() == Shape{2, 4, 4});

  const Tensor& motion = model.param("cond.motion")->value;
  const Tensor& shape = model.param("cond.shape")->value;
  const Tensor& fg = model.param("cond.fg")->value;
  const Tensor& bg = model.param("cond.bg")->value;
  const int cd = 4;
  for (int b = 0; b < 2; ++b) {
    const auto& l = labels[static_cast<size_t>(b)];
    for (int c = 0; c < cd; ++c) {
      CHECK(tok.at({b, 0, c}) == motion[l.motion_id * cd + c]);
      CHECK(tok.at({b, 1, c}) == shape[static_cast<int>(l.shape) * cd + c]);
      CHECK(tok.at({b, 2, c}) == fg[l.fg_bin * cd + c]);
      CHECK(tok.at({b, 3, c}) == bg[l.bg_bin * cd + c]);
    }
  }

  CondLabels bad;
  bad.motion_id = net::kMotionVocab;  // one past the trigger slot
  CHECK_THROWS_AS(model.cond_tokens({bad}), VocabError);
  CondLabels bad_fg;
  bad_fg.fg_bin = 99;
  CHECK_THROWS_AS(model.cond_tokens({bad_fg})->value.size(), VocabError);
}

TEST_CASE("forward validates input geometry") {
  UNet model(tiny_config(), 2);
  auto labels = std::vector<CondLabels>{two_labels()[0]};
  CHECK_THROWS_AS(model.predict(Tensor({1, 2, 8, 8, 1}), {0}, labels), ShapeError);
  CHECK_THROWS_AS(model.predict(Tensor({1, 2, 16, 16, 3}), {0}, labels), ShapeError);
  CHECK_THROWS_AS(model.predict(Tensor({1, 5, 8, 8, 3}), {0}, labels), ShapeError);  // > max_frames
  CHECK_THROWS_AS(model.predict(Tensor({1, 2, 8, 8, 3}), {0, 1}, labels), ShapeError);
  CHECK_THROWS_AS(model.predict(Tensor({2, 2, 8, 8, 3}), {0, 1}, labels), ShapeError);
  CHECK_THROWS_AS(model.param("enc9.sp.self.wq"), PlanError);
}

TEST_CASE("decoder trace captures the merged skip inputs per level") {
  UNet model(tiny_config(), 25);
  Tensor z = random_clip(1, 3, 8, 8, 11);
  net::HiddenStateTrace trace;
  trace.variant = "probe";
  ForwardOptions opts;
  opts.trace = &trace;
  opts.trace_step = 42;
  model.predict(z, {18}, {two_labels()[0]}, opts);

  REQUIRE(trace.entries.size() == 2);
  CHECK(trace.entries[0].level == 1);  // deepest level merges first
  CHECK(trace.entries[1].level == 0);
  CHECK(trace.entries[0].step == 42);
  CHECK(trace.entries[0].state.shape() == Shape{1, 3, 4, 8});
  CHECK(trace.entries[1].state.shape() == Shape{1, 3, 16, 4});
  CHECK(trace.entries[0].state.all_finite());
}

TEST_CASE("model checkpoints round-trip") {
  const auto dir = temp_dir();
  const auto path = dir / "model.msc";
  UNetConfig cfg = tiny_config();
  cfg.skip_mode = SkipMode::kAppearanceHighway;
  cfg.beta = 1.17;
  cfg.ah_level_mask = 1;
  UNet model(cfg, 77);
  model.save(path);

  UNet loaded = UNet::load(path);
  CHECK(loaded.config().beta == 1.17);
  CHECK(loaded.config().skip_mode == SkipMode::kAppearanceHighway);
  CHECK(loaded.config().ah_level_mask == 1u);
  REQUIRE(loaded.parameters().size() == model.parameters().size());
  // Values survive up to the fp32 storage precision.
  for (size_t i = 0; i < model.parameters().size(); ++i) {
    const Tensor& a = model.parameters()[i]->value;
    const Tensor& b = loaded.parameters()[i]->value;
    REQUIRE(a.same_shape(b));
    for (int64_t j = 0; j < a.size(); ++j) {
      CHECK(b[j] == static_cast<double>(static_cast<float>(a[j])));
    }
  }

  // A second save/load cycle is bit-stable.
  const auto path2 = dir / "model2.msc";
  loaded.save(path2);
  UNet loaded2 = UNet::load(path2);
  for (size_t i = 0; i < loaded.parameters().size(); ++i) {
    CHECK(max_abs_diff(loaded.parameters()[i]->value, loaded2.parameters()[i]->value) == 0.0);
  }

  CHECK_THROWS_AS(UNet::load(dir / "missing.msc"), DependencyError);
  const auto junk = dir / "junk.msc";
  std::ofstream(junk, std::ios::binary) << "not a checkpoint at all";
  CHECK_THROWS_AS(UNet::load(junk), FileFormatError);
}

TEST_CASE("adapter checkpoints round-trip and validate against the model") {
  const auto dir = temp_dir();
  const auto path = dir / "plan.msc";
  UNet model(tiny_config(), 31);
  auto plan = model.build_plan({PlanMode::kCustom, {Slot::kQ, Slot::kK}}, 2, 0.8, 400);
  Rng rng(123);
  for (auto& e : plan.entries) {
    for (int64_t i = 0; i < e.adapter.B->value.size(); ++i) {
      e.adapter.B->value[i] = 0.1 * rng.normal();
    }
  }
  net::save_plan(path, plan);

  auto loaded = net::load_plan(path, model);
  CHECK(loaded.mode == PlanMode::kCustom);
  CHECK(loaded.rank == 2);
  CHECK(loaded.scale == 0.8);
  REQUIRE(loaded.entries.size() == plan.entries.size());
  for (size_t i = 0; i < plan.entries.size(); ++i) {
    CHECK(loaded.entries[i].path == plan.entries[i].path);
    CHECK(loaded.entries[i].slot == plan.entries[i].slot);
    const Tensor& a0 = plan.entries[i].adapter.A->value;
    const Tensor& a1 = loaded.entries[i].adapter.A->value;
    for (int64_t j = 0; j < a0.size(); ++j) {
      CHECK(a1[j] == static_cast<double>(static_cast<float>(a0[j])));
    }
    CHECK(loaded.entries[i].adapter.scale == 0.8);
  }

  // The loaded plan drives the forward exactly like the original
  // (after quantizing the original to fp32 for a fair comparison).
  for (auto& e : plan.entries) {
    for (ag::NodeRef m : {e.adapter.A, e.adapter.B}) {
      for (int64_t j = 0; j < m->value.size(); ++j) {
        m->value[j] = static_cast<double>(static_cast<float>(m->value[j]));
      }
    }
  }
  Tensor z = random_clip(1, 2, 8, 8, 13);
  ForwardOptions w0, w1;
  w0.plan = &plan;
  w1.plan = &loaded;
  CHECK(max_abs_diff(model.predict(z, {3}, {two_labels()[0]}, w0),
                     model.predict(z, {3}, {two_labels()[0]}, w1)) == 0.0);

  // A model with different widths must reject the plan.
  UNetConfig other = tiny_config();
  other.base_channels = 8;
  UNet bigger(other, 31);
  CHECK_THROWS_AS(net::load_plan(path, bigger), PlanError);
  CHECK_THROWS_AS(net::load_plan(dir / "missing.msc", model), DependencyError);
  // A model checkpoint is not an adapter checkpoint.
  const auto mpath = dir / "as-model.msc";
  model.save(mpath);
  CHECK_THROWS_AS(net::load_plan(mpath, model), FileFormatError);
  CHECK_THROWS_AS(UNet::load(path), FileFormatError);
}

TEST_CASE("copy_values_from aligns two models") {
  UNet a(tiny_config(), 1);
  UNet b(tiny_config(), 2);
  Tensor z = random_clip(1, 2, 8, 8, 21);
  CHECK(max_abs_diff(a.predict(z, {9}, {two_labels()[0]}),
                     b.predict(z, {9}, {two_labels()[0]})) > 0.0);
  b.copy_values_from(a);
  CHECK(max_abs_diff(a.predict(z, {9}, {two_labels()[0]}),
                     b.predict(z, {9}, {two_labels()[0]})) == 0.0);
}

TEST_CASE("labels_for maps a clip spec onto the conditioning vocabulary") {
  synthvid::ClipSpec spec;
  spec.motion = synthvid::MotionLabel::kOrbit;
  spec.appearance.shape = synthvid::ShapeKind::kSquare;
  spec.appearance.fg = synthvid::fg_palette()[3];
  spec.appearance.bg = synthvid::bg_palette()[1];
  CondLabels l = net::labels_for(spec);
  CHECK(l.motion_id == static_cast<int>(synthvid::MotionLabel::kOrbit));
  CHECK(l.shape == synthvid::ShapeKind::kSquare);
  CHECK(l.fg_bin == 3);
  CHECK(l.bg_bin == 1);
}
