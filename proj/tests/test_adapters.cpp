#include "motionsep/adapters.hpp"

#include <cmath>
#include <vector>

#include "doctest.h"
#include "motionsep/autograd.hpp"
#include "motionsep/errors.hpp"
#include "motionsep/rng.hpp"
#include "motionsep/tensor.hpp"

using namespace motionsep;
using adapters::LoraAdapter;
using adapters::PlanMode;
using adapters::Slot;

namespace {

// Straight-line oracle: y = W x + scale * B (A x), all loops, no ag ops.
Tensor lora_oracle(const Tensor& x, const Tensor& w, const Tensor& a, const Tensor& b,
                   double scale) {
  const int64_t n = x.dim(0), din = x.dim(1);
  const int64_t dout = w.dim(0), r = a.dim(0);
  Tensor y({n, dout});
  for (int64_t i = 0; i < n; ++i) {
    std::vector<double> ax(static_cast<size_t>(r), 0.0);
    for (int64_t k = 0; k < r; ++k) {
      for (int64_t j = 0; j < din; ++j) ax[static_cast<size_t>(k)] += a[k * din + j] * x[i * din + j];
    }
    for (int64_t o = 0; o < dout; ++o) {
      double base = 0.0;
      for (int64_t j = 0; j < din; ++j) base += w[o * din + j] * x[i * din + j];
      double low = 0.0;
      for (int64_t k = 0; k < r; ++k) low += b[o * r + k] * ax[static_cast<size_t>(k)];
      y[i * dout + o] = base + scale * low;
    }
  }
  return y;
}

}  // namespace

TEST_CASE("lora init shapes and zero-B start") {
  Rng rng(7);
  LoraAdapter ad = LoraAdapter::init(6, 4, 2, 1.5, rng, "t");
  CHECK(ad.A->value.shape() == Shape{2, 4});
  CHECK(ad.B->value.shape() == Shape{6, 2});
  CHECK(ad.rank == 2);
  CHECK(ad.d_in() == 4);
  CHECK(ad.d_out() == 6);
  // B starts at zero; A carries a small random init.
  CHECK(ad.B->value.max() == 0.0);
  CHECK(ad.B->value.min() == 0.0);
  bool a_nonzero = false;
  for (int64_t i = 0; i < ad.A->value.size(); ++i) {
    if (ad.A->value[i] != 0.0) a_nonzero = true;
    CHECK(std::abs(ad.A->value[i]) < 0.2);  // std 0.02, 10 sigma
  }
  CHECK(a_nonzero);
  CHECK(ad.A->requires_grad);
  CHECK(ad.B->requires_grad);
}

TEST_CASE("lora init rejects bad ranks") {
  Rng rng(7);
  CHECK_THROWS_AS(LoraAdapter::init(6, 4, 0, 1.0, rng, "t"), PlanError);
  CHECK_THROWS_AS(LoraAdapter::init(6, 4, -1, 1.0, rng, "t"), PlanError);
  CHECK_THROWS_AS(LoraAdapter::init(6, 4, 5, 1.0, rng, "t"), PlanError);   // > min(d_in, d_out)
  CHECK_NOTHROW(LoraAdapter::init(6, 4, 4, 1.0, rng, "t"));
}

TEST_CASE("fresh adapter is an exact no-op") {
  Rng rng(11);
  LoraAdapter ad = LoraAdapter::init(5, 3, 2, 2.0, rng, "t");
  Tensor xt({4, 3});
  Tensor wt({5, 3});
  rng.fill_normal(xt.data(), xt.size());
  rng.fill_normal(wt.data(), wt.size());
  ag::NodeRef x = ag::constant(xt);
  ag::NodeRef w = ag::leaf(wt, false, "w");
  Tensor with = ad.apply(x, w)->value;
  Tensor without = ag::linear(x, w)->value;
  CHECK(max_abs_diff(with, without) == 0.0);
}

TEST_CASE("lora apply matches the loop oracle after B moves") {
  Rng rng(13);
  const double scale = 0.7;
  LoraAdapter ad = LoraAdapter::init(5, 3, 2, scale, rng, "t");
  rng.fill_normal(ad.B->value.data(), ad.B->value.size());
  Tensor xt({4, 3});
  Tensor wt({5, 3});
  rng.fill_normal(xt.data(), xt.size());
  rng.fill_normal(wt.data(), wt.size());

  Tensor got = ad.apply(ag::constant(xt), ag::leaf(wt, false, "w"))->value;
  Tensor want = lora_oracle(xt, wt, ad.A->value, ad.B->value, scale);
  CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("merged weight reproduces apply") {
  Rng rng(17);
  LoraAdapter ad = LoraAdapter::init(6, 6, 3, 1.25, rng, "t");
  rng.fill_normal(ad.B->value.data(), ad.B->value.size());
  Tensor wt({6, 6});
  rng.fill_normal(wt.data(), wt.size());
  Tensor xt({7, 6});
  rng.fill_normal(xt.data(), xt.size());

  Tensor via_apply = ad.apply(ag::constant(xt), ag::leaf(wt, false, "w"))->value;
  Tensor via_merged = ag::linear(ag::constant(xt), ag::constant(ad.merged(wt)))->value;
  CHECK(max_abs_diff(via_apply, via_merged) < 1e-6);

  // delta is exactly merged - base.
  Tensor d = ad.delta();
  for (int64_t i = 0; i < d.size(); ++i) {
    CHECK(std::abs(d[i] - (ad.merged(wt)[i] - wt[i])) < 1e-12);
  }
}

TEST_CASE("gradients reach A and B through apply") {
  Rng rng(19);
  LoraAdapter ad = LoraAdapter::init(4, 3, 2, 1.0, rng, "t");
  rng.fill_normal(ad.B->value.data(), ad.B->value.size());
  Tensor xt({2, 3});
  rng.fill_normal(xt.data(), xt.size());
  Tensor wt({4, 3});
  rng.fill_normal(wt.data(), wt.size());

  auto loss_value = [&]() {
    ag::NodeRef y = ad.apply(ag::constant(xt), ag::leaf(wt, false, "w"));
    return ag::sum_all(ag::mul(y, y));
  };
  ag::NodeRef loss = loss_value();
  ag::backward(loss);
  REQUIRE(ad.A->has_grad);
  REQUIRE(ad.B->has_grad);

  // Finite-difference spot check on every element of A and B.
  const double h = 1e-6;
  for (ag::NodeRef p : {ad.A, ad.B}) {
    Tensor grad = p->grad;
    for (int64_t i = 0; i < p->value.size(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double up = loss_value()->value[0];
      p->value[i] = keep - h;
      const double dn = loss_value()->value[0];
      p->value[i] = keep;
      const double fd = (up - dn) / (2 * h);
      CHECK(std::abs(fd - grad[i]) < 1e-5 * std::max({1.0, std::abs(fd), std::abs(grad[i])}));
    }
  }
}

TEST_CASE("plan find, parameters and zero_grads") {
  Rng rng(23);
  adapters::InjectionPlan plan;
  plan.mode = PlanMode::kTap;
  plan.rank = 2;
  plan.scale = 1.0;
  for (const char* path : {"enc0.temporal", "dec0.temporal"}) {
    adapters::PlanEntry e;
    e.path = path;
    e.slot = Slot::kK;
    e.adapter = LoraAdapter::init(4, 4, 2, 1.0, rng, path);
    plan.entries.push_back(std::move(e));
  }

  CHECK(plan.find("enc0.temporal", Slot::kK) == &plan.entries[0].adapter);
  CHECK(plan.find("dec0.temporal", Slot::kK) == &plan.entries[1].adapter);
  CHECK(plan.find("enc0.temporal", Slot::kQ) == nullptr);
  CHECK(plan.find("enc1.temporal", Slot::kK) == nullptr);

  CHECK(plan.parameters().size() == 4);  // A and B per entry
  CHECK(plan.parameter_count() == 2 * (2 * 4 + 4 * 2));

  for (const auto& p : plan.parameters()) {
    p->ensure_grad();
    p->grad[0] = 3.0;
    p->has_grad = true;
  }
  plan.zero_grads();
  for (const auto& p : plan.parameters()) CHECK_FALSE(p->has_grad);
}

TEST_CASE("slot and mode string round-trips") {
  for (Slot s : {Slot::kQ, Slot::kK, Slot::kV, Slot::kFF1, Slot::kFF2}) {
    CHECK(adapters::slot_from_string(adapters::to_string(s)) == s);
  }
  for (PlanMode m :
       {PlanMode::kSpatialPath, PlanMode::kTap, PlanMode::kFullTemporal, PlanMode::kCustom}) {
    CHECK(adapters::plan_mode_from_string(adapters::to_string(m)) == m);
  }
  CHECK_THROWS_AS(adapters::slot_from_string("w"), VocabError);
  CHECK_THROWS_AS(adapters::plan_mode_from_string("nope"), VocabError);
}

TEST_CASE("plan presets map to the documented layouts") {
  auto tap = adapters::plan_preset_from_string("tap");
  CHECK(tap.mode == PlanMode::kTap);
  auto k = adapters::plan_preset_from_string("k");
  CHECK(k.mode == PlanMode::kTap);
  auto full = adapters::plan_preset_from_string("full");
  CHECK(full.mode == PlanMode::kFullTemporal);
  auto q = adapters::plan_preset_from_string("q");
  CHECK(q.mode == PlanMode::kCustom);
  CHECK(q.custom_slots == std::vector<Slot>{Slot::kQ});
  auto v = adapters::plan_preset_from_string("v");
  CHECK(v.custom_slots == std::vector<Slot>{Slot::kV});
  auto ff = adapters::plan_preset_from_string("ff");
  CHECK(ff.custom_slots == std::vector<Slot>{Slot::kFF1, Slot::kFF2});
  auto qk = adapters::plan_preset_from_string("qk");
  CHECK(qk.custom_slots == std::vector<Slot>{Slot::kQ, Slot::kK});
  CHECK_THROWS_AS(adapters::plan_preset_from_string("qv"), VocabError);
}
