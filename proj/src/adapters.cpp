#include "motionsep/adapters.hpp"

#include <Eigen/Dense>

#include "motionsep/errors.hpp"

namespace motionsep::adapters {

Slot slot_from_string(std::string_view s) {
  if (s == "q") return Slot::kQ;
  if (s == "k") return Slot::kK;
  if (s == "v") return Slot::kV;
  if (s == "ff1") return Slot::kFF1;
  if (s == "ff2") return Slot::kFF2;
  throw VocabError("unknown adapter slot: " + std::string(s));
}

std::string to_string(Slot s) {
  switch (s) {
    case Slot::kQ: return "q";
    case Slot::kK: return "k";
    case Slot::kV: return "v";
    case Slot::kFF1: return "ff1";
    case Slot::kFF2: return "ff2";
  }
  throw VocabError("invalid adapter slot value");
}

PlanMode plan_mode_from_string(std::string_view s) {
  if (s == "spatial") return PlanMode::kSpatialPath;
  if (s == "tap") return PlanMode::kTap;
  if (s == "full_temporal") return PlanMode::kFullTemporal;
  if (s == "custom") return PlanMode::kCustom;
  throw VocabError("unknown plan mode: " + std::string(s));
}

std::string to_string(PlanMode m) {
  switch (m) {
    case PlanMode::kSpatialPath: return "spatial";
    case PlanMode::kTap: return "tap";
    case PlanMode::kFullTemporal: return "full_temporal";
    case PlanMode::kCustom: return "custom";
  }
  throw VocabError("invalid plan mode value");
}

LoraAdapter LoraAdapter::init(int d_out, int d_in, int rank, double scale, Rng& rng,
                              const std::string& name) {
  if (rank < 1 || rank > std::min(d_out, d_in)) {
    throw PlanError("adapter rank " + std::to_string(rank) + " invalid for " +
                    std::to_string(d_out) + "x" + std::to_string(d_in) + " weight (" + name + ")");
  }
  LoraAdapter ad;
  ad.rank = rank;
  ad.scale = scale;
  // Small gaussian A, zero B: the product starts exactly at zero, so the
  // adapted projection equals the frozen one before any training step.
  Tensor a({rank, d_in});
  const double std_a = 0.02;
  for (int64_t i = 0; i < a.size(); ++i) a[i] = std_a * rng.normal();
  ad.A = ag::leaf(std::move(a), true, name + ".A");
  ad.B = ag::leaf(Tensor({d_out, rank}), true, name + ".B");
  return ad;
}

ag::NodeRef LoraAdapter::apply(const ag::NodeRef& x, const ag::NodeRef& w) const {
  // W x + scale * B (A x); the low-rank path never materializes B A.
  ag::NodeRef base = ag::linear(x, w);
  ag::NodeRef low = ag::linear(ag::linear(x, A), B);
  return ag::add(base, ag::scale(low, scale));
}

Tensor LoraAdapter::delta() const {
  const int64_t dout = d_out(), din = d_in(), r = rank;
  Tensor out({dout, din});
  using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const MatRM> Am(A->value.data(), r, din);
  Eigen::Map<const MatRM> Bm(B->value.data(), dout, r);
  Eigen::Map<MatRM> Om(out.data(), dout, din);
  Om.noalias() = Bm * Am;
  for (int64_t i = 0; i < out.size(); ++i) out[i] *= scale;
  return out;
}

Tensor LoraAdapter::merged(const Tensor& w) const {
  if (w.shape() != Shape{d_out(), d_in()}) {
    throw ShapeError("merged: weight " + shape_str(w.shape()) + " does not match adapter " +
                     shape_str({d_out(), d_in()}));
  }
  Tensor out = delta();
  for (int64_t i = 0; i < out.size(); ++i) out[i] += w[i];
  return out;
}

const LoraAdapter* InjectionPlan::find(std::string_view path, Slot slot) const {
  for (const auto& e : entries) {
    if (e.slot == slot && e.path == path) return &e.adapter;
  }
  return nullptr;
}

std::vector<ag::NodeRef> InjectionPlan::parameters() const {
  std::vector<ag::NodeRef> out;
  out.reserve(entries.size() * 2);
  for (const auto& e : entries) {
    out.push_back(e.adapter.A);
    out.push_back(e.adapter.B);
  }
  return out;
}

int64_t InjectionPlan::parameter_count() const {
  int64_t n = 0;
  for (const auto& e : entries) n += e.adapter.A->value.size() + e.adapter.B->value.size();
  return n;
}

void InjectionPlan::zero_grads() const {
  for (const auto& e : entries) {
    e.adapter.A->clear_grad();
    e.adapter.B->clear_grad();
  }
}

PlanPreset plan_preset_from_string(std::string_view s) {
  if (s == "tap" || s == "k") return {PlanMode::kTap, {}};
  if (s == "full") return {PlanMode::kFullTemporal, {}};
  if (s == "q") return {PlanMode::kCustom, {Slot::kQ}};
  if (s == "v") return {PlanMode::kCustom, {Slot::kV}};
  if (s == "ff") return {PlanMode::kCustom, {Slot::kFF1, Slot::kFF2}};
  if (s == "qk") return {PlanMode::kCustom, {Slot::kQ, Slot::kK}};
  throw VocabError("unknown plan preset: " + std::string(s) +
                   " (expected tap|full|q|k|v|ff|qk)");
}

}  // namespace motionsep::adapters
