#include "motionsep/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "motionsep/errors.hpp"

namespace motionsep::net {

using ag::NodeRef;

SkipMode skip_mode_from_string(std::string_view s) {
  if (s == "vanilla") return SkipMode::kVanilla;
  if (s == "ah") return SkipMode::kAppearanceHighway;
  throw VocabError("unknown skip mode: " + std::string(s));
}

std::string to_string(SkipMode m) {
  return m == SkipMode::kVanilla ? "vanilla" : "ah";
}

void UNetConfig::validate() const {
  if (levels < 1 || levels > 4) throw ConfigError("net.levels must lie in [1, 4]");
  if (base_channels < 4) throw ConfigError("net.base_channels must be >= 4");
  if (heads < 1 || base_channels % heads != 0) {
    throw ConfigError("net.heads must divide base_channels");
  }
  if (patch != 1 && patch != 2 && patch != 4) throw ConfigError("net.patch must be 1, 2 or 4");
  if (height % patch != 0 || width % patch != 0) {
    throw ConfigError("frame size must be divisible by the patch size");
  }
  const int group = 1 << (levels - 1);
  if (tokens_y() % group != 0 || tokens_x() % group != 0) {
    throw ConfigError("token grid must be divisible by 2^(levels-1)");
  }
  if (time_embed_dim < 8 || time_embed_dim % 2 != 0) {
    throw ConfigError("net.time_embed_dim must be even and >= 8");
  }
  if (cond_embed_dim < 4) throw ConfigError("net.cond_embed_dim must be >= 4");
  if (max_frames < 1) throw ConfigError("net.max_frames must be >= 1");
  if (beta <= 0.0) throw ConfigError("net.beta must be positive");
  if (vanilla_skip_scale <= 0.0) throw ConfigError("net.vanilla_skip_scale must be positive");
}

CondLabels labels_for(const synthvid::ClipSpec& spec) {
  CondLabels l;
  l.motion_id = static_cast<int>(spec.motion);
  l.shape = spec.appearance.shape;
  l.fg_bin = synthvid::nearest_fg_bin(spec.appearance.fg);
  l.bg_bin = synthvid::nearest_bg_bin(spec.appearance.bg);
  return l;
}

Tensor time_embedding(int t, int dim) {
  Tensor out({dim});
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / half);
    out[i] = std::sin(t * freq);
    out[half + i] = std::cos(t * freq);
  }
  return out;
}

// ---- attention ----

NodeRef multihead_attention(const NodeRef& xq, const NodeRef& xkv, const AttentionWeights& w,
                            int heads, const AttentionAdapters& ad, AttentionStats* stats) {
  const Shape& qs = xq->shape();
  const Shape& ks = xkv->shape();
  if (qs.size() != 3 || ks.size() != 3 || qs[0] != ks[0] || qs[2] != ks[2]) {
    throw ShapeError("attention: want (B, n, d) inputs with matching batch and width, got " +
                     shape_str(qs) + " and " + shape_str(ks));
  }
  const int64_t B = qs[0], nq = qs[1], nk = ks[1], d = qs[2];
  if (heads < 1 || d % heads != 0) throw ShapeError("attention: heads must divide width");
  const int64_t dh = d / heads;

  auto project = [&](const NodeRef& x, const NodeRef& weight,
                     const adapters::LoraAdapter* adapter) {
    return adapter ? adapter->apply(x, weight) : ag::linear(x, weight);
  };
  auto split_heads = [&](const NodeRef& x, int64_t n) {
    NodeRef r = ag::reshape(x, {B, n, heads, dh});
    r = ag::permute(r, {0, 2, 1, 3});
    return ag::reshape(r, {B * heads, n, dh});
  };

  NodeRef q = split_heads(project(xq, w.wq, ad.q), nq);
  NodeRef k = split_heads(project(xkv, w.wk, ad.k), nk);
  NodeRef v = split_heads(project(xkv, w.wv, ad.v), nk);

  NodeRef scores = ag::scale(ag::bmm(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  NodeRef attn = ag::softmax_last(scores);
  if (stats) {
    const Tensor& a = attn->value;
    const int64_t rows = B * heads * nq;
    for (int64_t r = 0; r < rows; ++r) {
      double sum = 0.0;
      for (int64_t j = 0; j < nk; ++j) sum += a[r * nk + j];
      stats->max_row_dev = std::max(stats->max_row_dev, std::abs(sum - 1.0));
    }
    stats->rows += rows;
  }

  NodeRef o = ag::bmm(attn, v);  // (B*heads, nq, dh)
  o = ag::reshape(o, {B, heads, nq, dh});
  o = ag::permute(o, {0, 2, 1, 3});
  o = ag::reshape(o, {B, nq, d});
  return ag::linear(o, w.wo);
}

// ---- parameter construction ----

NodeRef UNet::register_param(const std::string& name, Tensor init) {
  NodeRef p = ag::leaf(std::move(init), true, name);
  params_.push_back(p);
  by_name_[name] = p;
  return p;
}

namespace {

Tensor gaussian(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  rng.fill_normal(t.data(), t.size());
  for (int64_t i = 0; i < t.size(); ++i) t[i] *= stddev;
  return t;
}

std::string block_name(int level, bool encoder) {
  return (encoder ? "enc" : "dec") + std::to_string(level);
}

}  // namespace

void UNet::build_params(Rng& rng) {
  const UNetConfig& c = config_;
  const int p2c = c.patch * c.patch * 3;
  const int n0 = c.tokens_y() * c.tokens_x();

  auto mat = [&](const std::string& name, int dout, int din) {
    return register_param(name, gaussian({dout, din}, 1.0 / std::sqrt(static_cast<double>(din)), rng));
  };
  auto vec_zero = [&](const std::string& name, int d) { return register_param(name, Tensor({d})); };
  auto vec_one = [&](const std::string& name, int d) {
    return register_param(name, Tensor({d}, 1.0));
  };
  auto table = [&](const std::string& name, int rows, int d) {
    return register_param(name, gaussian({rows, d}, 0.02, rng));
  };

  mat("patch.w", c.base_channels, p2c);
  vec_zero("patch.b", c.base_channels);
  table("patch.pos", n0, c.base_channels);
  table("patch.tpos", c.max_frames, c.base_channels);

  mat("time.w1", c.time_embed_dim, c.time_embed_dim);
  vec_zero("time.b1", c.time_embed_dim);
  mat("time.w2", c.time_embed_dim, c.time_embed_dim);
  vec_zero("time.b2", c.time_embed_dim);

  table("cond.motion", kMotionVocab, c.cond_embed_dim);
  table("cond.shape", synthvid::kNumShapes, c.cond_embed_dim);
  table("cond.fg", static_cast<int>(synthvid::fg_palette().size()), c.cond_embed_dim);
  table("cond.bg", static_cast<int>(synthvid::bg_palette().size()), c.cond_embed_dim);

  for (int l = 0; l < c.levels; ++l) {
    const std::string lvl = std::to_string(l);
    mat("cond_proj" + lvl + ".w", c.channels_at(l), c.cond_embed_dim);
    vec_zero("cond_proj" + lvl + ".b", c.channels_at(l));
  }

  auto transformer = [&](const std::string& prefix, int ch, bool temporal) {
    vec_one(prefix + ".ln1.g", ch);
    vec_zero(prefix + ".ln1.b", ch);
    const bool zero_out = temporal && c.temporal_zero_init;
    const std::string attn = temporal ? prefix + ".attn" : prefix + ".self";
    mat(attn + ".wq", ch, ch);
    mat(attn + ".wk", ch, ch);
    mat(attn + ".wv", ch, ch);
    if (zero_out) {
      register_param(attn + ".wo", Tensor({ch, ch}));
    } else {
      mat(attn + ".wo", ch, ch);
    }
    if (!temporal) {
      vec_one(prefix + ".lnc.g", ch);
      vec_zero(prefix + ".lnc.b", ch);
      mat(prefix + ".cross.wq", ch, ch);
      mat(prefix + ".cross.wk", ch, ch);
      mat(prefix + ".cross.wv", ch, ch);
      mat(prefix + ".cross.wo", ch, ch);
    }
    vec_one(prefix + ".ln2.g", ch);
    vec_zero(prefix + ".ln2.b", ch);
    mat(prefix + ".ff.w1", 2 * ch, ch);
    vec_zero(prefix + ".ff.b1", 2 * ch);
    if (zero_out) {
      register_param(prefix + ".ff.w2", Tensor({ch, 2 * ch}));
    } else {
      mat(prefix + ".ff.w2", ch, 2 * ch);
    }
    vec_zero(prefix + ".ff.b2", ch);
  };

  auto block = [&](const std::string& name, int level) {
    const int ch = c.channels_at(level);
    mat(name + ".time.w", ch, c.time_embed_dim);
    vec_zero(name + ".time.b", ch);
    transformer(name + ".sp", ch, /*temporal=*/false);
    transformer(name + ".tp", ch, /*temporal=*/true);
  };

  for (int l = 0; l < c.levels; ++l) block(block_name(l, true), l);
  for (int l = 0; l < c.levels - 1; ++l) {
    mat("down" + std::to_string(l) + ".w", c.channels_at(l + 1), 4 * c.channels_at(l));
    vec_zero("down" + std::to_string(l) + ".b", c.channels_at(l + 1));
    mat("up" + std::to_string(l) + ".w", 4 * c.channels_at(l), c.channels_at(l + 1));
    vec_zero("up" + std::to_string(l) + ".b", 4 * c.channels_at(l));
  }
  for (int l = c.levels - 1; l >= 0; --l) {
    const std::string lvl = std::to_string(l);
    mat("merge" + lvl + ".w", c.channels_at(l), 2 * c.channels_at(l));
    vec_zero("merge" + lvl + ".b", c.channels_at(l));
    block(block_name(l, false), l);
  }

  vec_one("head.ln.g", c.base_channels);
  vec_zero("head.ln.b", c.base_channels);
  mat("head.w", p2c, c.base_channels);
  vec_zero("head.b", p2c);
}

UNet::UNet(UNetConfig config, uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng = Rng(seed).stream("net-init");
  build_params(rng);
}

NodeRef UNet::param(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw PlanError("no parameter named " + name);
  return it->second;
}

void UNet::zero_grads() const {
  for (const auto& p : params_) p->clear_grad();
}

std::vector<std::string> UNet::temporal_paths() const {
  std::vector<std::string> out;
  for (int l = 0; l < config_.levels; ++l) out.push_back(block_name(l, true) + ".temporal");
  for (int l = config_.levels - 1; l >= 0; --l) {
    out.push_back(block_name(l, false) + ".temporal");
  }
  return out;
}

std::vector<std::string> UNet::spatial_paths() const {
  std::vector<std::string> out;
  for (int l = 0; l < config_.levels; ++l) out.push_back(block_name(l, true) + ".spatial");
  for (int l = config_.levels - 1; l >= 0; --l) {
    out.push_back(block_name(l, false) + ".spatial");
  }
  return out;
}

NodeRef UNet::target_weight(const std::string& path, adapters::Slot slot) const {
  const auto dot = path.rfind('.');
  if (dot == std::string::npos) throw PlanError("malformed plan path: " + path);
  const std::string block = path.substr(0, dot);
  const std::string kind = path.substr(dot + 1);
  std::string prefix;
  if (kind == "temporal") {
    prefix = block + ".tp";
  } else if (kind == "spatial") {
    prefix = block + ".sp";
  } else {
    throw PlanError("plan path must end in .temporal or .spatial: " + path);
  }
  const std::string attn = kind == "temporal" ? prefix + ".attn" : prefix + ".self";
  std::string name;
  switch (slot) {
    case adapters::Slot::kQ: name = attn + ".wq"; break;
    case adapters::Slot::kK: name = attn + ".wk"; break;
    case adapters::Slot::kV: name = attn + ".wv"; break;
    case adapters::Slot::kFF1: name = prefix + ".ff.w1"; break;
    case adapters::Slot::kFF2: name = prefix + ".ff.w2"; break;
  }
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw PlanError("plan path not present in this model: " + path);
  return it->second;
}

adapters::InjectionPlan UNet::build_plan(const adapters::PlanPreset& preset, int rank,
                                         double scale, uint64_t seed) const {
  using adapters::PlanMode;
  using adapters::Slot;
  adapters::InjectionPlan plan;
  plan.mode = preset.mode;
  plan.rank = rank;
  plan.scale = scale;

  std::vector<std::string> paths;
  std::vector<Slot> slots;
  switch (preset.mode) {
    case PlanMode::kSpatialPath:
      paths = spatial_paths();
      slots = {Slot::kQ, Slot::kK, Slot::kV};
      break;
    case PlanMode::kTap:
      paths = temporal_paths();
      slots = {Slot::kK};
      break;
    case PlanMode::kFullTemporal:
      paths = temporal_paths();
      slots = {Slot::kQ, Slot::kK, Slot::kV, Slot::kFF1, Slot::kFF2};
      break;
    case PlanMode::kCustom:
      paths = temporal_paths();
      slots = preset.custom_slots;
      if (slots.empty()) throw PlanError("custom plan needs at least one slot");
      for (size_t i = 0; i < slots.size(); ++i) {
        for (size_t j = i + 1; j < slots.size(); ++j) {
          if (slots[i] == slots[j]) throw PlanError("custom plan repeats a slot");
        }
      }
      break;
  }

  Rng rng = Rng(seed).stream("adapters");
  for (const auto& path : paths) {
    for (Slot slot : slots) {
      const NodeRef w = target_weight(path, slot);
      adapters::PlanEntry entry;
      entry.path = path;
      entry.slot = slot;
      entry.adapter = adapters::LoraAdapter::init(
          static_cast<int>(w->value.dim(0)), static_cast<int>(w->value.dim(1)), rank, scale, rng,
          path + "." + adapters::to_string(slot));
      plan.entries.push_back(std::move(entry));
    }
  }
  return plan;
}

// ---- conditioning ----

NodeRef UNet::cond_tokens(const std::vector<CondLabels>& labels) const {
  if (labels.empty()) throw ShapeError("cond_tokens: empty batch");
  std::vector<int64_t> motion, shape, fg, bg;
  for (const auto& l : labels) {
    if (l.motion_id < 0 || l.motion_id >= kMotionVocab) {
      throw VocabError("motion id " + std::to_string(l.motion_id) + " outside vocabulary");
    }
    motion.push_back(l.motion_id);
    shape.push_back(static_cast<int64_t>(l.shape));
    fg.push_back(l.fg_bin);
    bg.push_back(l.bg_bin);
  }
  const auto b = static_cast<int64_t>(labels.size());
  const int64_t cd = config_.cond_embed_dim;
  // Four tokens per clip: motion, shape, fg color, bg color. gather_rows
  // validates the palette bins against the table sizes.
  NodeRef tm = ag::gather_rows(param("cond.motion"), motion);
  NodeRef ts = ag::gather_rows(param("cond.shape"), shape);
  NodeRef tf = ag::gather_rows(param("cond.fg"), fg);
  NodeRef tb = ag::gather_rows(param("cond.bg"), bg);
  NodeRef cat = ag::concat_last({tm, ts, tf, tb});  // (b, 4*cd)
  return ag::reshape(cat, {b, 4, cd});
}

// ---- forward ----

namespace {

struct BlockIO {
  NodeRef spatial;   // output of the spatial transformer, pre-temporal
  NodeRef temporal;  // block output after the temporal transformer
};

}  // namespace

ag::NodeRef UNet::forward(const NodeRef& z, const std::vector<int>& t,
                          const std::vector<CondLabels>& labels,
                          const ForwardOptions& opts) const {
  const UNetConfig& c = config_;
  const Shape& zs = z->shape();
  if (zs.size() != 5 || zs[4] != 3) {
    throw ShapeError("forward: want (b, f, h, w, 3) input, got " + shape_str(zs));
  }
  const int64_t b = zs[0], f = zs[1];
  if (zs[2] != c.height || zs[3] != c.width) {
    throw ShapeError("forward: frame size " + shape_str(zs) + " does not match config " +
                     std::to_string(c.height) + "x" + std::to_string(c.width));
  }
  if (f > c.max_frames) throw ShapeError("forward: clip longer than max_frames");
  if (static_cast<int64_t>(t.size()) != b || static_cast<int64_t>(labels.size()) != b) {
    throw ShapeError("forward: batch size mismatch between z, t and labels");
  }

  const SkipSettings skip = opts.skip.value_or(SkipSettings{
      c.skip_mode, c.beta, c.vanilla_skip_scale, c.ah_level_mask});
  const adapters::InjectionPlan* plan = opts.plan;

  // Timestep embedding -> small MLP, (b, time_embed_dim).
  Tensor traw({b, c.time_embed_dim});
  for (int64_t i = 0; i < b; ++i) {
    const Tensor e = time_embedding(t[static_cast<size_t>(i)], c.time_embed_dim);
    std::copy_n(e.data(), e.size(), traw.data() + i * c.time_embed_dim);
  }
  NodeRef temb = ag::affine(ag::silu(ag::affine(ag::constant(std::move(traw)), param("time.w1"),
                                                param("time.b1"))),
                            param("time.w2"), param("time.b2"));

  NodeRef cond = cond_tokens(labels);  // (b, 4, cond_dim)
  std::vector<NodeRef> cond_lvl(static_cast<size_t>(c.levels));
  for (int l = 0; l < c.levels; ++l) {
    const std::string lvl = std::to_string(l);
    cond_lvl[static_cast<size_t>(l)] =
        ag::affine(cond, param("cond_proj" + lvl + ".w"), param("cond_proj" + lvl + ".b"));
  }

  // Patchify: (b,f,h,w,3) -> (b,f,n0,patch^2*3) -> project to base channels.
  const int64_t hp = c.tokens_y(), wp = c.tokens_x(), P = c.patch;
  const int64_t n0 = hp * wp;
  NodeRef x = ag::reshape(z, {b, f, hp, P, wp, P, 3});
  x = ag::permute(x, {0, 1, 2, 4, 3, 5, 6});
  x = ag::reshape(x, {b, f, n0, P * P * 3});
  x = ag::affine(x, param("patch.w"), param("patch.b"));
  x = ag::add(x, param("patch.pos"));
  NodeRef tpos = ag::gather_rows(param("patch.tpos"), [&] {
    std::vector<int64_t> idx(static_cast<size_t>(f));
    for (int64_t i = 0; i < f; ++i) idx[static_cast<size_t>(i)] = i;
    return idx;
  }());
  x = ag::add(x, ag::reshape(tpos, {1, f, 1, c.base_channels}));

  auto attention_adapters = [&](const std::string& path) {
    AttentionAdapters ad;
    if (plan) {
      ad.q = plan->find(path, adapters::Slot::kQ);
      ad.k = plan->find(path, adapters::Slot::kK);
      ad.v = plan->find(path, adapters::Slot::kV);
    }
    return ad;
  };
  auto feed_forward = [&](const NodeRef& in, const std::string& prefix,
                          const std::string& path) {
    const adapters::LoraAdapter* ff1 = plan ? plan->find(path, adapters::Slot::kFF1) : nullptr;
    const adapters::LoraAdapter* ff2 = plan ? plan->find(path, adapters::Slot::kFF2) : nullptr;
    NodeRef h = ff1 ? ff1->apply(in, param(prefix + ".ff.w1"))
                    : ag::linear(in, param(prefix + ".ff.w1"));
    h = ag::silu(ag::add(h, param(prefix + ".ff.b1")));
    NodeRef o = ff2 ? ff2->apply(h, param(prefix + ".ff.w2"))
                    : ag::linear(h, param(prefix + ".ff.w2"));
    return ag::add(o, param(prefix + ".ff.b2"));
  };

  // One spatial+temporal block. Returns both the pre-temporal (spatial) and
  // post-temporal outputs; the skip source chooses between them.
  auto run_block = [&](const NodeRef& input, const std::string& name, int level) -> BlockIO {
    const int64_t ch = c.channels_at(level);
    const int64_t n = input->shape()[2];
    NodeRef tb = ag::affine(temb, param(name + ".time.w"), param(name + ".time.b"));
    NodeRef xin = ag::add(input, ag::reshape(tb, {b, 1, 1, ch}));

    // Spatial transformer: attention across the n tokens of each frame.
    const std::string sp = name + ".sp";
    const std::string sp_path = name + ".spatial";
    NodeRef hs = ag::reshape(xin, {b * f, n, ch});
    AttentionWeights self_w{param(sp + ".self.wq"), param(sp + ".self.wk"),
                            param(sp + ".self.wv"), param(sp + ".self.wo")};
    NodeRef ln1 = ag::layer_norm(hs, param(sp + ".ln1.g"), param(sp + ".ln1.b"));
    hs = ag::add(hs, multihead_attention(ln1, ln1, self_w, c.heads,
                                         attention_adapters(sp_path), opts.attn_stats));
    // Cross-attention against the conditioning tokens, tiled per frame.
    NodeRef cl = cond_lvl[static_cast<size_t>(level)];
    cl = ag::reshape(cl, {b, 1, 4, ch});
    cl = ag::broadcast_to(cl, {b, f, 4, ch});
    cl = ag::reshape(cl, {b * f, 4, ch});
    AttentionWeights cross_w{param(sp + ".cross.wq"), param(sp + ".cross.wk"),
                             param(sp + ".cross.wv"), param(sp + ".cross.wo")};
    NodeRef lnc = ag::layer_norm(hs, param(sp + ".lnc.g"), param(sp + ".lnc.b"));
    hs = ag::add(hs, multihead_attention(lnc, cl, cross_w, c.heads, {}, opts.attn_stats));
    NodeRef ln2 = ag::layer_norm(hs, param(sp + ".ln2.g"), param(sp + ".ln2.b"));
    hs = ag::add(hs, feed_forward(ln2, sp, sp_path));
    NodeRef spatial_out = ag::reshape(hs, {b, f, n, ch});

    // Temporal transformer: attention across the f frames of each location.
    const std::string tp = name + ".tp";
    const std::string tp_path = name + ".temporal";
    NodeRef ht = ag::permute(spatial_out, {0, 2, 1, 3});  // (b, n, f, ch)
    ht = ag::reshape(ht, {b * n, f, ch});
    AttentionWeights tw{param(tp + ".attn.wq"), param(tp + ".attn.wk"), param(tp + ".attn.wv"),
                        param(tp + ".attn.wo")};
    NodeRef tln1 = ag::layer_norm(ht, param(tp + ".ln1.g"), param(tp + ".ln1.b"));
    ht = ag::add(ht, multihead_attention(tln1, tln1, tw, c.heads, attention_adapters(tp_path),
                                         opts.attn_stats));
    NodeRef tln2 = ag::layer_norm(ht, param(tp + ".ln2.g"), param(tp + ".ln2.b"));
    ht = ag::add(ht, feed_forward(tln2, tp, tp_path));
    ht = ag::reshape(ht, {b, n, f, ch});
    NodeRef temporal_out = ag::permute(ht, {0, 2, 1, 3});
    return {spatial_out, temporal_out};
  };

  auto skip_source = [&](const BlockIO& io, int level) -> NodeRef {
    const bool rewired = skip.mode == SkipMode::kAppearanceHighway &&
                         ((skip.level_mask >> level) & 1u);
    if (rewired) return ag::scale(io.spatial, skip.beta);
    return skip.vanilla_scale == 1.0 ? io.temporal : ag::scale(io.temporal, skip.vanilla_scale);
  };

  // Encoder.
  std::vector<BlockIO> enc(static_cast<size_t>(c.levels));
  int64_t ty = hp, tx = wp;
  for (int l = 0; l < c.levels; ++l) {
    enc[static_cast<size_t>(l)] = run_block(x, block_name(l, true), l);
    if (l + 1 < c.levels) {
      // Group 2x2 token neighborhoods and project to the next level's width.
      const int64_t ch = c.channels_at(l);
      NodeRef d = ag::reshape(enc[static_cast<size_t>(l)].temporal, {b, f, ty, tx, ch});
      d = ag::reshape(d, {b, f, ty / 2, 2, tx / 2, 2, ch});
      d = ag::permute(d, {0, 1, 2, 4, 3, 5, 6});
      d = ag::reshape(d, {b, f, (ty / 2) * (tx / 2), 4 * ch});
      const std::string ds = "down" + std::to_string(l);
      x = ag::affine(d, param(ds + ".w"), param(ds + ".b"));
      ty /= 2;
      tx /= 2;
    }
  }

  // Decoder, deepest level first. The trunk at the deepest level is that
  // encoder block's own output.
  NodeRef trunk = enc[static_cast<size_t>(c.levels - 1)].temporal;
  for (int l = c.levels - 1; l >= 0; --l) {
    const std::string lvl = std::to_string(l);
    NodeRef skip_in = skip_source(enc[static_cast<size_t>(l)], l);
    NodeRef merged = ag::affine(ag::concat_last({skip_in, trunk}), param("merge" + lvl + ".w"),
                                param("merge" + lvl + ".b"));
    if (opts.trace) {
      opts.trace->entries.push_back(TraceEntry{l, opts.trace_step, merged->value});
    }
    BlockIO out = run_block(merged, block_name(l, false), l);
    trunk = out.temporal;
    if (l > 0) {
      // Ungroup back to the finer token grid.
      const int64_t ch_fine = c.channels_at(l - 1);
      const std::string us = "up" + std::to_string(l - 1);
      NodeRef u = ag::affine(trunk, param(us + ".w"), param(us + ".b"));  // (b,f,n_l,4*ch_fine)
      u = ag::reshape(u, {b, f, ty, tx, 2, 2, ch_fine});
      u = ag::permute(u, {0, 1, 2, 4, 3, 5, 6});
      ty *= 2;
      tx *= 2;
      u = ag::reshape(u, {b, f, ty * tx, ch_fine});
      trunk = u;
    }
  }

  // Head: back to pixel space.
  NodeRef out = ag::layer_norm(trunk, param("head.ln.g"), param("head.ln.b"));
  out = ag::affine(out, param("head.w"), param("head.b"));
  out = ag::reshape(out, {b, f, hp, wp, P, P, 3});
  out = ag::permute(out, {0, 1, 2, 4, 3, 5, 6});
  return ag::reshape(out, {b, f, c.height, c.width, 3});
}

Tensor UNet::predict(const Tensor& z, const std::vector<int>& t,
                     const std::vector<CondLabels>& labels, const ForwardOptions& opts) const {
  return forward(ag::constant(z), t, labels, opts)->value;
}

void UNet::copy_values_from(const UNet& other) {
  if (by_name_.size() != other.by_name_.size()) {
    throw ShapeError("copy_values_from: parameter sets differ");
  }
  for (const auto& [name, p] : by_name_) {
    auto it = other.by_name_.find(name);
    if (it == other.by_name_.end() || !it->second->value.same_shape(p->value)) {
      throw ShapeError("copy_values_from: mismatch at " + name);
    }
    p->value = it->second->value;
  }
}

// ---- checkpoint IO ----

namespace {

constexpr char kCkptMagic[16] = {'M', 'O', 'T', 'I', 'O', 'N', 'S', 'E',
                                 'P', '-', 'C', 'K', 'P', 'T', '\0', '\0'};
constexpr uint32_t kCkptVersion = 1;
constexpr uint32_t kKindModel = 0;
constexpr uint32_t kKindAdapters = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::filesystem::path& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) {
    throw FileFormatError("truncated checkpoint: " + path.string());
  }
  return v;
}

void write_text_block(std::ostream& os, const std::string& text) {
  write_pod<uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
}

std::string read_text_block(std::istream& is, const std::filesystem::path& path) {
  const auto len = read_pod<uint64_t>(is, path);
  if (len > (1u << 20)) throw FileFormatError("implausible config block in " + path.string());
  std::string text(len, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(len))) {
    throw FileFormatError("truncated checkpoint: " + path.string());
  }
  return text;
}

void write_record(std::ostream& os, const std::string& name, const Tensor& t) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_pod<uint64_t>(os, static_cast<uint64_t>(t.ndim()));
  for (int64_t d : t.shape()) write_pod<uint64_t>(os, static_cast<uint64_t>(d));
  std::vector<float> payload(static_cast<size_t>(t.size()));
  for (int64_t i = 0; i < t.size(); ++i) payload[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

std::pair<std::string, Tensor> read_record(std::istream& is, const std::filesystem::path& path) {
  const auto name_len = read_pod<uint32_t>(is, path);
  if (name_len > 4096) throw FileFormatError("implausible record name in " + path.string());
  std::string name(name_len, '\0');
  if (!is.read(name.data(), name_len)) throw FileFormatError("truncated checkpoint: " + path.string());
  const auto ndim = read_pod<uint64_t>(is, path);
  if (ndim > 16) throw FileFormatError("implausible record rank in " + path.string());
  Shape shape(ndim);
  for (auto& d : shape) d = static_cast<int64_t>(read_pod<uint64_t>(is, path));
  const int64_t n = shape_numel(shape);
  std::vector<float> payload(static_cast<size_t>(n));
  if (!is.read(reinterpret_cast<char*>(payload.data()),
               static_cast<std::streamsize>(payload.size() * sizeof(float)))) {
    throw FileFormatError("truncated checkpoint: " + path.string());
  }
  std::vector<double> data(payload.begin(), payload.end());
  return {std::move(name), Tensor::from(std::move(shape), std::move(data))};
}

std::ofstream open_ckpt_write(const std::filesystem::path& path, uint32_t kind) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DependencyError("cannot open for writing: " + path.string());
  os.write(kCkptMagic, sizeof(kCkptMagic));
  write_pod<uint32_t>(os, kCkptVersion);
  write_pod<uint32_t>(os, kind);
  return os;
}

std::ifstream open_ckpt_read(const std::filesystem::path& path, uint32_t expect_kind) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DependencyError("missing checkpoint: " + path.string());
  char magic[16];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0) {
    throw FileFormatError("bad magic in checkpoint: " + path.string());
  }
  const auto version = read_pod<uint32_t>(is, path);
  if (version != kCkptVersion) {
    throw FileFormatError("unsupported checkpoint version in " + path.string());
  }
  const auto kind = read_pod<uint32_t>(is, path);
  if (kind != expect_kind) {
    throw FileFormatError(path.string() + " is not a " +
                          (expect_kind == kKindModel ? "model" : "adapter") + " checkpoint");
  }
  return is;
}

std::map<std::string, std::string> parse_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

void UNet::save(const std::filesystem::path& path) const {
  std::ofstream os = open_ckpt_write(path, kKindModel);
  std::ostringstream cfg;
  const UNetConfig& c = config_;
  cfg << "levels = " << c.levels << "\n"
      << "base_channels = " << c.base_channels << "\n"
      << "heads = " << c.heads << "\n"
      << "patch = " << c.patch << "\n"
      << "height = " << c.height << "\n"
      << "width = " << c.width << "\n"
      << "max_frames = " << c.max_frames << "\n"
      << "time_embed_dim = " << c.time_embed_dim << "\n"
      << "cond_embed_dim = " << c.cond_embed_dim << "\n"
      << "temporal_zero_init = " << (c.temporal_zero_init ? "true" : "false") << "\n"
      << "skip_mode = " << to_string(c.skip_mode) << "\n"
      << "beta = " << fmt_double(c.beta) << "\n"
      << "vanilla_skip_scale = " << fmt_double(c.vanilla_skip_scale) << "\n"
      << "ah_level_mask = " << c.ah_level_mask << "\n";
  write_text_block(os, cfg.str());
  write_pod<uint64_t>(os, params_.size());
  for (const auto& p : params_) write_record(os, p->name, p->value);
  if (!os) throw DependencyError("short write to " + path.string());
}

UNet UNet::load(const std::filesystem::path& path) {
  std::ifstream is = open_ckpt_read(path, kKindModel);
  const auto kv = parse_kv(read_text_block(is, path));
  auto want = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FileFormatError("checkpoint missing config key " + key);
    return it->second;
  };
  UNetConfig c;
  c.levels = std::stoi(want("levels"));
  c.base_channels = std::stoi(want("base_channels"));
  c.heads = std::stoi(want("heads"));
  c.patch = std::stoi(want("patch"));
  c.height = std::stoi(want("height"));
  c.width = std::stoi(want("width"));
  c.max_frames = std::stoi(want("max_frames"));
  c.time_embed_dim = std::stoi(want("time_embed_dim"));
  c.cond_embed_dim = std::stoi(want("cond_embed_dim"));
  c.temporal_zero_init = want("temporal_zero_init") == "true";
  c.skip_mode = skip_mode_from_string(want("skip_mode"));
  c.beta = std::stod(want("beta"));
  c.vanilla_skip_scale = std::stod(want("vanilla_skip_scale"));
  c.ah_level_mask = static_cast<uint32_t>(std::stoul(want("ah_level_mask")));

  UNet net(c, /*seed=*/0);
  const auto n = read_pod<uint64_t>(is, path);
  if (n != net.params_.size()) {
    throw FileFormatError("checkpoint has " + std::to_string(n) + " records, model wants " +
                          std::to_string(net.params_.size()));
  }
  size_t filled = 0;
  for (uint64_t i = 0; i < n; ++i) {
    auto [name, tensor] = read_record(is, path);
    auto it = net.by_name_.find(name);
    if (it == net.by_name_.end()) {
      throw FileFormatError("checkpoint record " + name + " not present in model");
    }
    if (!it->second->value.same_shape(tensor)) {
      throw FileFormatError("checkpoint record " + name + " has shape " +
                            shape_str(tensor.shape()) + ", model wants " +
                            shape_str(it->second->value.shape()));
    }
    it->second->value = std::move(tensor);
    ++filled;
  }
  if (filled != net.params_.size()) throw FileFormatError("checkpoint left parameters unfilled");
  return net;
}

void save_plan(const std::filesystem::path& path, const adapters::InjectionPlan& plan) {
  std::ofstream os = open_ckpt_write(path, kKindAdapters);
  std::ostringstream cfg;
  cfg << "mode = " << adapters::to_string(plan.mode) << "\n"
      << "rank = " << plan.rank << "\n"
      << "scale = " << fmt_double(plan.scale) << "\n"
      << "entries = " << plan.entries.size() << "\n";
  for (size_t i = 0; i < plan.entries.size(); ++i) {
    cfg << "entry" << i << " = " << plan.entries[i].path << " "
        << adapters::to_string(plan.entries[i].slot) << "\n";
  }
  write_text_block(os, cfg.str());
  write_pod<uint64_t>(os, plan.entries.size() * 2);
  for (size_t i = 0; i < plan.entries.size(); ++i) {
    write_record(os, std::to_string(i) + ".A", plan.entries[i].adapter.A->value);
    write_record(os, std::to_string(i) + ".B", plan.entries[i].adapter.B->value);
  }
  if (!os) throw DependencyError("short write to " + path.string());
}

adapters::InjectionPlan load_plan(const std::filesystem::path& path, const UNet& model) {
  std::ifstream is = open_ckpt_read(path, kKindAdapters);
  const auto kv = parse_kv(read_text_block(is, path));
  auto want = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FileFormatError("adapter checkpoint missing key " + key);
    return it->second;
  };
  adapters::InjectionPlan plan;
  plan.mode = adapters::plan_mode_from_string(want("mode"));
  plan.rank = std::stoi(want("rank"));
  plan.scale = std::stod(want("scale"));
  const int n_entries = std::stoi(want("entries"));

  std::map<std::string, Tensor> records;
  const auto n_rec = read_pod<uint64_t>(is, path);
  for (uint64_t i = 0; i < n_rec; ++i) {
    auto [name, tensor] = read_record(is, path);
    records.emplace(std::move(name), std::move(tensor));
  }

  for (int i = 0; i < n_entries; ++i) {
    std::istringstream line(want("entry" + std::to_string(i)));
    std::string p, slot_s;
    line >> p >> slot_s;
    adapters::PlanEntry entry;
    entry.path = p;
    entry.slot = adapters::slot_from_string(slot_s);
    auto ita = records.find(std::to_string(i) + ".A");
    auto itb = records.find(std::to_string(i) + ".B");
    if (ita == records.end() || itb == records.end()) {
      throw FileFormatError("adapter checkpoint missing tensors for entry " + std::to_string(i));
    }
    // Validate dims against the target weight in this model.
    const NodeRef w = model.target_weight(p, entry.slot);
    if (ita->second.dim(1) != w->value.dim(1) || itb->second.dim(0) != w->value.dim(0) ||
        ita->second.dim(0) != plan.rank || itb->second.dim(1) != plan.rank) {
      throw PlanError("adapter entry " + p + "." + slot_s + " does not fit this model");
    }
    entry.adapter.rank = plan.rank;
    entry.adapter.scale = plan.scale;
    entry.adapter.A = ag::leaf(ita->second, true, p + "." + slot_s + ".A");
    entry.adapter.B = ag::leaf(itb->second, true, p + "." + slot_s + ".B");
    plan.entries.push_back(std::move(entry));
  }
  return plan;
}

}  // namespace motionsep::net
