#include "motionsep/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "motionsep/errors.hpp"
#include "motionsep/rng.hpp"
#include "motionsep/trainer.hpp"

namespace motionsep::probe {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Cosine with the trace semantics: two zero vectors are identical (1), a
// zero against a nonzero is maximally dissimilar in the only defined sense
// (0).  Inputs must already have matching sizes.
double cosine_zero_aware(const Tensor& a, const Tensor& b) {
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  constexpr double kEps = 1e-300;
  if (na < kEps && nb < kEps) return 1.0;
  if (na < kEps || nb < kEps) return 0.0;
  return dot(a, b) / (na * nb);
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

double rgb_dist(const synthvid::Rgb& a, const synthvid::Rgb& b) {
  const double dr = a.r - b.r, dg = a.g - b.g, db = a.b - b.b;
  return std::sqrt(dr * dr + dg * dg + db * db);
}

}  // namespace

// ---------------------------------------------------------------------------
// Features.
// ---------------------------------------------------------------------------

Tensor motion_features(const Tensor& frames, int grid) {
  if (grid < 1) throw ConfigError("motion_features: grid must be >= 1");
  if (frames.ndim() != 4) {
    throw ShapeError("motion_features: expected (frames, h, w, c), got " +
                     shape_str(frames.shape()));
  }
  const int f = static_cast<int>(frames.dim(0));
  const int h = static_cast<int>(frames.dim(1));
  const int w = static_cast<int>(frames.dim(2));
  const int c = static_cast<int>(frames.dim(3));
  if (f < 2) throw ShapeError("motion_features: need at least 2 frames, got " + std::to_string(f));
  if (h < 1 || w < 1 || c < 1) {
    throw ShapeError("motion_features: degenerate spatial shape " + shape_str(frames.shape()));
  }

  const int g = std::min({grid, h, w});
  Tensor out({static_cast<int64_t>(f - 1) * g * g * 2});
  const double* x = frames.data();
  const int64_t frame_stride = static_cast<int64_t>(h) * w * c;
  int64_t k = 0;
  for (int p = 0; p + 1 < f; ++p) {
    const double* a = x + p * frame_stride;
    const double* b = a + frame_stride;
    for (int cy = 0; cy < g; ++cy) {
      const int r0 = cy * h / g, r1 = (cy + 1) * h / g;
      for (int cx = 0; cx < g; ++cx) {
        const int c0 = cx * w / g, c1 = (cx + 1) * w / g;
        double sum = 0.0, sum_sq = 0.0;
        const int64_t n = static_cast<int64_t>(r1 - r0) * (c1 - c0) * c;
        for (int i = r0; i < r1; ++i) {
          for (int j = c0; j < c1; ++j) {
            const int64_t base = (static_cast<int64_t>(i) * w + j) * c;
            for (int ch = 0; ch < c; ++ch) {
              const double d = b[base + ch] - a[base + ch];
              sum += d;
              sum_sq += d * d;
            }
          }
        }
        const double mean = sum / static_cast<double>(n);
        const double var = sum_sq / static_cast<double>(n) - mean * mean;
        out[k++] = mean;
        out[k++] = std::max(0.0, var);
      }
    }
  }
  return out;
}

Tensor motion_features(const synthvid::VideoClip& clip, int grid) {
  return motion_features(clip.data, grid);
}

Tensor trace_features(const net::UNetConfig& cfg, const net::TraceEntry& entry, int grid) {
  const Tensor& s = entry.state;
  if (s.ndim() != 4) {
    throw ShapeError("trace_features: expected (b, f, tokens, ch), got " + shape_str(s.shape()));
  }
  if (s.dim(0) != 1) {
    throw ShapeError("trace_features: expected batch 1, got " + std::to_string(s.dim(0)));
  }
  if (entry.level < 0 || entry.level >= cfg.levels) {
    throw ConfigError("trace_features: level " + std::to_string(entry.level) +
                      " outside the model's " + std::to_string(cfg.levels) + " levels");
  }
  const int64_t ty = cfg.tokens_y() >> entry.level;
  const int64_t tx = cfg.tokens_x() >> entry.level;
  if (ty * tx != s.dim(2)) {
    throw ShapeError("trace_features: level " + std::to_string(entry.level) + " expects " +
                     std::to_string(ty * tx) + " tokens, state has " + std::to_string(s.dim(2)));
  }
  // (1, f, ty*tx, ch) -> (f, ty, tx, ch): same row-major layout, new view.
  return motion_features(s.reshaped({s.dim(1), ty, tx, s.dim(3)}), grid);
}

// ---------------------------------------------------------------------------
// Linear probe.
// ---------------------------------------------------------------------------

double LinearProbe::margin(const Tensor& features) const {
  if (features.size() != w.size()) {
    throw ShapeError("probe: feature length " + std::to_string(features.size()) +
                     " does not match the probe's " + std::to_string(w.size()));
  }
  double m = b;
  for (int64_t i = 0; i < w.size(); ++i) {
    m += w[i] * (features[i] - mu[i]) / sigma[i];
  }
  return m;
}

LinearProbe fit_probe(const std::vector<Tensor>& class0, const std::vector<Tensor>& class1) {
  constexpr int kMinPerClass = 8;
  if (static_cast<int>(class0.size()) < kMinPerClass ||
      static_cast<int>(class1.size()) < kMinPerClass) {
    throw ConfigError("fit_probe: need at least " + std::to_string(kMinPerClass) +
                      " samples per class, got " + std::to_string(class0.size()) + " / " +
                      std::to_string(class1.size()));
  }
  const int64_t d = class0.front().size();
  std::vector<const Tensor*> xs;
  std::vector<double> ys;
  for (const auto& t : class0) { xs.push_back(&t); ys.push_back(0.0); }
  for (const auto& t : class1) { xs.push_back(&t); ys.push_back(1.0); }
  for (const Tensor* t : xs) {
    if (t->size() != d) {
      throw ShapeError("fit_probe: inconsistent feature lengths (" + std::to_string(d) +
                       " vs " + std::to_string(t->size()) + ")");
    }
    if (!t->all_finite()) throw ConfigError("fit_probe: non-finite feature values");
  }
  const int64_t n = static_cast<int64_t>(xs.size());

  LinearProbe probe;
  probe.mu = Tensor({d});
  probe.sigma = Tensor({d});
  for (const Tensor* t : xs) {
    for (int64_t i = 0; i < d; ++i) probe.mu[i] += (*t)[i];
  }
  for (int64_t i = 0; i < d; ++i) probe.mu[i] /= static_cast<double>(n);
  double total_var = 0.0;
  for (const Tensor* t : xs) {
    for (int64_t i = 0; i < d; ++i) {
      const double dev = (*t)[i] - probe.mu[i];
      probe.sigma[i] += dev * dev;
    }
  }
  for (int64_t i = 0; i < d; ++i) {
    probe.sigma[i] = std::sqrt(probe.sigma[i] / static_cast<double>(n));
    total_var += probe.sigma[i];
    probe.sigma[i] = std::max(probe.sigma[i], 1e-8);
  }
  if (total_var < 1e-12) {
    throw ConfigError(
        "fit_probe: degenerate input; every sample is identical, the classes are not "
        "distinguishable");
  }

  // Deterministic full-batch gradient descent on the (convex) regularized
  // logistic loss; zero init makes the trajectory unique.
  constexpr int kIters = 800;
  constexpr double kLr = 0.5;
  constexpr double kRidge = 1e-4;
  probe.w = Tensor({d});
  probe.b = 0.0;
  std::vector<double> xstd(static_cast<size_t>(n * d));
  for (int64_t s = 0; s < n; ++s) {
    for (int64_t i = 0; i < d; ++i) {
      xstd[static_cast<size_t>(s * d + i)] = ((*xs[static_cast<size_t>(s)])[i] - probe.mu[i]) / probe.sigma[i];
    }
  }
  std::vector<double> gw(static_cast<size_t>(d));
  for (int it = 0; it < kIters; ++it) {
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0;
    for (int64_t s = 0; s < n; ++s) {
      const double* x = xstd.data() + s * d;
      double m = probe.b;
      for (int64_t i = 0; i < d; ++i) m += probe.w[i] * x[i];
      const double g = sigmoid(m) - ys[static_cast<size_t>(s)];
      for (int64_t i = 0; i < d; ++i) gw[static_cast<size_t>(i)] += g * x[i];
      gb += g;
    }
    for (int64_t i = 0; i < d; ++i) {
      probe.w[i] -= kLr * (gw[static_cast<size_t>(i)] / static_cast<double>(n) + kRidge * probe.w[i]);
    }
    probe.b -= kLr * gb / static_cast<double>(n);
  }
  return probe;
}

ProbeEval probe_eval(const LinearProbe& probe, const Tensor& features) {
  const double m = probe.margin(features);
  ProbeEval e;
  e.label = m > 0.0 ? 1 : 0;
  e.confidence = sigmoid(m);
  return e;
}

// ---------------------------------------------------------------------------
// Motion judge.
// ---------------------------------------------------------------------------

MotionJudge MotionJudge::train(const JudgeConfig& cfg) {
  if (cfg.frames < 2) throw ConfigError("judge: need at least 2 frames");
  if (cfg.height < 1 || cfg.width < 1) throw ConfigError("judge: degenerate clip geometry");
  if (cfg.grid < 1) throw ConfigError("judge: grid must be >= 1");
  if (cfg.train_per_motion < 8) {
    throw ConfigError("judge: need at least 8 training clips per motion");
  }
  if (cfg.holdout_per_motion < 1) throw ConfigError("judge: need holdout clips");
  if (cfg.min_holdout_acc < 0.0 || cfg.min_holdout_acc > 1.0) {
    throw ConfigError("judge: min_holdout_acc must lie in [0, 1]");
  }

  MotionJudge judge;
  judge.cfg_ = cfg;
  const auto motions = synthvid::all_motions();
  const auto train_clips =
      synthvid::build_corpus(motions, cfg.train_per_motion, cfg.frames, cfg.height, cfg.width,
                             derive_seed(cfg.seed, "judge-train"));
  std::vector<std::vector<Tensor>> by_motion(motions.size());
  for (const auto& clip : train_clips) {
    const int m = static_cast<int>(clip.spec->motion);
    by_motion[static_cast<size_t>(m)].push_back(judge_features(clip, cfg.grid));
  }
  for (size_t m = 0; m < motions.size(); ++m) {
    std::vector<Tensor> neg;
    for (size_t o = 0; o < motions.size(); ++o) {
      if (o == m) continue;
      neg.insert(neg.end(), by_motion[o].begin(), by_motion[o].end());
    }
    judge.probes_.push_back(fit_probe(neg, by_motion[m]));
  }

  const auto holdout =
      synthvid::build_corpus(motions, cfg.holdout_per_motion, cfg.frames, cfg.height, cfg.width,
                             derive_seed(cfg.seed, "judge-holdout"));
  int correct = 0;
  for (const auto& clip : holdout) {
    if (judge.classify(clip) == clip.spec->motion) ++correct;
  }
  judge.holdout_accuracy_ = static_cast<double>(correct) / static_cast<double>(holdout.size());
  if (judge.holdout_accuracy_ < cfg.min_holdout_acc) {
    throw MetricGateError("motion judge failed its validity gate: holdout accuracy " +
                          fmt_double(judge.holdout_accuracy_) + " < required " +
                          fmt_double(cfg.min_holdout_acc));
  }
  return judge;
}

synthvid::MotionLabel MotionJudge::classify_features(const Tensor& features) const {
  int best = 0;
  double best_margin = -std::numeric_limits<double>::infinity();
  for (size_t m = 0; m < probes_.size(); ++m) {
    const double margin = probes_[m].margin(features);
    if (margin > best_margin) {
      best_margin = margin;
      best = static_cast<int>(m);
    }
  }
  return static_cast<synthvid::MotionLabel>(best);
}

synthvid::MotionLabel MotionJudge::classify(const synthvid::VideoClip& clip) const {
  return classify_features(judge_features(clip, cfg_.grid));
}

double MotionJudge::accuracy(const std::vector<synthvid::VideoClip>& clips,
                             synthvid::MotionLabel target) const {
  if (clips.empty()) throw ConfigError("judge accuracy: no clips");
  int hits = 0;
  for (const auto& clip : clips) {
    if (classify(clip) == target) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(clips.size());
}

// ---------------------------------------------------------------------------
// Appearance metrics.
// ---------------------------------------------------------------------------

namespace {

struct FrameView {
  const double* px = nullptr;  // (h, w, 3)
  int h = 0, w = 0;
};

// --- Shape templates -------------------------------------------------------
// Mirrors the renderer's rasterization contract (inside test, supersampling
// grid, triangle geometry: equilateral, apex up, circumradius 1.35 r).  The
// closed-loop tests pin IoU 1.0 on clean renders, so any drift between the
// two copies fails loudly.

constexpr int kSupersample = 4;

bool inside_template(synthvid::ShapeKind kind, double y, double x, double cy, double cx,
                     double r) {
  const double dy = y - cy;
  const double dx = x - cx;
  switch (kind) {
    case synthvid::ShapeKind::kCircle:
      return dy * dy + dx * dx <= r * r;
    case synthvid::ShapeKind::kSquare:
      return std::max(std::abs(dy), std::abs(dx)) <= r;
    case synthvid::ShapeKind::kTriangle: {
      const double cr = 1.35 * r;
      const double ax = cx, ay = cy - cr;
      const double bx = cx - 0.8660254037844386 * cr, by = cy + 0.5 * cr;
      const double ex = cx + 0.8660254037844386 * cr, ey = cy + 0.5 * cr;
      auto side = [&](double px, double py, double qx, double qy) {
        return (qx - px) * (y - py) - (qy - py) * (x - px);
      };
      const double s1 = side(ax, ay, bx, by);
      const double s2 = side(bx, by, ex, ey);
      const double s3 = side(ex, ey, ax, ay);
      return (s1 >= 0 && s2 >= 0 && s3 >= 0) || (s1 <= 0 && s2 <= 0 && s3 <= 0);
    }
  }
  return false;
}

double template_coverage(synthvid::ShapeKind kind, int i, int j, double cy, double cx, double r) {
  const double reach = 1.5 * r + 1.0;
  if (std::abs(i + 0.5 - cy) > reach || std::abs(j + 0.5 - cx) > reach) return 0.0;
  int hits = 0;
  for (int si = 0; si < kSupersample; ++si) {
    for (int sj = 0; sj < kSupersample; ++sj) {
      const double y = i + (si + 0.5) / kSupersample;
      const double x = j + (sj + 0.5) / kSupersample;
      if (inside_template(kind, y, x, cy, cx, r)) ++hits;
    }
  }
  return static_cast<double>(hits) / (kSupersample * kSupersample);
}

// Soft IoU between the observed coverage field and the candidate shape
// rasterized at (cy, cx, r): sum(min)/sum(max) over per-pixel coverages.
// Binary masks tie between a small circle and a small square, but their
// fractional silhouette edges differ, so matching the coverage field keeps
// the shapes separable down to a few pixels — and a clean render still
// reproduces its own field exactly (score 1.0).
double template_soft_iou(const std::vector<double>& cfield, int h, int w,
                         synthvid::ShapeKind kind, double cy, double cx, double r) {
  double inter = 0, uni = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double tpl = template_coverage(kind, i, j, cy, cx, r);
      const double obs = cfield[static_cast<size_t>(i * w + j)];
      inter += std::min(tpl, obs);
      uni += std::max(tpl, obs);
    }
  }
  return uni <= 0.0 ? 0.0 : inter / uni;
}

// Geometric area of a shape at radius parameter r, used to seed the size
// search from the observed mask area.
double shape_area(synthvid::ShapeKind kind, double r) {
  switch (kind) {
    case synthvid::ShapeKind::kCircle:
      return std::numbers::pi * r * r;
    case synthvid::ShapeKind::kSquare:
      return 4.0 * r * r;
    case synthvid::ShapeKind::kTriangle: {
      const double cr = 1.35 * r;
      return 3.0 * std::sqrt(3.0) / 4.0 * cr * cr;
    }
  }
  return 0.0;
}

struct TemplateFit {
  double iou = -1.0;
  double cy = 0, cx = 0, r = 0;
};

TemplateFit fit_template(const std::vector<double>& cfield, int h, int w,
                         synthvid::ShapeKind kind, double cy0, double cx0, double area) {
  const double r0 = std::sqrt(std::max(area, 1.0) / shape_area(kind, 1.0));
  TemplateFit best;
  auto consider = [&](double cy, double cx, double r) {
    const double iou = template_soft_iou(cfield, h, w, kind, cy, cx, r);
    if (iou > best.iou) best = {iou, cy, cx, r};
  };
  for (double rs : {0.8, 0.9, 1.0, 1.1, 1.2}) {
    for (double dy : {-0.5, 0.0, 0.5}) {
      for (double dx : {-0.5, 0.0, 0.5}) {
        consider(cy0 + dy, cx0 + dx, r0 * rs);
      }
    }
  }
  const TemplateFit coarse = best;
  for (double rs : {0.94, 0.97, 1.0, 1.03, 1.06}) {
    for (double dy : {-0.25, 0.0, 0.25}) {
      for (double dx : {-0.25, 0.0, 0.25}) {
        consider(coarse.cy + dy, coarse.cx + dx, coarse.r * rs);
      }
    }
  }
  return best;
}

synthvid::Rgb frame_background(const FrameView& fr) {
  std::vector<double> ch(static_cast<size_t>(fr.h) * fr.w);
  synthvid::Rgb bg;
  double* out[3] = {&bg.r, &bg.g, &bg.b};
  for (int c = 0; c < 3; ++c) {
    for (int64_t i = 0; i < static_cast<int64_t>(fr.h) * fr.w; ++i) {
      ch[static_cast<size_t>(i)] = fr.px[i * 3 + c];
    }
    const auto mid = ch.begin() + ch.size() / 2;
    std::nth_element(ch.begin(), mid, ch.end());
    *out[c] = *mid;
  }
  return bg;
}

// Per-pixel distance from the frame's background color.
std::vector<double> foreground_weight(const FrameView& fr, const synthvid::Rgb& bg) {
  std::vector<double> wmap(static_cast<size_t>(fr.h) * fr.w);
  for (int64_t i = 0; i < static_cast<int64_t>(fr.h) * fr.w; ++i) {
    const double dr = fr.px[i * 3 + 0] - bg.r;
    const double dg = fr.px[i * 3 + 1] - bg.g;
    const double db = fr.px[i * 3 + 2] - bg.b;
    wmap[static_cast<size_t>(i)] = std::sqrt(dr * dr + dg * dg + db * db);
  }
  return wmap;
}

// Largest 4-connected component of `mask`, returned as a membership flag
// vector; ties break toward the earlier (row-major) component.
std::vector<char> largest_component(const std::vector<char>& mask, int h, int w) {
  std::vector<int> comp(mask.size(), -1);
  int best_id = -1, best_size = 0, next_id = 0;
  std::deque<int> queue;
  for (int start = 0; start < static_cast<int>(mask.size()); ++start) {
    if (!mask[static_cast<size_t>(start)] || comp[static_cast<size_t>(start)] >= 0) continue;
    int size = 0;
    comp[static_cast<size_t>(start)] = next_id;
    queue.push_back(start);
    while (!queue.empty()) {
      const int p = queue.front();
      queue.pop_front();
      ++size;
      const int y = p / w, x = p % w;
      const int nbr[4] = {y > 0 ? p - w : -1, y + 1 < h ? p + w : -1, x > 0 ? p - 1 : -1,
                          x + 1 < w ? p + 1 : -1};
      for (int q : nbr) {
        if (q >= 0 && mask[static_cast<size_t>(q)] && comp[static_cast<size_t>(q)] < 0) {
          comp[static_cast<size_t>(q)] = next_id;
          queue.push_back(q);
        }
      }
    }
    if (size > best_size) {
      best_size = size;
      best_id = next_id;
    }
    ++next_id;
  }
  std::vector<char> keep(mask.size(), 0);
  if (best_id >= 0) {
    for (size_t i = 0; i < mask.size(); ++i) keep[i] = comp[i] == best_id ? 1 : 0;
  }
  return keep;
}

}  // namespace

AppearanceEstimate estimate_appearance(const Tensor& frames) {
  if (frames.ndim() != 4 || frames.dim(3) != 3) {
    throw ShapeError("estimate_appearance: expected (frames, h, w, 3), got " +
                     shape_str(frames.shape()));
  }
  const int f = static_cast<int>(frames.dim(0));
  const int h = static_cast<int>(frames.dim(1));
  const int w = static_cast<int>(frames.dim(2));
  if (f < 1 || h < 2 || w < 2) {
    throw ShapeError("estimate_appearance: degenerate clip shape " + shape_str(frames.shape()));
  }

  // Pick the frame with the most strong-foreground pixels, so grow-shrink
  // clips are judged at their largest extent.
  constexpr double kPresence = 0.3;
  int best_frame = 0;
  int best_count = -1;
  const int64_t frame_stride = static_cast<int64_t>(h) * w * 3;
  for (int i = 0; i < f; ++i) {
    FrameView fr{frames.data() + i * frame_stride, h, w};
    const auto bg = frame_background(fr);
    const auto wmap = foreground_weight(fr, bg);
    int count = 0;
    for (double v : wmap) count += v > kPresence ? 1 : 0;
    if (count > best_count) {
      best_count = count;
      best_frame = i;
    }
  }

  FrameView fr{frames.data() + best_frame * frame_stride, h, w};
  const auto bg = frame_background(fr);
  const auto wmap = foreground_weight(fr, bg);
  const double wmax = *std::max_element(wmap.begin(), wmap.end());

  AppearanceEstimate est;
  est.fg = bg;
  if (wmax < 0.15) return est;  // nothing stands out from the background

  std::vector<char> mask(wmap.size());
  for (size_t i = 0; i < wmap.size(); ++i) mask[i] = wmap[i] >= 0.5 * wmax ? 1 : 0;
  const auto comp = largest_component(mask, h, w);

  int y0 = h, y1 = -1, x0 = w, x1 = -1, count = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!comp[static_cast<size_t>(y * w + x)]) continue;
      ++count;
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
    }
  }
  est.mask_pixels = count;
  if (count == 0) return est;

  // Color from near-pure pixels of the component (supersampled edges blend
  // toward the background, the interior does not).
  double sr = 0, sg = 0, sb = 0;
  int strong = 0;
  for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
    if (!comp[static_cast<size_t>(i)] || wmap[static_cast<size_t>(i)] < 0.85 * wmax) continue;
    sr += fr.px[i * 3 + 0];
    sg += fr.px[i * 3 + 1];
    sb += fr.px[i * 3 + 2];
    ++strong;
  }
  if (strong == 0) {
    for (int64_t i = 0; i < static_cast<int64_t>(h) * w; ++i) {
      if (!comp[static_cast<size_t>(i)]) continue;
      sr += fr.px[i * 3 + 0];
      sg += fr.px[i * 3 + 1];
      sb += fr.px[i * 3 + 2];
      ++strong;
    }
  }
  est.fg = synthvid::Rgb{sr / strong, sg / strong, sb / strong};

  const int bh = y1 - y0 + 1, bw = x1 - x0 + 1;
  est.fill = static_cast<double>(count) / (static_cast<double>(bh) * bw);

  // Diagnostic row-width profile over the bounding box.
  std::vector<int> width_of(static_cast<size_t>(bh), 0);
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      width_of[static_cast<size_t>(y - y0)] += comp[static_cast<size_t>(y * w + x)] ? 1 : 0;
    }
  }
  const int half = bh / 2;
  double top = 0, bot = 0;
  for (int i = 0; i < half; ++i) {
    top += width_of[static_cast<size_t>(i)];
    bot += width_of[static_cast<size_t>(bh - 1 - i)];
  }
  est.width_ratio = half == 0 ? 1.0 : (top + 1e-9) / (bot + 1e-9);

  // Reconstruct the coverage field around the component: weights scale
  // linearly with coverage (pixel = bg + coverage * (fg - bg)), so w / wmax
  // recovers per-pixel coverage once any interior pixel saturates.  Zeroing
  // everything outside the component's neighborhood keeps unrelated
  // structure (e.g. a leaked artifact patch) out of the shape fit.
  constexpr int kMargin = 3;
  std::vector<double> cfield(static_cast<size_t>(h) * w, 0.0);
  double soft_area = 0.0, gy = 0.0, gx = 0.0;
  for (int y = std::max(0, y0 - kMargin); y <= std::min(h - 1, y1 + kMargin); ++y) {
    for (int x = std::max(0, x0 - kMargin); x <= std::min(w - 1, x1 + kMargin); ++x) {
      const double cv = std::min(1.0, wmap[static_cast<size_t>(y * w + x)] / wmax);
      cfield[static_cast<size_t>(y * w + x)] = cv;
      soft_area += cv;
      gy += cv * (y + 0.5);
      gx += cv * (x + 0.5);
    }
  }
  gy /= soft_area;
  gx /= soft_area;
  est.shape_iou = -1.0;
  for (auto kind : {synthvid::ShapeKind::kCircle, synthvid::ShapeKind::kSquare,
                    synthvid::ShapeKind::kTriangle}) {
    const auto fit = fit_template(cfield, h, w, kind, gy, gx, soft_area);
    if (fit.iou > est.shape_iou) {
      est.shape_iou = fit.iou;
      est.shape = kind;
    }
  }
  return est;
}

AppearanceEstimate estimate_appearance(const synthvid::VideoClip& clip) {
  return estimate_appearance(clip.data);
}

Tensor judge_features(const Tensor& frames, int grid) {
  if (frames.ndim() != 4 || frames.dim(3) != 3) {
    throw ShapeError("judge_features: expected (frames, h, w, 3), got " +
                     shape_str(frames.shape()));
  }
  const int f = static_cast<int>(frames.dim(0));
  const int h = static_cast<int>(frames.dim(1));
  const int w = static_cast<int>(frames.dim(2));
  if (f < 2) throw ShapeError("judge_features: need at least 2 frames");

  // Grid block, length-normalized so foreground/background contrast cancels
  // and only the spatial pattern of change remains.
  Tensor g = motion_features(frames, grid);
  double norm = 0.0;
  for (int64_t i = 0; i < g.size(); ++i) norm += g[i] * g[i];
  norm = std::sqrt(norm);
  if (norm > 1e-12) {
    for (int64_t i = 0; i < g.size(); ++i) g[i] /= norm;
  }

  // Foreground trajectory: soft mass and centroid per frame.
  const int64_t frame_stride = static_cast<int64_t>(h) * w * 3;
  std::vector<double> mass(static_cast<size_t>(f)), cy(static_cast<size_t>(f)),
      cx(static_cast<size_t>(f));
  for (int t = 0; t < f; ++t) {
    FrameView fr{frames.data() + t * frame_stride, h, w};
    const auto bg = frame_background(fr);
    const auto wmap = foreground_weight(fr, bg);
    double m = 0, sy = 0, sx = 0;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = wmap[static_cast<size_t>(y * w + x)];
        m += v;
        sy += v * (y + 0.5);
        sx += v * (x + 0.5);
      }
    }
    mass[static_cast<size_t>(t)] = m;
    cy[static_cast<size_t>(t)] = m > 1e-9 ? sy / m / h : 0.5;
    cx[static_cast<size_t>(t)] = m > 1e-9 ? sx / m / w : 0.5;
  }

  const int n = f - 1;
  std::vector<double> dy(static_cast<size_t>(n)), dx(static_cast<size_t>(n)),
      sp(static_cast<size_t>(n)), dm(static_cast<size_t>(n));
  double mean_mass = 0.0;
  for (double m : mass) mean_mass += m;
  mean_mass /= f;
  for (int t = 0; t < n; ++t) {
    dy[static_cast<size_t>(t)] = cy[static_cast<size_t>(t + 1)] - cy[static_cast<size_t>(t)];
    dx[static_cast<size_t>(t)] = cx[static_cast<size_t>(t + 1)] - cx[static_cast<size_t>(t)];
    sp[static_cast<size_t>(t)] = std::hypot(dy[static_cast<size_t>(t)], dx[static_cast<size_t>(t)]);
    dm[static_cast<size_t>(t)] =
        (mass[static_cast<size_t>(t + 1)] - mass[static_cast<size_t>(t)]) / (mean_mass + 1e-9);
  }

  double mean_speed = 0, total = 0, abs_dy = 0, abs_dx = 0;
  for (int t = 0; t < n; ++t) {
    mean_speed += sp[static_cast<size_t>(t)];
    total += sp[static_cast<size_t>(t)];
    abs_dy += std::abs(dy[static_cast<size_t>(t)]);
    abs_dx += std::abs(dx[static_cast<size_t>(t)]);
  }
  mean_speed /= n;
  const double net = std::hypot(cy[static_cast<size_t>(f - 1)] - cy[0],
                                cx[static_cast<size_t>(f - 1)] - cx[0]);
  const double net_over_total = total > 1e-9 ? net / total : 0.0;
  double turn = 0, curl = 0;
  int pairs = 0;
  for (int t = 0; t + 1 < n; ++t) {
    const double sa = sp[static_cast<size_t>(t)], sb = sp[static_cast<size_t>(t + 1)];
    if (sa < 1e-9 || sb < 1e-9) continue;
    const double cosang = (dy[static_cast<size_t>(t)] * dy[static_cast<size_t>(t + 1)] +
                           dx[static_cast<size_t>(t)] * dx[static_cast<size_t>(t + 1)]) /
                          (sa * sb);
    const double cross = (dx[static_cast<size_t>(t)] * dy[static_cast<size_t>(t + 1)] -
                          dy[static_cast<size_t>(t)] * dx[static_cast<size_t>(t + 1)]) /
                         (sa * sb);
    turn += 0.5 * (1.0 - cosang);
    curl += cross;
    ++pairs;
  }
  turn = pairs > 0 ? turn / pairs : 0.0;
  curl = pairs > 0 ? curl / pairs : 0.0;
  const double y_dom = abs_dy / (abs_dy + abs_dx + 1e-12);
  double mass_var = 0.0;
  for (double m : mass) mass_var += (m - mean_mass) * (m - mean_mass);
  const double mass_cv = std::sqrt(mass_var / f) / (mean_mass + 1e-12);

  Tensor out({g.size() + 7 + 4 * static_cast<int64_t>(n)});
  int64_t k = 0;
  for (int64_t i = 0; i < g.size(); ++i) out[k++] = g[i];
  out[k++] = mean_speed;
  out[k++] = net_over_total;
  out[k++] = turn;
  out[k++] = curl;
  out[k++] = y_dom;
  out[k++] = mass_cv;
  out[k++] = net;
  for (int t = 0; t < n; ++t) out[k++] = dy[static_cast<size_t>(t)];
  for (int t = 0; t < n; ++t) out[k++] = dx[static_cast<size_t>(t)];
  for (int t = 0; t < n; ++t) out[k++] = sp[static_cast<size_t>(t)];
  for (int t = 0; t < n; ++t) out[k++] = dm[static_cast<size_t>(t)];
  return out;
}

Tensor judge_features(const synthvid::VideoClip& clip, int grid) {
  return judge_features(clip.data, grid);
}

double color_match(const synthvid::Rgb& a, const synthvid::Rgb& b) {
  return 1.0 - std::min(1.0, rgb_dist(a, b) / kColorFullMiss);
}

double appearance_alignment(const synthvid::VideoClip& clip,
                            const synthvid::AppearanceSpec& target) {
  const auto est = estimate_appearance(clip);
  if (est.mask_pixels == 0) return 0.0;  // no foreground found at all
  const double color = color_match(est.fg, target.fg);
  const double shape = est.shape == target.shape ? 1.0 : 0.0;
  return 0.5 * color + 0.5 * shape;
}

double appearance_leak(const std::vector<synthvid::VideoClip>& clips,
                       const synthvid::ArtifactSpec& artifact, int window) {
  if (clips.empty()) throw ConfigError("appearance_leak: no clips");
  double sum = 0.0;
  for (const auto& clip : clips) sum += synthvid::detect_artifact(clip, artifact, window);
  return sum / static_cast<double>(clips.size());
}

double temporal_consistency(const Tensor& frames) {
  Tensor z = frames;
  if (z.ndim() == 5 && z.dim(0) == 1) {
    z = z.reshaped({z.dim(1), z.dim(2), z.dim(3), z.dim(4)});
  }
  if (z.ndim() != 4) {
    throw ShapeError("temporal_consistency: expected (frames, h, w, c), got " +
                     shape_str(frames.shape()));
  }
  const int f = static_cast<int>(z.dim(0));
  if (f < 2) return 1.0;  // a single frame is vacuously consistent
  const int64_t stride = z.size() / f;
  double sum = 0.0;
  for (int p = 0; p + 1 < f; ++p) {
    const double* a = z.data() + p * stride;
    const double* b = a + stride;
    double num = 0, na = 0, nb = 0;
    for (int64_t i = 0; i < stride; ++i) {
      num += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    constexpr double kEps = 1e-300;
    if (na < kEps && nb < kEps) {
      sum += 1.0;
    } else if (na < kEps || nb < kEps) {
      sum += 0.0;
    } else {
      sum += num / std::sqrt(na * nb);
    }
  }
  return sum / static_cast<double>(f - 1);
}

double temporal_consistency(const synthvid::VideoClip& clip) {
  Tensor signal(clip.data.shape());
  for (int64_t i = 0; i < signal.size(); ++i) signal[i] = 2.0 * clip.data[i] - 1.0;
  return temporal_consistency(signal);
}

// ---------------------------------------------------------------------------
// Trace comparison.
// ---------------------------------------------------------------------------

double SimilarityProfile::mean() const {
  if (points.empty()) throw ConfigError("similarity profile is empty");
  double s = 0.0;
  for (const auto& p : points) s += p.cosine;
  return s / static_cast<double>(points.size());
}

double SimilarityProfile::mean_at_level(int level) const {
  double s = 0.0;
  int n = 0;
  for (const auto& p : points) {
    if (p.level == level) {
      s += p.cosine;
      ++n;
    }
  }
  if (n == 0) throw ConfigError("similarity profile has no entries at level " + std::to_string(level));
  return s / static_cast<double>(n);
}

SimilarityProfile cosine_profile(const net::HiddenStateTrace& a, const net::HiddenStateTrace& b) {
  if (a.entries.size() != b.entries.size()) {
    throw ConfigError("cosine_profile: traces have different lengths (" +
                      std::to_string(a.entries.size()) + " vs " + std::to_string(b.entries.size()) +
                      "); they were captured under different protocols");
  }
  if (a.entries.empty()) throw ConfigError("cosine_profile: empty traces");
  SimilarityProfile prof;
  prof.points.reserve(a.entries.size());
  for (size_t i = 0; i < a.entries.size(); ++i) {
    const auto& ea = a.entries[i];
    const auto& eb = b.entries[i];
    if (ea.level != eb.level || ea.step != eb.step) {
      throw ConfigError("cosine_profile: entry " + std::to_string(i) + " keys differ: (level " +
                        std::to_string(ea.level) + ", step " + std::to_string(ea.step) +
                        ") vs (level " + std::to_string(eb.level) + ", step " +
                        std::to_string(eb.step) + ")");
    }
    if (!ea.state.same_shape(eb.state)) {
      throw ShapeError("cosine_profile: entry " + std::to_string(i) + " state shapes differ: " +
                       shape_str(ea.state.shape()) + " vs " + shape_str(eb.state.shape()));
    }
    prof.points.push_back({ea.level, ea.step, cosine_zero_aware(ea.state, eb.state)});
  }
  return prof;
}

TracedSample trace_sampling(const net::UNet& model, const adapters::InjectionPlan* plan,
                            const net::SkipSettings& skip, const net::CondLabels& labels,
                            const diffusion::NoiseSchedule& sched, int frames, std::uint64_t seed,
                            const std::string& variant) {
  const auto& cfg = model.config();
  if (frames < 1 || frames > cfg.max_frames) {
    throw ConfigError("trace_sampling: frames " + std::to_string(frames) +
                      " outside the model's [1, " + std::to_string(cfg.max_frames) + "]");
  }
  TracedSample out;
  out.trace.variant = variant;
  const diffusion::EpsModel eps = [&](const Tensor& zt, int t) {
    net::ForwardOptions opts;
    opts.plan = plan;
    opts.skip = skip;
    opts.trace = &out.trace;
    opts.trace_step = t;
    return model.predict(zt, {t}, {labels}, opts);
  };
  const Shape shape{1, frames, cfg.height, cfg.width, 3};
  out.signal = diffusion::sample(sched, shape, eps, seed);
  return out;
}

// ---------------------------------------------------------------------------
// Metric suite.
// ---------------------------------------------------------------------------

MetricsReport metric_suite(const std::vector<synthvid::VideoClip>& clips, const MotionJudge& judge,
                           const MetricSuiteOptions& opt) {
  if (clips.empty()) throw ConfigError("metric_suite: no clips");
  if (opt.artifact == nullptr) {
    throw ConfigError(
        "metric_suite: the leak metric needs the reference-set artifact spec, none given");
  }
  if (opt.targets.empty() ||
      (opt.targets.size() != 1 && opt.targets.size() != clips.size())) {
    throw ShapeError("metric_suite: need one shared target spec or one per clip (" +
                     std::to_string(opt.targets.size()) + " specs for " +
                     std::to_string(clips.size()) + " clips)");
  }
  const auto& jcfg = judge.config();
  for (const auto& clip : clips) {
    if (clip.frames() != jcfg.frames || clip.height() != jcfg.height ||
        clip.width() != jcfg.width) {
      throw ConfigError("metric_suite: clip geometry (" + std::to_string(clip.frames()) + ", " +
                        std::to_string(clip.height()) + ", " + std::to_string(clip.width()) +
                        ") does not match the judge's (" + std::to_string(jcfg.frames) + ", " +
                        std::to_string(jcfg.height) + ", " + std::to_string(jcfg.width) + ")");
    }
  }

  MetricsReport rep;
  rep.variant = opt.variant;
  rep.config_hash = opt.config_hash;
  rep.breakdown.reserve(clips.size());
  for (size_t i = 0; i < clips.size(); ++i) {
    const auto& target = opt.targets.size() == 1 ? opt.targets.front() : opt.targets[i];
    ClipMetrics cm;
    cm.index = static_cast<int>(i);
    cm.motion_correct = judge.classify(clips[i]) == opt.motion;
    cm.app_align = appearance_alignment(clips[i], target);
    cm.app_leak = synthvid::detect_artifact(clips[i], *opt.artifact, opt.window);
    cm.temporal_consist = temporal_consistency(clips[i]);
    rep.breakdown.push_back(cm);
  }
  const double n = static_cast<double>(rep.breakdown.size());
  for (const auto& cm : rep.breakdown) {
    rep.motion_acc += cm.motion_correct ? 1.0 : 0.0;
    rep.app_align += cm.app_align;
    rep.app_leak += cm.app_leak;
    rep.temporal_consist += cm.temporal_consist;
  }
  rep.motion_acc /= n;
  rep.app_align /= n;
  rep.app_leak /= n;
  rep.temporal_consist /= n;
  return rep;
}

// ---------------------------------------------------------------------------
// Writers.
// ---------------------------------------------------------------------------

void write_report_csv(const std::filesystem::path& path,
                      const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << "variant,config_hash,metric,value\n";
  for (const auto& r : reports) {
    const std::string prefix = r.variant + "," + hex16(r.config_hash) + ",";
    os << prefix << "motion_acc," << fmt_double(r.motion_acc) << "\n";
    os << prefix << "app_align," << fmt_double(r.app_align) << "\n";
    os << prefix << "app_leak," << fmt_double(r.app_leak) << "\n";
    os << prefix << "temporal_consist," << fmt_double(r.temporal_consist) << "\n";
  }
  trainer::write_text_atomic(path, os.str());
}

void write_profile_csv(const std::filesystem::path& path, const SimilarityProfile& profile) {
  std::ostringstream os;
  os << "level,step,cosine\n";
  for (const auto& p : profile.points) {
    os << p.level << "," << p.step << "," << fmt_double(p.cosine) << "\n";
  }
  trainer::write_text_atomic(path, os.str());
}

void write_summary(const std::filesystem::path& path,
                   const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  for (const auto& r : reports) {
    os << r.variant << " (config " << hex16(r.config_hash) << ", " << r.breakdown.size()
       << " clips)\n";
    char line[160];
    std::snprintf(line, sizeof(line), "  motion_acc       = %.4f\n", r.motion_acc);
    os << line;
    std::snprintf(line, sizeof(line), "  app_align        = %.4f\n", r.app_align);
    os << line;
    std::snprintf(line, sizeof(line), "  app_leak         = %.4f\n", r.app_leak);
    os << line;
    std::snprintf(line, sizeof(line), "  temporal_consist = %.4f\n", r.temporal_consist);
    os << line;
  }
  trainer::write_text_atomic(path, os.str());
}

}  // namespace motionsep::probe
