#include "motionsep/synthvid.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>

#include "motionsep/errors.hpp"

namespace motionsep::synthvid {

MotionLabel motion_from_string(std::string_view s) {
  if (s == "bounce") return MotionLabel::kBounce;
  if (s == "orbit") return MotionLabel::kOrbit;
  if (s == "zigzag") return MotionLabel::kZigzag;
  if (s == "grow_shrink") return MotionLabel::kGrowShrink;
  if (s == "slide") return MotionLabel::kSlide;
  throw VocabError("unknown motion label: " + std::string(s));
}

std::string to_string(MotionLabel m) {
  switch (m) {
    case MotionLabel::kBounce: return "bounce";
    case MotionLabel::kOrbit: return "orbit";
    case MotionLabel::kZigzag: return "zigzag";
    case MotionLabel::kGrowShrink: return "grow_shrink";
    case MotionLabel::kSlide: return "slide";
  }
  throw VocabError("invalid motion label value");
}

ShapeKind shape_from_string(std::string_view s) {
  if (s == "circle") return ShapeKind::kCircle;
  if (s == "square") return ShapeKind::kSquare;
  if (s == "triangle") return ShapeKind::kTriangle;
  throw VocabError("unknown shape: " + std::string(s));
}

std::string to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::kCircle: return "circle";
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kTriangle: return "triangle";
  }
  throw VocabError("invalid shape value");
}

std::vector<MotionLabel> all_motions() {
  return {MotionLabel::kBounce, MotionLabel::kOrbit, MotionLabel::kZigzag,
          MotionLabel::kGrowShrink, MotionLabel::kSlide};
}

const std::vector<Rgb>& fg_palette() {
  static const std::vector<Rgb> p = {
      {0.90, 0.20, 0.20},  // red
      {0.20, 0.75, 0.30},  // green
      {0.25, 0.40, 0.95},  // blue
      {0.95, 0.80, 0.15},  // yellow
      {0.80, 0.25, 0.85},  // magenta
      {0.20, 0.80, 0.85},  // cyan
  };
  return p;
}

const std::vector<Rgb>& bg_palette() {
  static const std::vector<Rgb> p = {
      {0.06, 0.06, 0.12},  // near-black blue
      {0.85, 0.85, 0.80},  // light warm gray
      {0.15, 0.25, 0.15},  // dark green
      {0.30, 0.20, 0.30},  // dark plum
  };
  return p;
}

namespace {

int nearest_bin(const Rgb& c, const std::vector<Rgb>& palette) {
  int best = 0;
  double best_d = 1e300;
  for (size_t i = 0; i < palette.size(); ++i) {
    const Rgb& p = palette[i];
    const double d = (c.r - p.r) * (c.r - p.r) + (c.g - p.g) * (c.g - p.g) +
                     (c.b - p.b) * (c.b - p.b);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

}  // namespace

int nearest_fg_bin(const Rgb& c) { return nearest_bin(c, fg_palette()); }
int nearest_bg_bin(const Rgb& c) { return nearest_bin(c, bg_palette()); }

Tensor ArtifactSpec::pattern() const {
  Tensor t({size, size});
  for (int i = 0; i < size; ++i) {
    for (int j = 0; j < size; ++j) {
      t.at({i, j}) = (i % 2 == 0) ? 1.0 : 0.0;
    }
  }
  return t;
}

void ArtifactSpec::validate(int height, int width) const {
  if (size < 2) throw ConfigError("artifact size must be >= 2");
  if (contrast <= 0.0 || contrast > 1.0) {
    throw ConfigError("artifact contrast must lie in (0, 1]");
  }
  if (row < 0 || col < 0 || row + size > height || col + size > width) {
    throw ConfigError("artifact patch does not fit inside the frame");
  }
}

void ClipSpec::validate() const {
  if (frames < 1) throw ConfigError("clip needs at least one frame");
  if (height < 8 || width < 8) throw ConfigError("frame must be at least 8x8");
  if (appearance.radius <= 0.0 || appearance.radius > 0.5) {
    throw ConfigError("shape radius must lie in (0, 0.5]");
  }
  if (params.amplitude < 0.0 || params.amplitude > 0.45) {
    throw ConfigError("motion amplitude must lie in [0, 0.45]");
  }
  if (params.period < 2.0) throw ConfigError("motion period must be >= 2 frames");
  if (appearance.with_artifact) appearance.artifact.validate(height, width);
}

namespace {

// Triangle wave with period 1: tri(0) = 1, tri(0.5) = -1, reversals at every
// half-period.
double tri_wave(double u) {
  const double f = u - std::floor(u);
  return 4.0 * std::abs(f - 0.5) - 1.0;
}

// Linear sweep over one period: -1 at u=0 up to +1 at u=1. Callers keep
// u < 1 within a clip so the sweep never wraps mid-clip.
double lin_wave(double u) {
  const double f = u - std::floor(u);
  return 2.0 * f - 1.0;
}

}  // namespace

Pose trajectory_pose(MotionLabel motion, const MotionParams& p, int frame, int height,
                     int width) {
  const double cy0 = height / 2.0;
  const double cx0 = width / 2.0;
  const double amp = p.amplitude * std::min(height, width);
  const double u = p.phase + static_cast<double>(frame) / p.period;
  Pose pose{cy0, cx0, 1.0};
  switch (motion) {
    case MotionLabel::kBounce:
      pose.cy = cy0 + amp * tri_wave(u);
      break;
    case MotionLabel::kOrbit:
      pose.cy = cy0 + amp * std::sin(2.0 * std::numbers::pi * u);
      pose.cx = cx0 + amp * std::cos(2.0 * std::numbers::pi * u);
      break;
    case MotionLabel::kZigzag:
      // Recombination of primitives: linear sweep on x, triangle wave on y.
      pose.cx = cx0 + amp * lin_wave(u) * (std::cos(p.angle) >= 0.0 ? 1.0 : -1.0);
      pose.cy = cy0 + amp * tri_wave(u);
      break;
    case MotionLabel::kGrowShrink:
      pose.scale = 1.0 + p.grow_amp * std::sin(2.0 * std::numbers::pi * u);
      break;
    case MotionLabel::kSlide:
      pose.cy = cy0 + amp * lin_wave(u) * std::sin(p.angle);
      pose.cx = cx0 + amp * lin_wave(u) * std::cos(p.angle);
      break;
  }
  return pose;
}

namespace {

constexpr int kSupersample = 4;  // 4x4 coverage samples per pixel

bool inside_shape(ShapeKind kind, double y, double x, double cy, double cx, double r) {
  const double dy = y - cy;
  const double dx = x - cx;
  switch (kind) {
    case ShapeKind::kCircle:
      return dy * dy + dx * dx <= r * r;
    case ShapeKind::kSquare:
      return std::max(std::abs(dy), std::abs(dx)) <= r;
    case ShapeKind::kTriangle: {
      // Equilateral, apex up, circumradius 1.35 r (similar visual mass to the
      // circle). Half-plane tests against the three edges.
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

// Fraction of the pixel (i, j) covered by the shape, via a supersampling
// grid. Gives sub-pixel silhouette edges so centroids move smoothly.
double pixel_coverage(ShapeKind kind, int i, int j, double cy, double cx, double r) {
  // Cheap reject: pixel farther than the shape's outer radius plus the pixel
  // diagonal cannot intersect it.
  const double reach = 1.5 * r + 1.0;
  const double pcy = i + 0.5, pcx = j + 0.5;
  if (std::abs(pcy - cy) > reach || std::abs(pcx - cx) > reach) return 0.0;
  int hits = 0;
  for (int si = 0; si < kSupersample; ++si) {
    for (int sj = 0; sj < kSupersample; ++sj) {
      const double y = i + (si + 0.5) / kSupersample;
      const double x = j + (sj + 0.5) / kSupersample;
      if (inside_shape(kind, y, x, cy, cx, r)) ++hits;
    }
  }
  return static_cast<double>(hits) / (kSupersample * kSupersample);
}

}  // namespace

VideoClip render_clip(const ClipSpec& spec) {
  spec.validate();
  const int f = spec.frames, h = spec.height, w = spec.width;
  const AppearanceSpec& ap = spec.appearance;
  Tensor data({f, h, w, 3});
  const double base_r = ap.radius * std::min(h, w);
  for (int t = 0; t < f; ++t) {
    const Pose pose = trajectory_pose(spec.motion, spec.params, t, h, w);
    const double r = base_r * pose.scale;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const double a = pixel_coverage(ap.shape, i, j, pose.cy, pose.cx, r);
        double px[3] = {ap.bg.r * (1 - a) + ap.fg.r * a, ap.bg.g * (1 - a) + ap.fg.g * a,
                        ap.bg.b * (1 - a) + ap.fg.b * a};
        data.at({t, i, j, 0}) = px[0];
        data.at({t, i, j, 1}) = px[1];
        data.at({t, i, j, 2}) = px[2];
      }
    }
    if (ap.with_artifact) {
      const ArtifactSpec& art = ap.artifact;
      const Tensor pat = art.pattern();
      for (int i = 0; i < art.size; ++i) {
        for (int j = 0; j < art.size; ++j) {
          const double v = pat.at({i, j});
          for (int c = 0; c < 3; ++c) {
            double& dst = data.at({t, art.row + i, art.col + j, c});
            dst = dst * (1.0 - art.contrast) + art.contrast * v;
          }
        }
      }
    }
  }
  for (int64_t i = 0; i < data.size(); ++i) data[i] = std::clamp(data[i], 0.0, 1.0);
  VideoClip clip;
  clip.data = std::move(data);
  clip.spec = spec;
  return clip;
}

AppearanceSpec random_appearance(Rng& rng, bool with_artifact, const ArtifactSpec& artifact) {
  AppearanceSpec ap;
  ap.shape = static_cast<ShapeKind>(rng.uniform_int(kNumShapes));
  const auto& fgs = fg_palette();
  const auto& bgs = bg_palette();
  ap.fg = fgs[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(fgs.size())))];
  ap.bg = bgs[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(bgs.size())))];
  ap.radius = rng.uniform(0.14, 0.18);
  ap.with_artifact = with_artifact;
  ap.artifact = artifact;
  return ap;
}

namespace {

// Shared trajectory-parameter randomization. Linear-sweep motions keep the
// phase small enough that the sweep cannot wrap within the clip.
MotionParams random_params(Rng& rng, MotionLabel motion, int frames) {
  MotionParams p;
  p.amplitude = rng.uniform(0.24, 0.30);
  p.period = rng.uniform(std::max(5.0, frames * 0.9), frames * 1.25);
  const bool linear = motion == MotionLabel::kSlide || motion == MotionLabel::kZigzag;
  if (linear) {
    const double slack = std::max(0.0, 1.0 - (frames - 1) / p.period);
    p.phase = rng.uniform(0.0, slack);
  } else {
    p.phase = rng.uniform(0.0, 1.0);
  }
  p.angle = motion == MotionLabel::kZigzag
                ? (rng.uniform() < 0.5 ? 0.0 : std::numbers::pi)
                : rng.uniform(0.0, 2.0 * std::numbers::pi);
  p.grow_amp = rng.uniform(0.35, 0.5);
  return p;
}

}  // namespace

std::vector<VideoClip> build_reference_set(MotionLabel motion, int count,
                                           const ArtifactSpec& artifact, int frames, int height,
                                           int width, uint64_t seed) {
  std::vector<VideoClip> out;
  out.reserve(static_cast<size_t>(count));
  Rng rng = Rng(seed).stream("refset");
  for (int i = 0; i < count; ++i) {
    ClipSpec spec;
    spec.motion = motion;
    spec.appearance = random_appearance(rng, /*with_artifact=*/true, artifact);
    spec.params = random_params(rng, motion, frames);
    spec.frames = frames;
    spec.height = height;
    spec.width = width;
    out.push_back(render_clip(spec));
  }
  return out;
}

std::vector<VideoClip> build_corpus(const std::vector<MotionLabel>& motions, int per_motion,
                                    int frames, int height, int width, uint64_t seed) {
  std::vector<VideoClip> out;
  out.reserve(motions.size() * static_cast<size_t>(per_motion));
  Rng rng = Rng(seed).stream("corpus");
  ArtifactSpec unused;
  for (MotionLabel motion : motions) {
    for (int i = 0; i < per_motion; ++i) {
      ClipSpec spec;
      spec.motion = motion;
      spec.appearance = random_appearance(rng, /*with_artifact=*/false, unused);
      // Rotate shapes deterministically so every (motion, shape) pair occurs.
      spec.appearance.shape = static_cast<ShapeKind>(i % kNumShapes);
      spec.params = random_params(rng, motion, frames);
      spec.frames = frames;
      spec.height = height;
      spec.width = width;
      out.push_back(render_clip(spec));
    }
  }
  return out;
}

Tensor frame_luma(const VideoClip& clip, int frame) {
  const int h = clip.height(), w = clip.width();
  Tensor out({h, w});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      out.at({i, j}) = (clip.data.at({frame, i, j, 0}) + clip.data.at({frame, i, j, 1}) +
                        clip.data.at({frame, i, j, 2})) /
                       3.0;
    }
  }
  return out;
}

double detect_artifact(const VideoClip& clip, const ArtifactSpec& artifact, int window) {
  const int h = clip.height(), w = clip.width(), n = artifact.size;
  const Tensor pat = artifact.pattern();
  double pmean = pat.mean();
  double pvar = 0.0;
  for (int64_t i = 0; i < pat.size(); ++i) pvar += (pat[i] - pmean) * (pat[i] - pmean);
  pvar /= static_cast<double>(pat.size());
  if (pvar < 1e-12) throw ConfigError("artifact template has zero variance");
  const double pstd = std::sqrt(pvar);

  // Per frame: best normalized cross-correlation over a small window of
  // offsets around the planted position. Across frames: the median. The
  // artifact is static, so genuine leakage persists in most frames, while a
  // moving shape edge that happens to sweep through the patch only spikes in
  // one or two frames and is suppressed by the median.
  std::vector<double> frame_scores;
  frame_scores.reserve(static_cast<size_t>(clip.frames()));
  for (int t = 0; t < clip.frames(); ++t) {
    const Tensor luma = frame_luma(clip, t);
    double best = 0.0;
    for (int dy = -window; dy <= window; ++dy) {
      for (int dx = -window; dx <= window; ++dx) {
        const int r0 = artifact.row + dy, c0 = artifact.col + dx;
        if (r0 < 0 || c0 < 0 || r0 + n > h || c0 + n > w) continue;
        double wmean = 0.0;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) wmean += luma.at({r0 + i, c0 + j});
        wmean /= static_cast<double>(n * n);
        double wvar = 0.0, cov = 0.0;
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < n; ++j) {
            const double dv = luma.at({r0 + i, c0 + j}) - wmean;
            wvar += dv * dv;
            cov += dv * (pat.at({i, j}) - pmean);
          }
        }
        wvar /= static_cast<double>(n * n);
        cov /= static_cast<double>(n * n);
        if (wvar < 1e-10) continue;  // flat window carries no evidence
        best = std::max(best, cov / (std::sqrt(wvar) * pstd));
      }
    }
    frame_scores.push_back(best);
  }
  std::sort(frame_scores.begin(), frame_scores.end());
  const size_t m = frame_scores.size();
  const double med = m % 2 == 1 ? frame_scores[m / 2]
                                : 0.5 * (frame_scores[m / 2 - 1] + frame_scores[m / 2]);
  return std::clamp(med, 0.0, 1.0);
}

// ---- exporters ----

namespace {

uint8_t to_byte(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void export_ppm(const VideoClip& clip, const std::filesystem::path& dir,
                const std::string& stem) {
  std::filesystem::create_directories(dir);
  const int h = clip.height(), w = clip.width();
  for (int t = 0; t < clip.frames(); ++t) {
    char name[64];
    std::snprintf(name, sizeof(name), "%s_%03d.ppm", stem.c_str(), t);
    std::ofstream os(dir / name, std::ios::binary | std::ios::trunc);
    if (!os) throw DependencyError("cannot write " + (dir / name).string());
    os << "P6\n" << w << " " << h << "\n255\n";
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        for (int c = 0; c < 3; ++c) {
          os.put(static_cast<char>(to_byte(clip.data.at({t, i, j, c}))));
        }
      }
    }
  }
}

namespace {

// Bit packer for GIF LZW streams: LSB-first within bytes, flushed into
// 255-byte sub-blocks.
class GifBitWriter {
 public:
  explicit GifBitWriter(std::ostream& os) : os_(os) {}

  void put(uint32_t code, int bits) {
    acc_ |= static_cast<uint64_t>(code) << nbits_;
    nbits_ += bits;
    while (nbits_ >= 8) {
      block_.push_back(static_cast<uint8_t>(acc_ & 0xff));
      acc_ >>= 8;
      nbits_ -= 8;
      if (block_.size() == 255) flush_block();
    }
  }

  void finish() {
    if (nbits_ > 0) {
      block_.push_back(static_cast<uint8_t>(acc_ & 0xff));
      acc_ = 0;
      nbits_ = 0;
    }
    if (!block_.empty()) flush_block();
    os_.put(0);  // block terminator
  }

 private:
  void flush_block() {
    os_.put(static_cast<char>(block_.size()));
    os_.write(reinterpret_cast<const char*>(block_.data()),
              static_cast<std::streamsize>(block_.size()));
    block_.clear();
  }

  std::ostream& os_;
  std::vector<uint8_t> block_;
  uint64_t acc_ = 0;
  int nbits_ = 0;
};

void write_u16(std::ostream& os, uint16_t v) {
  os.put(static_cast<char>(v & 0xff));
  os.put(static_cast<char>(v >> 8));
}

}  // namespace

void export_gif(const VideoClip& clip, const std::filesystem::path& file, int delay_cs) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw DependencyError("cannot write " + file.string());
  const int h = clip.height(), w = clip.width();

  os.write("GIF89a", 6);
  write_u16(os, static_cast<uint16_t>(w));
  write_u16(os, static_cast<uint16_t>(h));
  os.put(static_cast<char>(0xf7));  // global color table, 256 entries, 8-bit
  os.put(0);                        // background color index
  os.put(0);                        // aspect ratio

  // 6x6x6 color cube (216 entries), remainder padded with grays.
  for (int i = 0; i < 256; ++i) {
    if (i < 216) {
      os.put(static_cast<char>((i / 36) * 51));
      os.put(static_cast<char>(((i / 6) % 6) * 51));
      os.put(static_cast<char>((i % 6) * 51));
    } else {
      const int g = (i - 216) * 255 / 39;
      os.put(static_cast<char>(g));
      os.put(static_cast<char>(g));
      os.put(static_cast<char>(g));
    }
  }

  // Loop forever.
  os.put(0x21);
  os.put(static_cast<char>(0xff));
  os.put(11);
  os.write("NETSCAPE2.0", 11);
  os.put(3);
  os.put(1);
  write_u16(os, 0);
  os.put(0);

  for (int t = 0; t < clip.frames(); ++t) {
    // Graphics control: frame delay.
    os.put(0x21);
    os.put(static_cast<char>(0xf9));
    os.put(4);
    os.put(0);
    write_u16(os, static_cast<uint16_t>(delay_cs));
    os.put(0);
    os.put(0);

    os.put(0x2c);  // image descriptor
    write_u16(os, 0);
    write_u16(os, 0);
    write_u16(os, static_cast<uint16_t>(w));
    write_u16(os, static_cast<uint16_t>(h));
    os.put(0);  // no local color table

    // LZW stream that never builds dictionary entries: emit a clear code
    // every 254 literals so the code width stays at 9 bits.
    const int min_code = 8;
    const uint32_t clear = 256, end = 257;
    os.put(static_cast<char>(min_code));
    GifBitWriter bw(os);
    bw.put(clear, 9);
    int since_clear = 0;
    for (int i = 0; i < h; ++i) {
      for (int j = 0; j < w; ++j) {
        const int qr = std::min(5, static_cast<int>(clip.data.at({t, i, j, 0}) * 6.0));
        const int qg = std::min(5, static_cast<int>(clip.data.at({t, i, j, 1}) * 6.0));
        const int qb = std::min(5, static_cast<int>(clip.data.at({t, i, j, 2}) * 6.0));
        bw.put(static_cast<uint32_t>(qr * 36 + qg * 6 + qb), 9);
        if (++since_clear == 254) {
          bw.put(clear, 9);
          since_clear = 0;
        }
      }
    }
    bw.put(end, 9);
    bw.finish();
  }
  os.put(0x3b);  // trailer
  if (!os) throw DependencyError("short write to " + file.string());
}

}  // namespace motionsep::synthvid
