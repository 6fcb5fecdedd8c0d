#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "motionsep/rng.hpp"
#include "motionsep/tensor.hpp"

namespace motionsep::synthvid {

// Closed vocabulary of motion patterns. Each label has a closed-form
// trajectory, so ground truth is available analytically.
enum class MotionLabel { kBounce, kOrbit, kZigzag, kGrowShrink, kSlide };
constexpr int kNumMotions = 5;

enum class ShapeKind { kCircle, kSquare, kTriangle };
constexpr int kNumShapes = 3;

MotionLabel motion_from_string(std::string_view s);
std::string to_string(MotionLabel m);
ShapeKind shape_from_string(std::string_view s);
std::string to_string(ShapeKind k);
std::vector<MotionLabel> all_motions();

struct Rgb {
  double r = 0.0, g = 0.0, b = 0.0;
};

// Fixed palettes keep appearance a closed vocabulary for conditioning.
const std::vector<Rgb>& fg_palette();
const std::vector<Rgb>& bg_palette();
int nearest_fg_bin(const Rgb& c);
int nearest_bg_bin(const Rgb& c);

// A small high-contrast stripe patch planted at a fixed position in every
// reference clip; the appearance-leak metric checks whether generated videos
// reproduce it.
struct ArtifactSpec {
  // Default placement hugs the top edge: the searched neighborhood then
  // barely overlaps the region shapes can occupy, so only genuinely planted
  // structure persists across frames.
  int row = 0;
  int col = 11;
  int size = 4;
  double contrast = 0.9;  // blend weight in (0, 1]

  // (size, size) grayscale template: alternating horizontal stripes.
  Tensor pattern() const;
  void validate(int height, int width) const;
};

// Trajectory shape knobs; all motions are parameterized by the same struct.
struct MotionParams {
  double amplitude = 0.28;  // travel range as a fraction of min(h, w)
  double period = 6.0;      // frames per cycle
  double phase = 0.0;       // cycle offset in [0, 1)
  double angle = 0.7853981633974483;  // slide direction / zigzag sign carrier
  double grow_amp = 0.45;   // radius oscillation for grow-shrink
};

struct AppearanceSpec {
  ShapeKind shape = ShapeKind::kCircle;
  Rgb fg{0.90, 0.20, 0.20};
  Rgb bg{0.06, 0.06, 0.12};
  double radius = 0.16;  // shape size as a fraction of min(h, w)
  bool with_artifact = false;
  ArtifactSpec artifact;
};

struct ClipSpec {
  MotionLabel motion = MotionLabel::kBounce;
  AppearanceSpec appearance;
  MotionParams params;
  int frames = 6;
  int height = 16;
  int width = 16;

  void validate() const;  // throws ConfigError on out-of-range fields
};

struct VideoClip {
  Tensor data;  // (frames, height, width, 3), values in [0, 1]
  std::optional<ClipSpec> spec;

  int frames() const { return static_cast<int>(data.dim(0)); }
  int height() const { return static_cast<int>(data.dim(1)); }
  int width() const { return static_cast<int>(data.dim(2)); }
};

// Center position (pixels) and radius multiplier of the shape at a frame.
struct Pose {
  double cy = 0.0, cx = 0.0;
  double scale = 1.0;
};
Pose trajectory_pose(MotionLabel motion, const MotionParams& p, int frame, int height,
                     int width);

// Deterministic render: same spec -> bit-identical pixels.
VideoClip render_clip(const ClipSpec& spec);

// Seed-deterministic random appearance from the palettes.
AppearanceSpec random_appearance(Rng& rng, bool with_artifact, const ArtifactSpec& artifact);

// Reference set: `count` clips of one motion with varied appearance, all
// carrying the same planted artifact.
std::vector<VideoClip> build_reference_set(MotionLabel motion, int count,
                                           const ArtifactSpec& artifact, int frames, int height,
                                           int width, uint64_t seed);

// Pretraining corpus: varied motions/appearances, no artifacts.
std::vector<VideoClip> build_corpus(const std::vector<MotionLabel>& motions, int per_motion,
                                    int frames, int height, int width, uint64_t seed);

// Artifact presence score in [0, 1]. Per frame, the best normalized
// cross-correlation between the template and any window within `window`
// pixels of the planted position; the clip score is the median over frames,
// so only persistent (static) structure registers. Zero-variance windows
// score 0.
double detect_artifact(const VideoClip& clip, const ArtifactSpec& artifact, int window = 1);

// (h, w) grayscale view of one frame: mean of the color channels.
Tensor frame_luma(const VideoClip& clip, int frame);

void export_ppm(const VideoClip& clip, const std::filesystem::path& dir,
                const std::string& stem);
void export_gif(const VideoClip& clip, const std::filesystem::path& file, int delay_cs = 12);

}  // namespace motionsep::synthvid
