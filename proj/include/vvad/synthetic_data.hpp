#pragma once

// Seeded synthetic landmark clips. A clip is the neutral face in pixel space
// under a smooth head trajectory with per-landmark jitter; speaking clips add
// a sinusoidal mouth opening. Each clip draws from its own substreams
// (mouth, jitter, pose), so switching head motion off leaves the mouth and
// jitter draws unchanged.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vvad/annotation_pipeline.hpp"
#include "vvad/error.hpp"
#include "vvad/face_model.hpp"
#include "vvad/flow_encoding.hpp"
#include "vvad/io.hpp"
#include "vvad/landmark_geometry.hpp"
#include "vvad/random.hpp"

namespace vvad {

enum class HeadMotion { none, rigid };

inline const char* to_string(HeadMotion m) { return m == HeadMotion::rigid ? "rigid" : "none"; }

inline HeadMotion parse_head_motion(const std::string& s) {
  if (s == "none") return HeadMotion::none;
  if (s == "rigid") return HeadMotion::rigid;
  throw ValidationError("unknown head_motion '" + s + "'");
}

struct SynthConfig {
  int n_clips = 2000;
  int clip_len = 50;
  double frame_rate = 25.0;
  double speak_amp = 0.15;   // peak inner-mouth opening, template units
  double speak_freq = 4.0;   // Hz
  HeadMotion head_motion = HeadMotion::rigid;
  double noise_sigma = 0.01; // template units
  std::uint64_t seed = 0;

  double max_angle_deg = 30.0;
  double angular_sigma_deg = 40.0;  // OU diffusion of angular velocity, deg/s/sqrt(s)
  double angular_theta = 2.0;       // OU mean reversion, 1/s
  double translation_sigma = 20.0;  // OU diffusion of drift velocity, px/s/sqrt(s)
  double min_scale = 80.0;          // px per template unit
  double max_scale = 120.0;
  std::string source_id = "synth";

  void validate() const {
    if (n_clips < 2 || n_clips % 2 != 0) throw ValidationError("n_clips must be even and >= 2");
    if (clip_len < 2) throw ValidationError("clip_len must be >= 2");
    if (!(frame_rate > 0.0)) throw ValidationError("frame_rate must be positive");
    if (speak_amp < 0.0 || noise_sigma < 0.0 || speak_freq < 0.0)
      throw ValidationError("amplitudes and frequency must be >= 0");
    if (!(max_angle_deg >= 0.0 && max_angle_deg < 90.0)) throw ValidationError("max_angle_deg must lie in [0, 90)");
    if (!(min_scale > 0.0 && max_scale >= min_scale)) throw ValidationError("bad scale range");
  }
};

inline ordered_json to_json(const SynthConfig& c) {
  return {{"n_clips", c.n_clips},
          {"clip_len", c.clip_len},
          {"frame_rate", c.frame_rate},
          {"speak_amp", c.speak_amp},
          {"speak_freq", c.speak_freq},
          {"head_motion", to_string(c.head_motion)},
          {"noise_sigma", c.noise_sigma},
          {"seed", c.seed},
          {"max_angle_deg", c.max_angle_deg},
          {"angular_sigma_deg", c.angular_sigma_deg},
          {"angular_theta", c.angular_theta},
          {"translation_sigma", c.translation_sigma},
          {"min_scale", c.min_scale},
          {"max_scale", c.max_scale},
          {"source_id", c.source_id}};
}

inline SynthConfig synth_config_from_json(const json& j, SynthConfig c = {}) {
  c.n_clips = j.value("n_clips", c.n_clips);
  c.clip_len = j.value("clip_len", c.clip_len);
  c.frame_rate = j.value("frame_rate", c.frame_rate);
  c.speak_amp = j.value("speak_amp", c.speak_amp);
  c.speak_freq = j.value("speak_freq", c.speak_freq);
  if (j.contains("head_motion")) c.head_motion = parse_head_motion(j.at("head_motion").get<std::string>());
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.seed = j.value("seed", c.seed);
  c.max_angle_deg = j.value("max_angle_deg", c.max_angle_deg);
  c.angular_sigma_deg = j.value("angular_sigma_deg", c.angular_sigma_deg);
  c.angular_theta = j.value("angular_theta", c.angular_theta);
  c.translation_sigma = j.value("translation_sigma", c.translation_sigma);
  c.min_scale = j.value("min_scale", c.min_scale);
  c.max_scale = j.value("max_scale", c.max_scale);
  c.source_id = j.value("source_id", c.source_id);
  c.validate();
  return c;
}

struct SynthClip {
  LabeledClip meta;          // provenance manual: labels are exact
  LandmarkSequence landmarks;  // pixel space
  std::vector<double> opening;  // planted inner-mouth opening per frame
};

/// Euler angles (radians) applied as Rz(roll) * Ry(yaw) * Rx(pitch).
inline Eigen::Matrix3d euler_rotation(double yaw, double pitch, double roll) {
  return (Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()) *
          Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()) *
          Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX()))
      .toRotationMatrix();
}

/// Neutral face with the inner lips opened by `opening` (split evenly between
/// upper and lower lip) and the outer lips by half of it.
inline LandmarkPoints open_mouth(const LandmarkPoints& face, double opening) {
  LandmarkPoints p = face;
  for (int i = 60; i <= 67; ++i) {
    if (i == 60 || i == 64) continue;  // corners stay put
    p(i, 1) += (i < 64 ? -0.5 : 0.5) * opening;
  }
  for (int i : kOuterUpperLip) p(i, 1) -= 0.25 * opening;
  for (int i : kOuterLowerLip) p(i, 1) += 0.25 * opening;
  return p;
}

/// Square box around the x/y extent of `p`, 1.2 times its larger side.
inline CropBox face_box(const LandmarkPoints& p) {
  const double x0 = p.col(0).minCoeff(), x1 = p.col(0).maxCoeff();
  const double y0 = p.col(1).minCoeff(), y1 = p.col(1).maxCoeff();
  const double side = 1.2 * std::max(x1 - x0, y1 - y0);
  CropBox b;
  b.side = side;
  b.x = 0.5 * (x0 + x1) - 0.5 * side;
  b.y = 0.5 * (y0 + y1) - 0.5 * side;
  return b;
}

/// One clip. Even indices are speaking, odd are silent.
inline SynthClip generate_clip(const SynthConfig& cfg, int index) {
  const std::uint64_t clip_seed = substream_seed(cfg.seed, static_cast<std::uint64_t>(index));
  Rng mouth_rng = make_rng(clip_seed, "mouth");
  Rng jitter_rng = make_rng(clip_seed, "jitter");
  Rng pose_rng = make_rng(clip_seed, "pose");
  // One distribution per stream: normal_distribution caches a second draw.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0), pose_noise(0.0, 1.0);

  const bool speaking = index % 2 == 0;
  const int n = cfg.clip_len;
  const double dt = 1.0 / cfg.frame_rate;
  const LandmarkPoints face = neutral_face().points;

  SynthClip clip;
  clip.meta.source_id = cfg.source_id;
  clip.meta.track_id = index;
  clip.meta.start = 0;
  clip.meta.end = n;
  clip.meta.label = speaking ? ClipLabel::speaking : ClipLabel::silent;
  clip.meta.provenance = Provenance::manual;
  clip.landmarks.frame_rate = cfg.frame_rate;

  const double phase = 2.0 * std::numbers::pi * unit(mouth_rng);
  const double max_angle = cfg.max_angle_deg * std::numbers::pi / 180.0;
  const double ang_sigma = cfg.angular_sigma_deg * std::numbers::pi / 180.0;
  const bool moving = cfg.head_motion == HeadMotion::rigid;

  Eigen::Vector3d angle = Eigen::Vector3d::Zero(), omega = Eigen::Vector3d::Zero();
  Eigen::Vector2d center(320.0, 240.0), drift = Eigen::Vector2d::Zero();
  double scale = 100.0;
  if (moving) {
    for (int a = 0; a < 3; ++a) angle[a] = (unit(pose_rng) - 0.5) * max_angle;
    center = {200.0 + 240.0 * unit(pose_rng), 160.0 + 160.0 * unit(pose_rng)};
    scale = cfg.min_scale + (cfg.max_scale - cfg.min_scale) * unit(pose_rng);
  }

  for (int t = 0; t < n; ++t) {
    const double open = speaking ? cfg.speak_amp * 0.5 *
                                       (1.0 - std::cos(2.0 * std::numbers::pi * cfg.speak_freq * t * dt + phase))
                                 : 0.0;
    LandmarkPoints p = open_mouth(face, open);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] += cfg.noise_sigma * jitter(jitter_rng);

    if (moving && t > 0) {
      for (int a = 0; a < 3; ++a) {
        omega[a] += -cfg.angular_theta * omega[a] * dt + ang_sigma * std::sqrt(dt) * pose_noise(pose_rng);
        angle[a] += omega[a] * dt;
        if (std::abs(angle[a]) > max_angle) {
          angle[a] = std::copysign(max_angle, angle[a]);
          omega[a] = 0.0;
        }
      }
      for (int a = 0; a < 2; ++a)
        drift[a] += -cfg.angular_theta * drift[a] * dt + cfg.translation_sigma * std::sqrt(dt) * pose_noise(pose_rng);
      center += drift * dt;
    }
    const Eigen::Matrix3d r = euler_rotation(angle[0], angle[1], angle[2]);
    auto to_pixels = [&](const LandmarkPoints& q) {
      LandmarkPoints out = scale * (q * r.transpose());
      out.col(0).array() += center[0];
      out.col(1).array() += center[1];
      return out;
    };
    clip.landmarks.frames.push_back({to_pixels(p)});
    clip.meta.boxes.push_back(face_box(to_pixels(face)));
    clip.opening.push_back(open);
  }
  return clip;
}

/// Balanced clip set: n_clips / 2 speaking, n_clips / 2 silent.
inline std::vector<SynthClip> generate(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<SynthClip> out;
  out.reserve(static_cast<std::size_t>(cfg.n_clips));
  for (int i = 0; i < cfg.n_clips; ++i) out.push_back(generate_clip(cfg, i));
  return out;
}

// ---------------------------------------------------------------------------
// Label noise

struct NoiseSpec {
  double flip_speaking = 0.0;
  double flip_silent = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(flip_speaking >= 0.0 && flip_speaking < 0.5) || !(flip_silent >= 0.0 && flip_silent < 0.5))
      throw ValidationError("flip rates must lie in [0, 0.5)");
  }
};

/// Mislabeling rates measured on the automatic annotations.
inline constexpr double kMeasuredFlipSpeaking = 0.12;
inline constexpr double kMeasuredFlipSilent = 0.086;

inline ordered_json to_json(const NoiseSpec& s) {
  return {{"flip_speaking", s.flip_speaking}, {"flip_silent", s.flip_silent}, {"seed", s.seed}};
}

inline NoiseSpec noise_spec_from_json(const json& j, NoiseSpec s = {}) {
  s.flip_speaking = j.value("flip_speaking", s.flip_speaking);
  s.flip_silent = j.value("flip_silent", s.flip_silent);
  s.seed = j.value("seed", s.seed);
  s.validate();
  return s;
}

inline ClipLabel flipped(ClipLabel l) {
  return l == ClipLabel::speaking ? ClipLabel::silent : ClipLabel::speaking;
}

/// Flips each label independently with its class rate; returns the flip mask.
inline std::vector<bool> inject_label_noise(std::span<ClipLabel> labels, const NoiseSpec& spec) {
  spec.validate();
  Rng rng = make_rng(spec.seed, "label_noise");
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<bool> mask(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double rate = labels[i] == ClipLabel::speaking ? spec.flip_speaking : spec.flip_silent;
    mask[i] = unit(rng) < rate;
    if (mask[i]) labels[i] = flipped(labels[i]);
  }
  return mask;
}

/// Same draws as the label overload; clip contents other than the label are
/// untouched.
inline std::vector<bool> inject_label_noise(std::span<LabeledClip> clips, const NoiseSpec& spec) {
  std::vector<ClipLabel> labels;
  for (const auto& c : clips) labels.push_back(c.label);
  auto mask = inject_label_noise(std::span<ClipLabel>(labels), spec);
  for (std::size_t i = 0; i < clips.size(); ++i) clips[i].label = labels[i];
  return mask;
}

inline void apply_flip_mask(std::span<LabeledClip> clips, const std::vector<bool>& mask) {
  if (mask.size() != clips.size()) throw ShapeMismatch("flip mask length");
  for (std::size_t i = 0; i < clips.size(); ++i)
    if (mask[i]) clips[i].label = flipped(clips[i].label);
}

// ---------------------------------------------------------------------------
// Flow rendering

struct RenderConfig {
  int size = 32;           // crop side, px
  double blob_sigma = 0.8; // px in the crop
  double max_mag = 0.0;    // flow color scale, px; <= 0 uses the per-frame maximum
  FlowConfig flow;
};

/// Landmarks drawn as Gaussian blobs into the square crop `box`, resampled to
/// `size` x `size`.
inline GrayImage render_face(const LandmarkPoints& p, const CropBox& box, const RenderConfig& cfg) {
  GrayImage img{Plane::Zero(cfg.size, cfg.size)};
  const double k = cfg.size / box.side;
  const double inv = 1.0 / (2.0 * cfg.blob_sigma * cfg.blob_sigma);
  const int reach = static_cast<int>(std::ceil(3.0 * cfg.blob_sigma));
  for (int i = 0; i < kNumLandmarks; ++i) {
    const double px = (p(i, 0) - box.x) * k - 0.5, py = (p(i, 1) - box.y) * k - 0.5;
    const int cx = static_cast<int>(std::lround(px)), cy = static_cast<int>(std::lround(py));
    for (int y = std::max(0, cy - reach); y <= std::min(cfg.size - 1, cy + reach); ++y)
      for (int x = std::max(0, cx - reach); x <= std::min(cfg.size - 1, cx + reach); ++x)
        img.pixels(y, x) += static_cast<float>(255.0 * std::exp(-((x - px) * (x - px) + (y - py) * (y - py)) * inv));
  }
  img.pixels = img.pixels.cwiseMin(255.0f);
  return img;
}

/// Color-coded flow between consecutive rendered crops: clip_len - 1 images.
inline std::vector<FlowImage> render_flow_clip(const SynthClip& clip, const RenderConfig& cfg) {
  std::vector<GrayImage> frames;
  for (std::size_t t = 0; t < clip.landmarks.size(); ++t)
    frames.push_back(render_face(clip.landmarks.frames[t].points, clip.meta.boxes[t], cfg));
  std::vector<FlowImage> out;
  for (std::size_t t = 0; t + 1 < frames.size(); ++t)
    out.push_back(flow_to_rgb(dense_flow(frames[t], frames[t + 1], cfg.flow), cfg.max_mag));
  return out;
}

// ---------------------------------------------------------------------------
// Files

inline std::string synth_clip_stem(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "clip_%05d", index);
  return buf;
}

/// Writes `dir`/manifest.jsonl plus landmarks/<clip>.csv, and flow/<clip>.png
/// when `flows` (one filmstrip per clip) is given. Manifest paths are relative
/// to `dir`.
inline void write_synthetic(const std::string& dir, std::vector<SynthClip>& clips,
                            const std::vector<std::vector<FlowImage>>* flows = nullptr) {
  namespace fs = std::filesystem;
  if (flows && flows->size() != clips.size()) throw ShapeMismatch("one flow clip per synthetic clip");
  fs::create_directories(fs::path(dir) / "landmarks");
  if (flows) fs::create_directories(fs::path(dir) / "flow");
  std::vector<LabeledClip> manifest;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    auto& c = clips[i];
    const std::string stem = synth_clip_stem(c.meta.track_id);
    c.meta.landmarks = "landmarks/" + stem + ".csv";
    write_landmarks((fs::path(dir) / c.meta.landmarks).string(), c.landmarks);
    if (flows) {
      c.meta.flow = "flow/" + stem + ".png";
      write_png((fs::path(dir) / c.meta.flow).string(), (*flows)[i]);
    }
    manifest.push_back(c.meta);
  }
  write_clip_manifest((fs::path(dir) / "manifest.jsonl").string(), manifest);
}

}  // namespace vvad
