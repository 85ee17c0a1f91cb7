#pragma once

// Automatic labeling of face clips from face detections and audio VAD:
// shot splitting, NMS, greedy center-distance tracking, Kalman/RTS smoothing,
// equal-size square crops, and the speaking/silent/discard labeling rule.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "vvad/avad_gate.hpp"
#include "vvad/error.hpp"
#include "vvad/io.hpp"

namespace vvad {

struct Box {
  double x = 0, y = 0, w = 0, h = 0;
  double score = 1.0;

  double cx() const { return x + 0.5 * w; }
  double cy() const { return y + 0.5 * h; }
  double area() const { return w * h; }
  bool operator==(const Box&) const = default;
};

inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double center_distance(const Box& a, const Box& b) {
  return std::hypot(a.cx() - b.cx(), a.cy() - b.cy());
}

struct DetectionFrame {
  int frame_idx = 0;
  std::vector<Box> boxes;
};

struct Track {
  int track_id = 0;
  std::map<int, Box> boxes;
  std::map<int, Box> smoothed;  // empty until kalman_smooth ran

  int first_frame() const { return boxes.begin()->first; }
  int last_frame() const { return boxes.rbegin()->first; }
  std::size_t length() const { return boxes.size(); }
  bool alive_at(int f) const { return boxes.contains(f); }
  /// Alive on every frame of [start, end).
  bool alive_throughout(int start, int end) const {
    return std::distance(boxes.lower_bound(start), boxes.lower_bound(end)) == end - start;
  }
  /// Alive on at least one frame of [start, end).
  bool alive_within(int start, int end) const {
    return boxes.lower_bound(start) != boxes.lower_bound(end);
  }
};

struct ShotBoundary {
  int frame_idx = 0;
  bool operator==(const ShotBoundary&) const = default;
};

enum class ClipLabel { silent = 0, speaking = 1 };
enum class Provenance { automatic, manual };

inline const char* to_string(ClipLabel l) { return l == ClipLabel::speaking ? "speaking" : "silent"; }
inline const char* to_string(Provenance p) { return p == Provenance::manual ? "manual" : "auto"; }

/// Square crop of a track frame. Padding counts the pixels that fall outside
/// the image on each edge and must be filled by edge replication.
struct CropBox {
  double x = 0, y = 0, side = 0;
  int pad_left = 0, pad_top = 0, pad_right = 0, pad_bottom = 0;
  bool operator==(const CropBox&) const = default;
};

struct LabeledClip {
  std::string source_id;
  int track_id = 0;
  int start = 0;  // [start, end) in frames
  int end = 0;
  ClipLabel label = ClipLabel::silent;
  std::vector<CropBox> boxes;
  Provenance provenance = Provenance::automatic;
  std::string landmarks;  // optional landmark file, relative to the manifest
  std::string flow;       // optional flow filmstrip PNG, relative to the manifest

  int length() const { return end - start; }
  std::string clip_id() const {
    return source_id + ":" + std::to_string(track_id) + ":" + std::to_string(start);
  }
  bool operator==(const LabeledClip&) const = default;
};

struct PipelineConfig {
  int clip_len = 50;
  double speech_cov = 0.9;
  double fps = 25.0;
  int min_len = 25;
  int max_len = 100;
  double iou_threshold = 0.45;
  /// Center-distance gate in pixels; <= 0 selects 0.5 x the mean box side of
  /// the previous frame's boxes.
  double dist_threshold = 0.0;
  double process_noise = 1.0;
  double measurement_noise = 9.0;
  /// When set, silent clips are produced only for windows with a single face.
  bool single_face_silent = false;
  /// Video length in frames; 0 derives it from the last detection.
  int num_frames = 0;
  int image_w = 0;  // 0 = unknown, no padding recorded
  int image_h = 0;

  void validate() const {
    if (clip_len < 1) throw ValidationError("clip_len must be >= 1");
    if (min_len > max_len) throw ValidationError("min_len must not exceed max_len");
    if (clip_len < min_len || clip_len > max_len)
      throw ValidationError("clip_len must lie within [min_len, max_len]");
    if (!(speech_cov > 0.5 && speech_cov <= 1.0))
      throw ValidationError("speech_cov must lie in (0.5, 1]");
    if (!(fps > 0.0)) throw ValidationError("fps must be positive");
    if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
      throw ValidationError("iou_threshold must lie in (0, 1)");
    if (!(process_noise > 0.0) || !(measurement_noise > 0.0))
      throw ValidationError("Kalman noise terms must be positive");
  }
};

// ---------------------------------------------------------------------------
// Shots

/// Boundary at i + 1 wherever frame_diffs[i] > threshold.
inline std::vector<ShotBoundary> shot_split(std::span<const double> frame_diffs, double threshold) {
  std::vector<ShotBoundary> out;
  for (std::size_t i = 0; i < frame_diffs.size(); ++i)
    if (frame_diffs[i] > threshold) out.push_back({static_cast<int>(i) + 1});
  return out;
}

/// Half-open shot intervals over [0, num_frames); shots shorter than
/// `min_len` are dropped.
inline std::vector<std::pair<int, int>> shot_intervals(std::span<const ShotBoundary> shots,
                                                       int num_frames, int min_len = 1) {
  std::vector<int> cuts{0};
  int prev = -1;
  for (const auto& s : shots) {
    if (s.frame_idx <= prev) throw ValidationError("shot boundaries must be strictly increasing");
    prev = s.frame_idx;
    if (s.frame_idx == 0) continue;
    if (s.frame_idx >= num_frames) break;
    cuts.push_back(s.frame_idx);
  }
  cuts.push_back(num_frames);
  std::vector<std::pair<int, int>> out;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    if (cuts[i + 1] - cuts[i] >= min_len) out.emplace_back(cuts[i], cuts[i + 1]);
  return out;
}

// ---------------------------------------------------------------------------
// Detection cleanup and tracking

/// Greedy NMS: keep the best remaining box, drop everything overlapping it by
/// more than `iou_threshold`, repeat. Output is sorted by descending score;
/// equal scores keep input order.
inline std::vector<Box> nms(std::span<const Box> boxes, double iou_threshold) {
  std::vector<std::size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return boxes[a].score > boxes[b].score; });
  std::vector<bool> suppressed(boxes.size(), false);
  std::vector<Box> keep;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (suppressed[order[i]]) continue;
    const Box& best = boxes[order[i]];
    keep.push_back(best);
    for (std::size_t j = i + 1; j < order.size(); ++j)
      if (!suppressed[order[j]] && iou(best, boxes[order[j]]) > iou_threshold)
        suppressed[order[j]] = true;
  }
  return keep;
}

struct Association {
  std::vector<Track> live;        // continued tracks first (input order), then new tracks
  std::vector<Track> terminated;  // tracks with no detection in this frame
};

/// Greedy globally-nearest assignment of detections to live tracks by box
/// center distance. Each detection joins at most one track; unmatched
/// detections open new tracks numbered from `next_id`.
inline Association associate(std::vector<Track> live, const DetectionFrame& detections,
                             double dist_threshold, int& next_id) {
  if (!(dist_threshold > 0.0)) throw ValidationError("dist_threshold must be positive");
  struct Pair {
    double dist;
    std::size_t track, det;
  };
  std::vector<Pair> pairs;
  for (std::size_t t = 0; t < live.size(); ++t) {
    const Box& last = live[t].boxes.rbegin()->second;
    for (std::size_t d = 0; d < detections.boxes.size(); ++d) {
      const double dist = center_distance(last, detections.boxes[d]);
      if (dist <= dist_threshold) pairs.push_back({dist, t, d});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.dist, a.track, a.det) < std::tie(b.dist, b.track, b.det);
  });

  std::vector<int> track_of_det(detections.boxes.size(), -1);
  std::vector<bool> track_used(live.size(), false);
  for (const auto& p : pairs) {
    if (track_used[p.track] || track_of_det[p.det] >= 0) continue;
    track_used[p.track] = true;
    track_of_det[p.det] = static_cast<int>(p.track);
  }

  Association out;
  for (std::size_t d = 0; d < detections.boxes.size(); ++d)
    if (track_of_det[d] >= 0) live[track_of_det[d]].boxes[detections.frame_idx] = detections.boxes[d];
  for (std::size_t t = 0; t < live.size(); ++t)
    (track_used[t] ? out.live : out.terminated).push_back(std::move(live[t]));
  for (std::size_t d = 0; d < detections.boxes.size(); ++d) {
    if (track_of_det[d] >= 0) continue;
    Track fresh;
    fresh.track_id = next_id++;
    fresh.boxes[detections.frame_idx] = detections.boxes[d];
    out.live.push_back(std::move(fresh));
  }
  return out;
}

/// Default association gate: half the mean side of the given boxes.
inline double default_dist_threshold(std::span<const Track> live) {
  double acc = 0.0;
  for (const auto& t : live) {
    const Box& b = t.boxes.rbegin()->second;
    acc += 0.5 * (b.w + b.h);
  }
  return live.empty() ? 1.0 : 0.5 * acc / static_cast<double>(live.size());
}

// ---------------------------------------------------------------------------
// Kalman / Rauch-Tung-Striebel smoothing

/// Fixed-interval smoothing of one scalar series under a constant-velocity
/// model (continuous white-noise acceleration, unit time step). The filter
/// starts from the two-point state [z0, z1 - z0], so constant and linear
/// series are reproduced exactly.
inline std::vector<double> rts_smooth(std::span<const double> z, double process_noise,
                                      double measurement_noise) {
  using Mat2 = Eigen::Matrix2d;
  using Vec2 = Eigen::Vector2d;
  const std::size_t n = z.size();
  if (n < 2) throw TooShortTrack("smoothing needs at least 2 samples");

  Mat2 f;
  f << 1, 1, 0, 1;
  Mat2 q;
  q << 1.0 / 3.0, 0.5, 0.5, 1.0;
  q *= process_noise;
  const double r = measurement_noise;

  std::vector<Vec2> x_pred(n), x_filt(n);
  std::vector<Mat2> p_pred(n), p_filt(n);
  x_pred[0] = Vec2(z[0], z[1] - z[0]);
  p_pred[0] = 100.0 * r * Mat2::Identity();
  for (std::size_t t = 0; t < n; ++t) {
    if (t > 0) {
      x_pred[t] = f * x_filt[t - 1];
      p_pred[t] = f * p_filt[t - 1] * f.transpose() + q;
    }
    const double s = p_pred[t](0, 0) + r;
    const Vec2 k = p_pred[t].col(0) / s;
    x_filt[t] = x_pred[t] + k * (z[t] - x_pred[t](0));
    p_filt[t] = p_pred[t] - k * p_pred[t].row(0);
  }

  std::vector<Vec2> x_smooth(n);
  x_smooth[n - 1] = x_filt[n - 1];
  for (std::size_t t = n - 1; t-- > 0;) {
    const Mat2 gain = p_filt[t] * f.transpose() * p_pred[t + 1].inverse();
    x_smooth[t] = x_filt[t] + gain * (x_smooth[t + 1] - x_pred[t + 1]);
  }
  std::vector<double> out(n);
  for (std::size_t t = 0; t < n; ++t) out[t] = x_smooth[t](0);
  return out;
}

/// Smooths centers and scale s = max(w, h) of a contiguous track; smoothed
/// boxes keep each frame's aspect ratio.
inline Track kalman_smooth(Track track, double process_noise, double measurement_noise) {
  if (track.boxes.size() < 2) throw TooShortTrack("track " + std::to_string(track.track_id));
  std::vector<double> cx, cy, s;
  for (const auto& [f, b] : track.boxes) {
    cx.push_back(b.cx());
    cy.push_back(b.cy());
    s.push_back(std::max(b.w, b.h));
  }
  const auto scx = rts_smooth(cx, process_noise, measurement_noise);
  const auto scy = rts_smooth(cy, process_noise, measurement_noise);
  const auto ss = rts_smooth(s, process_noise, measurement_noise);

  track.smoothed.clear();
  std::size_t i = 0;
  for (const auto& [f, b] : track.boxes) {
    const double ratio = s[i] > 0.0 ? ss[i] / s[i] : 1.0;
    const double w = b.w * ratio, h = b.h * ratio;
    track.smoothed[f] = Box{scx[i] - 0.5 * w, scy[i] - 0.5 * h, w, h, b.score};
    ++i;
  }
  return track;
}

// ---------------------------------------------------------------------------
// Crops

/// Equal-size square crops: side = largest smoothed box dimension over the
/// track, centered on each frame's smoothed center. Padding is recorded only
/// when the image size is known (both dimensions > 0).
inline std::map<int, CropBox> pad_boxes(const Track& track, int image_w, int image_h) {
  if (track.smoothed.empty()) throw ValidationError("pad_boxes needs smoothed boxes");
  double side = 0.0;
  for (const auto& [f, b] : track.smoothed) side = std::max({side, b.w, b.h});
  const bool known = image_w > 0 && image_h > 0;
  auto overflow = [](double v) { return v > 0.0 ? static_cast<int>(std::ceil(v - 1e-9)) : 0; };

  std::map<int, CropBox> out;
  for (const auto& [f, b] : track.smoothed) {
    CropBox c;
    c.side = side;
    c.x = b.cx() - 0.5 * side;
    c.y = b.cy() - 0.5 * side;
    if (known) {
      c.pad_left = overflow(-c.x);
      c.pad_top = overflow(-c.y);
      c.pad_right = overflow(c.x + side - image_w);
      c.pad_bottom = overflow(c.y + side - image_h);
    }
    out[f] = c;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Labeling

/// Tiles every shot with non-overlapping windows of cfg.clip_len frames and
/// labels each window:
///   speech coverage >= speech_cov, exactly one face present and alive
///     throughout                         -> speaking
///   speech coverage <= 1 - speech_cov    -> silent, for every face alive
///                                           throughout
///   anything else                        -> discarded
inline std::vector<LabeledClip> label_clips(std::span<const Track> tracks,
                                            std::span<const AudioVadSegment> vad,
                                            std::span<const ShotBoundary> shots,
                                            const PipelineConfig& cfg,
                                            const std::string& source_id = "") {
  cfg.validate();
  int num_frames = cfg.num_frames;
  if (num_frames <= 0)
    for (const auto& t : tracks)
      if (!t.boxes.empty()) num_frames = std::max(num_frames, t.last_frame() + 1);

  // Crops are built on demand; tracks that were not smoothed yet are smoothed
  // here.
  std::map<std::size_t, std::map<int, CropBox>> crops;
  auto crops_for = [&](std::size_t ti) -> const std::map<int, CropBox>& {
    auto it = crops.find(ti);
    if (it == crops.end()) {
      Track t = tracks[ti];
      if (t.smoothed.empty()) {
        if (t.boxes.size() >= 2) t = kalman_smooth(std::move(t), cfg.process_noise, cfg.measurement_noise);
        else t.smoothed = t.boxes;  // single frame: nothing to smooth
      }
      it = crops.emplace(ti, pad_boxes(t, cfg.image_w, cfg.image_h)).first;
    }
    return it->second;
  };

  // Coverage is a ratio of summed float durations; 1e-9 absorbs rounding at
  // frame-aligned thresholds.
  const double speech_cut = cfg.speech_cov - 1e-9;
  const double silence_cut = 1.0 - cfg.speech_cov + 1e-9;
  const int len = cfg.clip_len;

  std::vector<LabeledClip> out;
  for (const auto& [shot_start, shot_end] : shot_intervals(shots, num_frames, cfg.min_len)) {
    for (int a = shot_start; a + len <= shot_end; a += len) {
      const int b = a + len;
      std::vector<std::size_t> present, full;
      for (std::size_t ti = 0; ti < tracks.size(); ++ti) {
        if (tracks[ti].alive_within(a, b)) present.push_back(ti);
        if (tracks[ti].alive_throughout(a, b)) full.push_back(ti);
      }
      const double cov = coverage(vad, a / cfg.fps, b / cfg.fps);

      std::vector<std::size_t> chosen;
      ClipLabel label = ClipLabel::silent;
      if (cov >= speech_cut) {
        if (present.size() == 1 && full.size() == 1) {
          chosen = full;
          label = ClipLabel::speaking;
        }
      } else if (cov <= silence_cut) {
        if (!cfg.single_face_silent || present.size() == 1) chosen = full;
      }

      std::sort(chosen.begin(), chosen.end(), [&](std::size_t x, std::size_t y) {
        return tracks[x].track_id < tracks[y].track_id;
      });
      for (std::size_t ti : chosen) {
        LabeledClip clip;
        clip.source_id = source_id;
        clip.track_id = tracks[ti].track_id;
        clip.start = a;
        clip.end = b;
        clip.label = label;
        clip.provenance = Provenance::automatic;
        const auto& c = crops_for(ti);
        for (int f = a; f < b; ++f) clip.boxes.push_back(c.at(f));
        out.push_back(std::move(clip));
      }
    }
  }
  return out;
}

/// Full per-video run: NMS per frame, tracking (tracks end at shot cuts),
/// smoothing, cropping and labeling.
inline std::vector<LabeledClip> run_pipeline(const std::string& video_id,
                                             std::vector<DetectionFrame> frames,
                                             std::span<const AudioVadSegment> vad,
                                             std::span<const ShotBoundary> shots,
                                             PipelineConfig cfg) {
  cfg.validate();
  std::sort(frames.begin(), frames.end(),
            [](const DetectionFrame& a, const DetectionFrame& b) { return a.frame_idx < b.frame_idx; });
  int num_frames = cfg.num_frames;
  if (num_frames <= 0 && !frames.empty()) num_frames = frames.back().frame_idx + 1;
  cfg.num_frames = num_frames;

  std::map<int, std::vector<Box>> by_frame;
  for (auto& df : frames) {
    if (df.frame_idx < 0) throw ValidationError("negative frame_idx");
    auto& dst = by_frame[df.frame_idx];
    dst.insert(dst.end(), df.boxes.begin(), df.boxes.end());
  }
  std::vector<bool> cut(static_cast<std::size_t>(std::max(num_frames, 0)) + 1, false);
  for (const auto& s : shots)
    if (s.frame_idx >= 0 && s.frame_idx < num_frames) cut[s.frame_idx] = true;

  std::vector<Track> live, finished;
  int next_id = 0;
  for (int f = 0; f < num_frames; ++f) {
    if (cut[f]) {
      for (auto& t : live) finished.push_back(std::move(t));
      live.clear();
    }
    DetectionFrame det{f, {}};
    if (auto it = by_frame.find(f); it != by_frame.end()) det.boxes = nms(it->second, cfg.iou_threshold);
    const double gate = cfg.dist_threshold > 0.0 ? cfg.dist_threshold : default_dist_threshold(live);
    Association a = associate(std::move(live), det, gate, next_id);
    live = std::move(a.live);
    for (auto& t : a.terminated) finished.push_back(std::move(t));
  }
  for (auto& t : live) finished.push_back(std::move(t));
  std::sort(finished.begin(), finished.end(),
            [](const Track& a, const Track& b) { return a.track_id < b.track_id; });
  for (auto& t : finished)
    if (t.boxes.size() >= 2) t = kalman_smooth(std::move(t), cfg.process_noise, cfg.measurement_noise);

  return label_clips(finished, vad, shots, cfg, video_id);
}

// ---------------------------------------------------------------------------
// Manifests
//
// Detection line: {"video_id": s, "frame_idx": n, "boxes": [[x, y, w, h, score], ...]}
// Clip line:      {"source_id", "track_id", "start", "end", "label", "boxes",
//                  "provenance"[, "landmarks"][, "flow"]}
// Clip boxes are [x, y, side, side] per frame, plus [left, top, right, bottom]
// replicate padding when any is non-zero.

inline ordered_json to_json(const LabeledClip& c) {
  ordered_json j;
  j["source_id"] = c.source_id;
  j["track_id"] = c.track_id;
  j["start"] = c.start;
  j["end"] = c.end;
  j["label"] = to_string(c.label);
  ordered_json boxes = ordered_json::array();
  for (const auto& b : c.boxes) {
    ordered_json row = ordered_json::array({b.x, b.y, b.side, b.side});
    if (b.pad_left || b.pad_top || b.pad_right || b.pad_bottom)
      row.push_back(ordered_json::array({b.pad_left, b.pad_top, b.pad_right, b.pad_bottom}));
    boxes.push_back(std::move(row));
  }
  j["boxes"] = std::move(boxes);
  j["provenance"] = to_string(c.provenance);
  if (!c.landmarks.empty()) j["landmarks"] = c.landmarks;
  if (!c.flow.empty()) j["flow"] = c.flow;
  return j;
}

inline ClipLabel parse_label(const std::string& s) {
  if (s == "speaking") return ClipLabel::speaking;
  if (s == "silent") return ClipLabel::silent;
  throw FormatError("unknown label '" + s + "'");
}

inline Provenance parse_provenance(const std::string& s) {
  if (s == "manual") return Provenance::manual;
  if (s == "auto") return Provenance::automatic;
  throw FormatError("unknown provenance '" + s + "'");
}

inline LabeledClip clip_from_json(const json& j) {
  try {
    LabeledClip c;
    c.source_id = j.at("source_id").get<std::string>();
    c.track_id = j.at("track_id").get<int>();
    c.start = j.at("start").get<int>();
    c.end = j.at("end").get<int>();
    c.label = parse_label(j.at("label").get<std::string>());
    c.provenance = parse_provenance(j.at("provenance").get<std::string>());
    for (const auto& row : j.value("boxes", json::array())) {
      CropBox b;
      b.x = row.at(0).get<double>();
      b.y = row.at(1).get<double>();
      b.side = row.at(2).get<double>();
      if (row.size() > 4) {
        const auto& p = row.at(4);
        b.pad_left = p.at(0);
        b.pad_top = p.at(1);
        b.pad_right = p.at(2);
        b.pad_bottom = p.at(3);
      }
      c.boxes.push_back(b);
    }
    c.landmarks = j.value("landmarks", std::string{});
    c.flow = j.value("flow", std::string{});
    if (c.end <= c.start) throw FormatError("clip end must exceed start");
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad clip line: ") + e.what());
  }
}

inline DetectionFrame detection_from_json(const json& j) {
  try {
    DetectionFrame d;
    d.frame_idx = j.at("frame_idx").get<int>();
    if (d.frame_idx < 0) throw FormatError("negative frame_idx");
    for (const auto& row : j.at("boxes")) {
      Box b{row.at(0).get<double>(), row.at(1).get<double>(), row.at(2).get<double>(),
            row.at(3).get<double>(), row.size() > 4 ? row.at(4).get<double>() : 1.0};
      if (!(b.w > 0.0) || !(b.h > 0.0)) throw FormatError("box width/height must be positive");
      if (!(b.score >= 0.0 && b.score <= 1.0)) throw FormatError("box score must lie in [0,1]");
      d.boxes.push_back(b);
    }
    return d;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad detection line: ") + e.what());
  }
}

// Shot line: {"video_id": s, "frame_idx": n}, a cut before frame n.
inline ShotBoundary shot_from_json(const json& j) {
  try {
    return {j.at("frame_idx").get<int>()};
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad shot line: ") + e.what());
  }
}

inline ordered_json to_json(const PipelineConfig& c) {
  return {{"clip_len", c.clip_len},
          {"speech_cov", c.speech_cov},
          {"fps", c.fps},
          {"min_len", c.min_len},
          {"max_len", c.max_len},
          {"iou_threshold", c.iou_threshold},
          {"dist_threshold", c.dist_threshold},
          {"process_noise", c.process_noise},
          {"measurement_noise", c.measurement_noise},
          {"single_face_silent", c.single_face_silent},
          {"num_frames", c.num_frames},
          {"image_w", c.image_w},
          {"image_h", c.image_h}};
}

inline PipelineConfig pipeline_config_from_json(const json& j, PipelineConfig c = {}) {
  c.clip_len = j.value("clip_len", c.clip_len);
  c.speech_cov = j.value("speech_cov", c.speech_cov);
  c.fps = j.value("fps", c.fps);
  c.min_len = j.value("min_len", c.min_len);
  c.max_len = j.value("max_len", c.max_len);
  c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
  c.dist_threshold = j.value("dist_threshold", c.dist_threshold);
  c.process_noise = j.value("process_noise", c.process_noise);
  c.measurement_noise = j.value("measurement_noise", c.measurement_noise);
  c.single_face_silent = j.value("single_face_silent", c.single_face_silent);
  c.num_frames = j.value("num_frames", c.num_frames);
  c.image_w = j.value("image_w", c.image_w);
  c.image_h = j.value("image_h", c.image_h);
  return c;
}

inline std::vector<LabeledClip> read_clip_manifest(const std::string& path) {
  std::vector<LabeledClip> out;
  for (const auto& j : read_jsonl(path)) out.push_back(clip_from_json(j));
  return out;
}

inline void write_clip_manifest(const std::string& path, std::span<const LabeledClip> clips) {
  std::vector<ordered_json> rows;
  rows.reserve(clips.size());
  for (const auto& c : clips) rows.push_back(to_json(c));
  write_jsonl(path, rows);
}

}  // namespace vvad
