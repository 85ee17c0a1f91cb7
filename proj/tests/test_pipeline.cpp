#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "oracles/oracles.hpp"
#include "test_util.hpp"
#include "vvad/annotation_pipeline.hpp"
#include "vvad/io.hpp"

using namespace vvad;

namespace {

Box centered(double cx, double cy, double side = 10.0, double score = 0.9) {
  return {cx - 0.5 * side, cy - 0.5 * side, side, side, score};
}

Track track_of(int id, int first, int end, double cx = 100.0) {
  Track t;
  t.track_id = id;
  for (int f = first; f < end; ++f) t.boxes[f] = centered(cx, 100.0, 50.0);
  return t;
}

// Batch MAP estimate of the constant-velocity states given every measurement:
// minimizes the prior, process and measurement quadratic forms jointly.
std::vector<double> batch_smooth(const std::vector<double>& z, double q, double r) {
  const int n = static_cast<int>(z.size());
  Eigen::Matrix2d f;
  f << 1, 1, 0, 1;
  Eigen::Matrix2d qm;
  qm << 1.0 / 3.0, 0.5, 0.5, 1.0;
  qm *= q;
  const Eigen::Matrix2d qi = qm.inverse();
  const Eigen::Matrix2d p0i = Eigen::Matrix2d::Identity() / (100.0 * r);
  const Eigen::Vector2d m0(z[0], z[1] - z[0]);

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(2 * n);
  a.block<2, 2>(0, 0) += p0i;
  b.segment<2>(0) += p0i * m0;
  for (int t = 0; t < n; ++t) {
    a(2 * t, 2 * t) += 1.0 / r;
    b(2 * t) += z[t] / r;
  }
  for (int t = 0; t + 1 < n; ++t) {
    // (x_{t+1} - F x_t)' Qi (x_{t+1} - F x_t)
    Eigen::Matrix<double, 2, 4> d;
    d << -f, Eigen::Matrix2d::Identity();
    a.block<4, 4>(2 * t, 2 * t) += d.transpose() * qi * d;
  }
  const Eigen::VectorXd x = a.ldlt().solve(b);
  std::vector<double> out(n);
  for (int t = 0; t < n; ++t) out[t] = x(2 * t);
  return out;
}

double rmse(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc / static_cast<double>(a.size()));
}

}  // namespace

// ---------------------------------------------------------------------------
// Shots

TEST(ShotSplit, ZeroDiffsGiveNoBoundaries) {
  EXPECT_TRUE(shot_split(std::vector<double>(50, 0.0), 0.3).empty());
}

TEST(ShotSplit, SingleSpike) {
  std::vector<double> d(50, 0.0);
  d[10] = 0.9;
  const auto s = shot_split(d, 0.3);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s[0].frame_idx, 11);
}

// Spikes at 40 and 43 cut at 41 and 44; the 3-frame shot [41, 44) is below min_len 25.
TEST(ShotSplit, ShortShotDroppedByMinLen) {
  std::vector<double> d(99, 0.0);
  d[40] = 0.9;
  d[43] = 0.8;
  const auto s = shot_split(d, 0.3);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].frame_idx, 41);
  EXPECT_EQ(s[1].frame_idx, 44);
  const auto iv = shot_intervals(s, 100, 25);
  const std::vector<std::pair<int, int>> want{{0, 41}, {44, 100}};
  EXPECT_EQ(iv, want);
}

TEST(ShotSplit, NonIncreasingBoundariesRejected) {
  const std::vector<ShotBoundary> s{{10}, {10}};
  EXPECT_THROW(shot_intervals(s, 100), ValidationError);
}

// ---------------------------------------------------------------------------
// NMS

TEST(Nms, SingleBox) {
  const std::vector<Box> b{{1, 2, 3, 4, 0.5}};
  const auto k = nms(b, 0.45);
  ASSERT_EQ(k.size(), 1u);
  EXPECT_EQ(k[0].x, 1.0);
}

TEST(Nms, IdenticalBoxesKeepBest) {
  const std::vector<Box> b{{0, 0, 10, 10, 0.8}, {0, 0, 10, 10, 0.9}};
  const auto k = nms(b, 0.45);
  ASSERT_EQ(k.size(), 1u);
  EXPECT_EQ(k[0].score, 0.9);
}

TEST(Nms, MatchesBruteForce) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> n(0, 20);
  std::uniform_real_distribution<double> thr(0.05, 0.95);
  for (int trial = 0; trial < 300; ++trial) {
    const auto boxes = oracle::random_boxes(rng, n(rng));
    const double t = thr(rng);
    const auto got = nms(boxes, t);
    const auto want = oracle::nms(boxes, t);
    ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
    for (std::size_t i = 0; i < got.size(); ++i) {
      EXPECT_EQ(got[i].x, want[i].x);
      EXPECT_EQ(got[i].y, want[i].y);
      EXPECT_EQ(got[i].w, want[i].w);
      EXPECT_EQ(got[i].h, want[i].h);
      EXPECT_EQ(got[i].score, want[i].score);
    }
  }
}

TEST(Nms, SurvivorsAreSubsetAndSeparated) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 300; ++trial) {
    const auto boxes = oracle::random_boxes(rng, 30);
    const auto kept = nms(boxes, 0.3);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      bool found = false;
      for (const auto& b : boxes)
        found |= b.x == kept[i].x && b.y == kept[i].y && b.w == kept[i].w && b.h == kept[i].h && b.score == kept[i].score;
      EXPECT_TRUE(found);
      if (i > 0) {
        EXPECT_GE(kept[i - 1].score, kept[i].score);
      }
      for (std::size_t j = i + 1; j < kept.size(); ++j) EXPECT_LE(iou(kept[i], kept[j]), 0.3);
    }
  }
}

TEST(Nms, IouAgreesWithCornerFormula) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const auto b = oracle::random_boxes(rng, 2);
    EXPECT_NEAR(iou(b[0], b[1]), oracle::corner_iou(b[0], b[1]), 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Association

TEST(Associate, NearbyDetectionJoinsTrack) {
  std::vector<Track> live(1);
  live[0].track_id = 0;
  live[0].boxes[0] = centered(50, 50);
  int next_id = 1;
  const Association a = associate(live, DetectionFrame{1, {centered(52, 50)}}, 20.0, next_id);
  ASSERT_EQ(a.live.size(), 1u);
  EXPECT_EQ(a.live[0].track_id, 0);
  EXPECT_TRUE(a.live[0].alive_at(1));
  EXPECT_TRUE(a.terminated.empty());
  EXPECT_EQ(next_id, 1);
}

TEST(Associate, DistantDetectionOpensTrack) {
  std::vector<Track> live(1);
  live[0].boxes[0] = centered(50, 50);
  int next_id = 1;
  const Association a = associate(live, DetectionFrame{1, {centered(150, 50)}}, 20.0, next_id);
  ASSERT_EQ(a.live.size(), 1u);
  EXPECT_EQ(a.live[0].track_id, 1);
  ASSERT_EQ(a.terminated.size(), 1u);
  EXPECT_EQ(a.terminated[0].track_id, 0);
  EXPECT_EQ(next_id, 2);
}

// Tracks at (0,0) and (10,0); detections at distances [[5,9],[9,5]].
TEST(Associate, CrossingPicksGreedyMinimum) {
  const double b = std::sqrt(20.16);
  const Box d1 = centered(2.2, b), d2 = centered(7.8, b);
  std::vector<Track> live(2);
  live[0].track_id = 0;
  live[0].boxes[0] = centered(0, 0);
  live[1].track_id = 1;
  live[1].boxes[0] = centered(10, 0);
  ASSERT_NEAR(center_distance(live[0].boxes[0], d1), 5.0, 1e-12);
  ASSERT_NEAR(center_distance(live[0].boxes[0], d2), 9.0, 1e-12);
  ASSERT_NEAR(center_distance(live[1].boxes[0], d1), 9.0, 1e-12);
  ASSERT_NEAR(center_distance(live[1].boxes[0], d2), 5.0, 1e-12);
  const double diagonal = 5.0 + 5.0, crossed = 9.0 + 9.0;
  ASSERT_LT(diagonal, crossed);

  int next_id = 2;
  const Association a = associate(live, DetectionFrame{1, {d2, d1}}, 20.0, next_id);
  ASSERT_EQ(a.live.size(), 2u);
  EXPECT_EQ(a.live[0].boxes.at(1).x, d1.x);
  EXPECT_EQ(a.live[1].boxes.at(1).x, d2.x);
  EXPECT_EQ(next_id, 2);
}

TEST(Associate, EachDetectionJoinsAtMostOneTrack) {
  std::vector<Track> live(2);
  live[0].track_id = 0;
  live[0].boxes[0] = centered(0, 0);
  live[1].track_id = 1;
  live[1].boxes[0] = centered(4, 0);
  int next_id = 2;
  const Association a = associate(live, DetectionFrame{1, {centered(2, 0)}}, 20.0, next_id);
  EXPECT_EQ(a.live.size(), 1u);
  EXPECT_EQ(a.terminated.size(), 1u);
}

TEST(Associate, NonPositiveThresholdRejected) {
  int next_id = 0;
  EXPECT_THROW(associate({}, DetectionFrame{}, 0.0, next_id), ValidationError);
}

// ---------------------------------------------------------------------------
// Smoothing

TEST(KalmanSmooth, ConstantTrajectoryUnchanged) {
  Track t = track_of(0, 0, 40);
  const Track s = kalman_smooth(t, 1.0, 9.0);
  ASSERT_EQ(s.smoothed.size(), t.boxes.size());
  for (const auto& [f, b] : t.boxes) {
    EXPECT_NEAR(s.smoothed.at(f).x, b.x, 1e-6);
    EXPECT_NEAR(s.smoothed.at(f).y, b.y, 1e-6);
    EXPECT_NEAR(s.smoothed.at(f).w, b.w, 1e-6);
  }
}

TEST(KalmanSmooth, LinearTrajectoryUnchanged) {
  Track t;
  for (int f = 5; f < 60; ++f) t.boxes[f] = Box{double(f), 2.0 * f, 30.0 + 0.5 * f, 30.0 + 0.5 * f, 1.0};
  const Track s = kalman_smooth(t, 1.0, 9.0);
  for (const auto& [f, b] : t.boxes) {
    EXPECT_NEAR(s.smoothed.at(f).cx(), b.cx(), 1e-6);
    EXPECT_NEAR(s.smoothed.at(f).cy(), b.cy(), 1e-6);
    EXPECT_NEAR(s.smoothed.at(f).w, b.w, 1e-6);
  }
}

TEST(KalmanSmooth, MatchesBatchLeastSquares) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 3.0);
  for (double q : {0.1, 1.0, 10.0}) {
    for (double r : {1.0, 9.0}) {
      std::vector<double> z;
      for (int t = 0; t < 60; ++t) z.push_back(5.0 + 0.7 * t + 0.02 * t * t + g(rng));
      const auto got = rts_smooth(z, q, r);
      const auto want = batch_smooth(z, q, r);
      for (std::size_t t = 0; t < z.size(); ++t) EXPECT_NEAR(got[t], want[t], 1e-6) << "q " << q << " r " << r;
    }
  }
}

// Monte-Carlo oracle: max ratio 0.5045 over these 100 seeds, mean 0.3966.
TEST(KalmanSmooth, ReducesNoiseOnLinearTrajectory) {
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::normal_distribution<double> g(0.0, 3.0);
    std::vector<double> truth, z;
    for (int t = 0; t < 100; ++t) {
      truth.push_back(10.0 + 2.5 * t);
      z.push_back(truth.back() + g(rng));
    }
    const auto s = rts_smooth(z, 1.0, 9.0);
    EXPECT_LE(rmse(s, truth), 0.6 * rmse(z, truth)) << "seed " << seed;
  }
}

TEST(KalmanSmooth, ShortTrackRejected) {
  EXPECT_THROW(kalman_smooth(track_of(0, 0, 1), 1.0, 9.0), TooShortTrack);
}

// ---------------------------------------------------------------------------
// Crops

TEST(PadBoxes, InsideImageUnchanged) {
  Track t = track_of(0, 0, 5, 200.0);
  t.smoothed = t.boxes;
  for (const auto& [f, c] : pad_boxes(t, 640, 480)) {
    EXPECT_EQ(c.side, 50.0);
    EXPECT_EQ(c.x, t.boxes.at(f).x);
    EXPECT_EQ(c.y, t.boxes.at(f).y);
    EXPECT_EQ(c.pad_left + c.pad_top + c.pad_right + c.pad_bottom, 0);
  }
}

TEST(PadBoxes, LargestSideSharedByAllFrames) {
  Track t;
  t.boxes[0] = centered(200, 200, 80);
  t.boxes[1] = centered(200, 200, 120);
  t.smoothed = t.boxes;
  const auto c = pad_boxes(t, 640, 480);
  EXPECT_EQ(c.at(0).side, 120.0);
  EXPECT_EQ(c.at(1).side, 120.0);
}

TEST(PadBoxes, LeftEdgeOverflowRecorded) {
  Track t;
  t.boxes[0] = centered(10, 200, 120);
  t.smoothed = t.boxes;
  const CropBox c = pad_boxes(t, 640, 480).at(0);
  EXPECT_EQ(c.pad_left, 50);
  EXPECT_EQ(c.pad_right, 0);
  EXPECT_EQ(c.pad_top, 0);
}

TEST(PadBoxes, RequiresSmoothing) { EXPECT_THROW(pad_boxes(track_of(0, 0, 3), 640, 480), ValidationError); }

// ---------------------------------------------------------------------------
// Labeling

namespace {

std::vector<AudioVadSegment> speech_all(double seconds) { return {{0.0, seconds, true}}; }
std::vector<AudioVadSegment> silence_all(double seconds) { return {{0.0, seconds, false}}; }

PipelineConfig cfg50() {
  PipelineConfig c;
  c.num_frames = 50;
  return c;
}

}  // namespace

TEST(LabelClips, SingleFaceWithSpeechIsSpeaking) {
  const std::vector<Track> tracks{track_of(0, 0, 50)};
  const auto clips = label_clips(tracks, speech_all(2.0), {}, cfg50());
  ASSERT_EQ(clips.size(), 1u);
  EXPECT_EQ(clips[0].label, ClipLabel::speaking);
}

TEST(LabelClips, ThreeFacesWithoutSpeechAllSilent) {
  const std::vector<Track> tracks{track_of(0, 0, 50, 100), track_of(1, 0, 50, 300), track_of(2, 0, 50, 500)};
  const auto clips = label_clips(tracks, silence_all(2.0), {}, cfg50());
  ASSERT_EQ(clips.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(clips[i].label, ClipLabel::silent);
    EXPECT_EQ(clips[i].track_id, i);
  }
}

TEST(LabelClips, TwoFacesWithSpeechDiscarded) {
  const std::vector<Track> tracks{track_of(0, 0, 50, 100), track_of(1, 0, 50, 300)};
  EXPECT_TRUE(label_clips(tracks, speech_all(2.0), {}, cfg50()).empty());
}

TEST(LabelClips, MixedAudioDiscarded) {
  const std::vector<AudioVadSegment> half{{0.0, 1.0, true}, {1.0, 2.0, false}};
  EXPECT_TRUE(label_clips(std::vector<Track>{track_of(0, 0, 50)}, half, {}, cfg50()).empty());
}

TEST(LabelClips, SingleFaceSilentFlag) {
  PipelineConfig c = cfg50();
  c.single_face_silent = true;
  const std::vector<Track> two{track_of(0, 0, 50, 100), track_of(1, 0, 50, 300)};
  EXPECT_TRUE(label_clips(two, silence_all(2.0), {}, c).empty());
  EXPECT_EQ(label_clips(std::vector<Track>{two[0]}, silence_all(2.0), {}, c).size(), 1u);
}

TEST(LabelClips, MatchesBruteForceOnRandomScenarios) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const oracle::Scenario s = oracle::random_scenario(rng);
    const oracle::ScenarioInputs in = oracle::to_inputs(s);
    const auto got = oracle::strip(label_clips(in.tracks, in.vad, in.shots, in.cfg, "v"));
    const auto want = oracle::label_windows(s);
    ASSERT_EQ(got.size(), want.size()) << "trial " << trial;
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_TRUE(got[i] == want[i]) << "trial " << trial << " clip " << i;
  }
}

TEST(LabelClips, ClipsRespectShotsLivesAndCropShape) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const oracle::Scenario s = oracle::random_scenario(rng);
    const oracle::ScenarioInputs in = oracle::to_inputs(s);
    for (const auto& c : label_clips(in.tracks, in.vad, in.shots, in.cfg, "v")) {
      EXPECT_EQ(c.length(), in.cfg.clip_len);
      EXPECT_GE(c.length(), in.cfg.min_len);
      EXPECT_LE(c.length(), in.cfg.max_len);
      for (int cut : s.cuts) EXPECT_FALSE(c.start < cut && cut < c.end);
      EXPECT_TRUE(in.tracks[c.track_id].alive_throughout(c.start, c.end));
      ASSERT_EQ(c.boxes.size(), static_cast<std::size_t>(c.length()));
      for (const auto& b : c.boxes) EXPECT_EQ(b.side, c.boxes.front().side);
    }
  }
}

// ---------------------------------------------------------------------------
// Full pipeline

namespace {

struct Fixture {
  std::vector<DetectionFrame> frames;
  std::vector<AudioVadSegment> vad;
  std::vector<ShotBoundary> shots;
  PipelineConfig cfg;
};

Fixture load_fixture() {
  const std::string dir = vvad::testing::source_path("tests/data/pipeline/");
  Fixture fx;
  for (const auto& j : read_jsonl(dir + "detections.jsonl")) fx.frames.push_back(detection_from_json(j));
  for (const auto& j : read_jsonl(dir + "vad.jsonl")) fx.vad.push_back(segment_from_json(j));
  for (const auto& j : read_jsonl(dir + "shots.jsonl")) fx.shots.push_back(shot_from_json(j));
  fx.cfg = pipeline_config_from_json(read_json(dir + "config.json").at("pipeline"));
  return fx;
}

}  // namespace

TEST(RunPipeline, GoldenFixtureByteIdentical) {
  const Fixture fx = load_fixture();
  const auto clips = run_pipeline("fixture", fx.frames, fx.vad, fx.shots, fx.cfg);
  const std::string out = vvad::testing::scratch_dir("golden") + "/manifest.jsonl";
  write_clip_manifest(out, clips);
  EXPECT_EQ(vvad::testing::slurp(out), vvad::testing::slurp(vvad::testing::source_path("tests/data/pipeline/golden_manifest.jsonl")));
}

TEST(RunPipeline, Deterministic) {
  const Fixture fx = load_fixture();
  const auto a = run_pipeline("fixture", fx.frames, fx.vad, fx.shots, fx.cfg);
  const auto b = run_pipeline("fixture", fx.frames, fx.vad, fx.shots, fx.cfg);
  EXPECT_EQ(a, b);
}

TEST(RunPipeline, ManifestRoundTrip) {
  const Fixture fx = load_fixture();
  const auto clips = run_pipeline("fixture", fx.frames, fx.vad, fx.shots, fx.cfg);
  const std::string out = vvad::testing::scratch_dir("roundtrip") + "/m.jsonl";
  write_clip_manifest(out, clips);
  EXPECT_EQ(read_clip_manifest(out), clips);
}

TEST(PipelineConfig, ValidationErrors) {
  PipelineConfig c;
  c.speech_cov = 0.5;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.clip_len = 10;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.iou_threshold = 1.0;
  EXPECT_THROW(c.validate(), ValidationError);
}
