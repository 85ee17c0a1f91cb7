#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "test_util.hpp"
#include "vvad/datasets.hpp"
#include "vvad/face_model.hpp"
#include "vvad/synthetic_data.hpp"

using namespace vvad;

namespace {

// Variance over time of the frontalized inner-mouth opening.
double mouth_variance(const SynthClip& c) {
  const LandmarkSequence a = frontalize(c.landmarks, canonical_mean_face());
  double m = 0.0, s = 0.0;
  for (const auto& f : a.frames) m += mouth_opening(f.points);
  m /= static_cast<double>(a.size());
  for (const auto& f : a.frames) s += std::pow(mouth_opening(f.points) - m, 2);
  return s / static_cast<double>(a.size() - 1);
}

// Two-sided Welch statistic; |t| > 2.576 rejects equality at alpha 0.01
// (normal approximation, conservative toward rejection at ~98 df).
double welch_t(const std::vector<double>& a, const std::vector<double>& b) {
  auto stats = [](const std::vector<double>& x) {
    double m = 0.0, s = 0.0;
    for (double v : x) m += v;
    m /= static_cast<double>(x.size());
    for (double v : x) s += (v - m) * (v - m);
    return std::pair{m, s / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = stats(a);
  const auto [mb, vb] = stats(b);
  return (ma - mb) / std::sqrt(va / static_cast<double>(a.size()) + vb / static_cast<double>(b.size()));
}

std::pair<std::vector<double>, std::vector<double>> variances_by_class(const SynthConfig& cfg) {
  std::vector<double> speaking, silent;
  for (const auto& c : generate(cfg))
    (c.meta.label == ClipLabel::speaking ? speaking : silent).push_back(mouth_variance(c));
  return {speaking, silent};
}

}  // namespace

TEST(Generate, ClassesExactlyBalanced) {
  SynthConfig cfg;
  cfg.n_clips = 64;
  cfg.clip_len = 10;
  const auto clips = generate(cfg);
  ASSERT_EQ(clips.size(), 64u);
  int speaking = 0;
  for (const auto& c : clips) {
    speaking += c.meta.label == ClipLabel::speaking;
    EXPECT_EQ(c.meta.provenance, Provenance::manual);
    EXPECT_EQ(c.landmarks.size(), 10u);
    EXPECT_EQ(c.meta.length(), 10);
  }
  EXPECT_EQ(speaking, 32);
}

// Oracle over these 100 clips: min speaking variance 0.00259, max silent 0.000112.
TEST(Generate, DefaultMouthVarianceSeparatesEveryPair) {
  SynthConfig cfg;
  cfg.n_clips = 100;
  const auto [speaking, silent] = variances_by_class(cfg);
  EXPECT_GT(*std::min_element(speaking.begin(), speaking.end()), *std::max_element(silent.begin(), silent.end()));
}

TEST(Generate, ZeroAmplitudeClassesIndistinguishable) {
  SynthConfig cfg;
  cfg.n_clips = 100;
  cfg.speak_amp = 0.0;
  cfg.seed = 3;
  const auto [speaking, silent] = variances_by_class(cfg);
  EXPECT_LT(std::abs(welch_t(speaking, silent)), 2.576);
}

TEST(Generate, SameSeedIdenticalBytes) {
  SynthConfig cfg;
  cfg.n_clips = 6;
  cfg.clip_len = 12;
  cfg.seed = 42;
  auto a = generate(cfg), b = generate(cfg);
  const std::string da = vvad::testing::scratch_dir("synth_a"), db = vvad::testing::scratch_dir("synth_b");
  write_synthetic(da, a);
  write_synthetic(db, b);
  namespace fs = std::filesystem;
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(da)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), da);
    EXPECT_EQ(vvad::testing::slurp(e.path().string()), vvad::testing::slurp((fs::path(db) / rel).string())) << rel;
    ++files;
  }
  EXPECT_EQ(files, 7);
}

TEST(Generate, DifferentSeedDifferentData) {
  SynthConfig a;
  a.n_clips = 2;
  a.clip_len = 5;
  SynthConfig b = a;
  b.seed = 1;
  EXPECT_NE(generate(a)[0].landmarks.frames[0], generate(b)[0].landmarks.frames[0]);
}

TEST(Generate, ClipsIndependentOfSetSize) {
  SynthConfig small;
  small.n_clips = 4;
  small.clip_len = 8;
  SynthConfig large = small;
  large.n_clips = 40;
  const auto a = generate(small), b = generate(large);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].landmarks.frames, b[i].landmarks.frames);
}

TEST(Generate, StillHeadWithoutJitterIsFrontalTemplate) {
  SynthConfig cfg;
  cfg.n_clips = 2;
  cfg.clip_len = 5;
  cfg.head_motion = HeadMotion::none;
  cfg.noise_sigma = 0.0;
  const SynthClip silent = generate(cfg)[1];
  ASSERT_EQ(silent.meta.label, ClipLabel::silent);
  const LandmarkSequence a = frontalize(silent.landmarks, canonical_mean_face());
  for (const auto& f : a.frames) EXPECT_LE((f.points - a.frames[0].points).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Generate, ConfigValidation) {
  SynthConfig c;
  c.n_clips = 3;
  EXPECT_THROW(c.validate(), ValidationError);
  c = {};
  c.speak_amp = -1.0;
  EXPECT_THROW(c.validate(), ValidationError);
}

// ---------------------------------------------------------------------------
// Label noise

namespace {

std::vector<ClipLabel> balanced_labels(int n_speaking, int n_silent) {
  std::vector<ClipLabel> out(static_cast<std::size_t>(n_speaking), ClipLabel::speaking);
  out.insert(out.end(), static_cast<std::size_t>(n_silent), ClipLabel::silent);
  return out;
}

}  // namespace

TEST(LabelNoise, ZeroRatesFlipNothing) {
  auto labels = balanced_labels(500, 500);
  const auto before = labels;
  const auto mask = inject_label_noise(std::span<ClipLabel>(labels), NoiseSpec{0.0, 0.0, 1});
  EXPECT_EQ(labels, before);
  EXPECT_EQ(std::count(mask.begin(), mask.end(), true), 0);
}

TEST(LabelNoise, RatesAtOrAboveHalfRejected) {
  auto labels = balanced_labels(2, 2);
  EXPECT_THROW(inject_label_noise(std::span<ClipLabel>(labels), NoiseSpec{0.5, 0.0, 1}), ValidationError);
  EXPECT_THROW(inject_label_noise(std::span<ClipLabel>(labels), NoiseSpec{0.0, 1.0, 1}), ValidationError);
  EXPECT_THROW(inject_label_noise(std::span<ClipLabel>(labels), NoiseSpec{-0.1, 0.0, 1}), ValidationError);
}

TEST(LabelNoise, FlipCountsWithinBinomialBounds) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto labels = balanced_labels(5000, 5000);
    const auto mask = inject_label_noise(std::span<ClipLabel>(labels), NoiseSpec{0.12, 0.086, seed});
    long flip_sp = 0, flip_si = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) (i < 5000 ? flip_sp : flip_si) += mask[i];
    const double sd_sp = std::sqrt(5000 * 0.12 * 0.88), sd_si = std::sqrt(5000 * 0.086 * 0.914);
    EXPECT_LE(std::abs(flip_sp - 600.0), 3.0 * sd_sp) << "seed " << seed;
    EXPECT_LE(std::abs(flip_si - 430.0), 3.0 * sd_si) << "seed " << seed;
  }
}

TEST(LabelNoise, FlipMaskTwiceRestoresAndContentsUntouched) {
  SynthConfig cfg;
  cfg.n_clips = 200;
  cfg.clip_len = 3;
  std::vector<LabeledClip> clips;
  for (const auto& c : generate(cfg)) clips.push_back(c.meta);
  const auto original = clips;
  const auto mask = inject_label_noise(std::span<LabeledClip>(clips), NoiseSpec{0.3, 0.2, 9});
  ASSERT_GT(std::count(mask.begin(), mask.end(), true), 0);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    EXPECT_EQ(clips[i].label != original[i].label, mask[i]);
    LabeledClip relabeled = clips[i];
    relabeled.label = original[i].label;
    EXPECT_EQ(relabeled, original[i]);
  }
  apply_flip_mask(std::span<LabeledClip>(clips), mask);
  apply_flip_mask(std::span<LabeledClip>(clips), mask);
  apply_flip_mask(std::span<LabeledClip>(clips), mask);
  EXPECT_EQ(clips, original);
}

TEST(LabelNoise, SeededAndReproducible) {
  auto a = balanced_labels(100, 100), b = a;
  EXPECT_EQ(inject_label_noise(std::span<ClipLabel>(a), NoiseSpec{0.2, 0.2, 4}),
            inject_label_noise(std::span<ClipLabel>(b), NoiseSpec{0.2, 0.2, 4}));
}

// ---------------------------------------------------------------------------
// Flow rendering and files

TEST(RenderFlow, OneImagePerFramePair) {
  SynthConfig cfg;
  cfg.n_clips = 2;
  cfg.clip_len = 6;
  const auto clips = generate(cfg);
  RenderConfig r;
  r.size = 24;
  const auto frames = render_flow_clip(clips[0], r);
  ASSERT_EQ(frames.size(), 5u);
  for (const auto& f : frames) {
    EXPECT_EQ(f.rows, 24);
    EXPECT_EQ(f.cols, 24);
  }
}

TEST(RenderFlow, WrittenManifestLoadsAsDatasets) {
  SynthConfig cfg;
  cfg.n_clips = 4;
  cfg.clip_len = 5;
  auto clips = generate(cfg);
  RenderConfig r;
  std::vector<std::vector<FlowImage>> flows;
  for (const auto& c : clips) flows.push_back(render_flow_clip(c, r));
  const std::string dir = vvad::testing::scratch_dir("synth_flow");
  write_synthetic(dir, clips, &flows);
  const std::string manifest = dir + "/manifest.jsonl";
  const auto meta = read_clip_manifest(manifest);
  ASSERT_EQ(meta.size(), 4u);

  const auto seq = sequence_dataset<double>(manifest, meta, canonical_mean_face());
  const auto direct = sequence_dataset<double>(std::span<const SynthClip>(clips), canonical_mean_face());
  ASSERT_EQ(seq.sequences.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(seq.sequences[i], direct.sequences[i]);
    EXPECT_EQ(seq.labels[i], direct.labels[i]);
  }
  OfConvNetConfig ocfg;
  const auto fd = flow_dataset<double>(manifest, meta, ocfg);
  const auto fdirect = flow_dataset<double>(std::span<const SynthClip>(clips), r, ocfg);
  ASSERT_EQ(fd.clips.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    ASSERT_EQ(fd.clips[i].size(), 4u);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(fd.clips[i][k], fdirect.clips[i][k]);
  }
}
