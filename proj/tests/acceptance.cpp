// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "oracles/oracles.hpp"
#include "test_util.hpp"
#include "vvad/datasets.hpp"
#include "vvad/evaluation.hpp"
#include "vvad/face_model.hpp"
#include "vvad/synthetic_data.hpp"
#include "vvad/training.hpp"

using namespace vvad;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::ostringstream note;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      note << " [violated: " << what << "]";
    }
  }
};

int failures = 0;

void report(int n, const std::string& name, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.pass = false;
    o.note << " [exception: " << e.what() << "]";
  }
  if (!o.pass) ++failures;
  std::printf("criterion %2d %-28s %s %s (%.1f s)\n", n, name.c_str(), o.pass ? "PASS" : "FAIL", o.note.str().c_str(),
              seconds_since(t0));
  std::fflush(stdout);
}

LandmarkPoints posed(const LandmarkPoints& p, double s, const Eigen::Matrix3d& r, const Eigen::Vector3d& t) {
  return (s * p * r.transpose()).rowwise() + t.transpose();
}

double max_abs(const LandmarkPoints& a, const LandmarkPoints& b) { return (a - b).cwiseAbs().maxCoeff(); }

double rmse(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s / static_cast<double>(a.size()));
}

// Worst relative error of central differences against the stored gradients.
template <typename LossFn>
double worst_gradient_error(const std::vector<nn::Tensor<double>*>& params, LossFn loss, std::mt19937_64& rng,
                            int per_tensor = 12, double h = 1e-4) {
  double worst = 0.0;
  for (auto* p : params) {
    if (!p->trainable) continue;
    std::uniform_int_distribution<Eigen::Index> pick(0, p->value.size() - 1);
    for (int k = 0; k < std::min<Eigen::Index>(per_tensor, p->value.size()); ++k) {
      const Eigen::Index i = pick(rng);
      const double x0 = p->value.data()[i];
      p->value.data()[i] = x0 + h;
      const double lp = loss();
      p->value.data()[i] = x0 - h;
      const double lm = loss();
      p->value.data()[i] = x0;
      const double numeric = (lp - lm) / (2.0 * h), analytic = p->grad.data()[i];
      worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-7}));
    }
  }
  return worst;
}

nn::Mat<double> random_matrix(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> g(0.0, 1.0);
  nn::Mat<double> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(VVAD_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<std::size_t> range(std::size_t from, std::size_t to) {
  std::vector<std::size_t> v(to - from);
  std::iota(v.begin(), v.end(), from);
  return v;
}

// ---------------------------------------------------------------------------

void rigid_invariance(Outcome& o) {
  const auto t0 = Clock::now();
  SynthConfig cfg;
  cfg.clip_len = 20;
  cfg.seed = 101;
  const LandmarkSequence x = generate_clip(cfg, 0).landmarks;
  const LandmarkSequence fx = frontalize(x, canonical_mean_face());
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Eigen::Matrix3d r = vvad::testing::random_rotation(rng);
    const Eigen::Vector3d t = vvad::testing::random_translation(rng, 500.0);
    LandmarkSequence y = x;
    for (auto& f : y.frames) f.points = posed(f.points, 1.0, r, t);
    const LandmarkSequence fy = frontalize(y, canonical_mean_face());
    for (std::size_t i = 0; i < fx.size(); ++i) worst = std::max(worst, max_abs(fx.frames[i].points, fy.frames[i].points));
  }
  const double dt = seconds_since(t0);
  o.note << "max element error " << worst << ", " << dt << " s for 100 x 20 frames";
  o.require(worst <= 1e-6, "error <= 1e-6");
  o.require(dt < 10.0, "runtime < 10 s");
}

// Oracle over seeds 0-99: max noisy residual 0.01907.
void procrustes_recovery(Outcome& o) {
  const MeanFace& m = canonical_mean_face();
  std::mt19937_64 rng(2);
  double worst_rot = 0.0;
  for (int k = 0; k < 100; ++k) {
    const Eigen::Matrix3d r0 = vvad::testing::random_rotation(rng);
    const RigidTransform t = fit_rigid(posed(m.points, 1.0, r0, vvad::testing::random_translation(rng, 5.0)), m.points);
    worst_rot = std::max(worst_rot, (t.rotation - r0.transpose()).norm());
  }
  double worst_res = 0.0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 nrng(static_cast<std::uint64_t>(seed));
    std::normal_distribution<double> g(0.0, 0.01);
    LandmarkPoints p = m.points;
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] += g(nrng);
    worst_res = std::max(worst_res, rms_residual(p, m.points, fit_rigid(p, m.points)));
  }
  o.note << "max Frobenius error " << worst_rot << ", max noisy residual " << worst_res;
  o.require(worst_rot <= 1e-6, "rotation within 1e-6");
  o.require(worst_res <= 0.02, "residual <= 0.02");
}

void pipeline_oracle(Outcome& o) {
  std::mt19937_64 rng(3);
  int scenarios = 0, clips = 0, mismatches = 0;
  while (scenarios < 50) {
    const oracle::Scenario s = oracle::random_scenario(rng);
    if (s.lives.size() > 5 || s.num_frames > 300) continue;
    const oracle::ScenarioInputs in = oracle::to_inputs(s);
    const auto got = oracle::strip(label_clips(in.tracks, in.vad, in.shots, in.cfg, "v"));
    const auto want = oracle::label_windows(s);
    if (!(got == want)) ++mismatches;
    clips += static_cast<int>(want.size());
    ++scenarios;
  }
  const std::string dir = vvad::testing::source_path("tests/data/pipeline/");
  std::vector<DetectionFrame> frames;
  std::vector<AudioVadSegment> vad;
  std::vector<ShotBoundary> shots;
  for (const auto& j : read_jsonl(dir + "detections.jsonl")) frames.push_back(detection_from_json(j));
  for (const auto& j : read_jsonl(dir + "vad.jsonl")) vad.push_back(segment_from_json(j));
  for (const auto& j : read_jsonl(dir + "shots.jsonl")) shots.push_back(shot_from_json(j));
  const PipelineConfig cfg = pipeline_config_from_json(read_json(dir + "config.json").at("pipeline"));
  const std::string out = vvad::testing::scratch_dir("golden") + "/manifest.jsonl";
  write_clip_manifest(out, run_pipeline("fixture", frames, vad, shots, cfg));
  const bool golden = vvad::testing::slurp(out) == vvad::testing::slurp(dir + "golden_manifest.jsonl");
  o.note << scenarios << " scenarios, " << clips << " labeled windows, " << mismatches << " mismatches; golden "
         << (golden ? "identical" : "differs");
  o.require(mismatches == 0, "oracle equality");
  o.require(golden, "golden fixture");
}

void nms_oracle(Outcome& o) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> n(0, 40);
  std::uniform_real_distribution<double> thr(0.05, 0.95);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto boxes = oracle::random_boxes(rng, n(rng));
    const double t = thr(rng);
    if (nms(boxes, t) != oracle::nms(boxes, t)) ++mismatches;
  }
  o.note << "1000 sets, " << mismatches << " mismatches";
  o.require(mismatches == 0, "exact match");
}

// Oracle over seeds 0-99: max ratio 0.5045, mean 0.3966.
void kalman(Outcome& o) {
  std::vector<double> constant(60, 17.5), linear;
  for (int t = 0; t < 60; ++t) linear.push_back(-3.0 + 1.75 * t);
  double pass_err = 0.0;
  for (const auto* z : {&constant, &linear}) {
    const auto s = rts_smooth(*z, 1.0, 9.0);
    for (std::size_t i = 0; i < s.size(); ++i) pass_err = std::max(pass_err, std::abs(s[i] - (*z)[i]));
  }
  double worst_ratio = 0.0;
  for (int seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(static_cast<std::uint64_t>(seed));
    std::normal_distribution<double> g(0.0, 3.0);
    std::vector<double> truth, z;
    for (int t = 0; t < 100; ++t) {
      truth.push_back(10.0 + 2.5 * t);
      z.push_back(truth.back() + g(rng));
    }
    worst_ratio = std::max(worst_ratio, rmse(rts_smooth(z, 1.0, 9.0), truth) / rmse(z, truth));
  }
  o.note << "pass-through error " << pass_err << ", worst RMSE ratio " << worst_ratio << " over 100 seeds";
  o.require(pass_err <= 1e-6, "pass-through <= 1e-6");
  o.require(worst_ratio <= 0.6, "ratio <= 0.6");
}

void gradients(Outcome& o) {
  std::mt19937_64 rng(6);
  LandLstmConfig lc;
  lc.input_dim = 6;
  lc.hidden_units = 5;
  lc.fc_units = 4;
  lc.dropout = 0.0;
  LandLstm<double> lstm(lc, 7);
  const nn::Mat<double> s0 = random_matrix(rng, 6, 5), s1 = random_matrix(rng, 6, 3);
  const std::vector<const nn::Mat<double>*> seqs{&s0, &s1};
  const SequenceBatch<double> b = make_sequence_batch<double>(seqs);
  const std::vector<int> labels{1, 0};
  for (auto* p : lstm.parameters()) p->zero_grad();
  nn::Mat<double> d;
  nn::softmax_cross_entropy<double>(lstm.forward(b, true), labels, &d);
  lstm.backward(d);
  const double e_lstm = worst_gradient_error(
      lstm.parameters(), [&] { return nn::softmax_cross_entropy<double>(lstm.forward(b, true), labels, nullptr); }, rng);

  OfConvNetConfig oc;
  oc.blocks = {{3}, {4, 4}};
  oc.input_size = 8;
  OfConvNet<double> cnn(oc, 2);
  std::vector<nn::Image<double>> frames;
  for (int i = 0; i < 3; ++i) frames.push_back(random_matrix(rng, 3, 64));
  const std::vector<int> flabels{1, 0, 1};
  for (auto* p : cnn.parameters()) p->zero_grad();
  nn::softmax_cross_entropy<double>(cnn.forward(frames, true), flabels, &d);
  cnn.backward(d);
  const double e_cnn = worst_gradient_error(
      cnn.parameters(), [&] { return nn::softmax_cross_entropy<double>(cnn.forward(frames, true), flabels, nullptr); },
      rng);
  o.note << "worst relative error Land-LSTM " << e_lstm << ", tiny-cnn " << e_cnn;
  o.require(e_lstm <= 1e-3 && e_cnn <= 1e-3, "relative error <= 1e-3");
}

// Criteria 7 and 8 share one noise study: its clean arm is the Land-LSTM
// separability run.
NoiseStudyResult land_lstm_study(double& clean_seconds, TrainHistory& clean_history) {
  SynthConfig train_cfg;
  train_cfg.seed = 1;
  SynthConfig test_cfg = train_cfg;
  test_cfg.n_clips = 400;
  test_cfg.seed = 2;
  auto clips = generate(train_cfg);
  const auto test = generate(test_cfg);
  clips.insert(clips.end(), test.begin(), test.end());
  const auto data = sequence_dataset<float>(std::span<const SynthClip>(clips), canonical_mean_face());
  TrainConfig tcfg;
  tcfg.max_epochs = 30;
  tcfg.seed = 4;
  const auto train_idx = range(0, 2000), test_idx = range(2000, 2400);
  const auto t0 = Clock::now();
  return noise_study([] { return LandLstm<float>(LandLstmConfig{}, 3); }, data, train_idx, test_idx,
                     NoiseSpec{kMeasuredFlipSpeaking, kMeasuredFlipSilent, 5}, tcfg,
                     [&](const std::string& arm, const TrainHistory& h) {
                       if (arm == "clean") {
                         clean_seconds = seconds_since(t0);
                         clean_history = h;
                       }
                     });
}

double of_convnet_accuracy() {
  SynthConfig train_cfg;
  train_cfg.n_clips = 800;
  train_cfg.clip_len = 20;
  train_cfg.seed = 11;
  SynthConfig test_cfg = train_cfg;
  test_cfg.n_clips = 200;
  test_cfg.seed = 12;
  RenderConfig render;
  render.max_mag = 1.0;
  const OfConvNetConfig ocfg;
  const auto train_clips = generate(train_cfg), test_clips = generate(test_cfg);
  const auto train_data = flow_dataset<float>(std::span<const SynthClip>(train_clips), render, ocfg);
  const auto test_data = flow_dataset<float>(std::span<const SynthClip>(test_clips), render, ocfg);
  OfConvNet<float> net(ocfg, 3);
  TrainConfig tcfg;
  tcfg.max_epochs = 30;
  tcfg.seed = 4;
  train(net, train_data, tcfg);
  return evaluate_indices(net, test_data, range(0, test_data.size())).rates.acc;
}

void voting_and_metrics(Outcome& o) {
  int vote_errors = 0;
  for (int bits = 0; bits < 8; ++bits) {
    std::vector<ClipLabel> v;
    int speaking = 0;
    for (int k = 0; k < 3; ++k) {
      const bool s = (bits >> k) & 1;
      speaking += s;
      v.push_back(s ? ClipLabel::speaking : ClipLabel::silent);
    }
    vote_errors += vote(v) != (speaking >= 2 ? ClipLabel::speaking : ClipLabel::silent);
  }
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<long> n(0, 1000);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const ConfusionCounts c{n(rng) + 1, n(rng), n(rng), n(rng) + 1};
    const Rates r = metrics(c).rates;
    const double p = static_cast<double>(c.speaking()), q = static_cast<double>(c.silent());
    worst = std::max(worst, std::abs(r.acc - (p * r.tpr + q * r.tnr) / (p + q)));
  }
  const ConfusionCounts c{41, 4, 50, 5};
  const std::vector<FoldResult> folds(5, FoldResult{c, rates_of(c)});
  const EvalReport agg = aggregate(folds);
  const double sigma = std::max({agg.sigma->tpr, agg.sigma->tnr, agg.sigma->acc});
  o.note << vote_errors << "/8 vote errors, identity error " << worst << ", identical-fold sigma " << sigma;
  o.require(vote_errors == 0, "vote table");
  o.require(worst <= 1e-12, "metrics identity");
  o.require(sigma == 0.0, "zero sigma");
}

void determinism(Outcome& o) {
  const std::string root = vvad::testing::scratch_dir("determinism");
  std::vector<std::string> reports, models;
  for (const std::string run : {"a", "b"}) {
    const std::string d = root + "/" + run;
    int rc = run_cli("--seed 42 synth --n 60 --clip-len 15 --out " + d + "/train");
    rc |= run_cli("--seed 43 synth --n 40 --clip-len 15 --out " + d + "/test");
    rc |= run_cli("--seed 42 train --arch land-lstm --manifest " + d +
                  "/train/manifest.jsonl --lstm-layers 1 --hidden 8 --fc 8 --epochs 3 --batch-size 16 --out " + d +
                  "/model.vvad");
    rc |= run_cli("--seed 42 eval --model " + d + "/model.vvad --manifest " + d + "/test/manifest.jsonl --out " + d +
                  "/report.json");
    o.require(rc == 0, "run " + run + " exit status 0");
    reports.push_back(vvad::testing::slurp(d + "/report.json"));
    models.push_back(vvad::testing::slurp(d + "/model.vvad"));
  }
  const bool same = !reports[0].empty() && reports[0] == reports[1];
  o.note << "reports " << (same ? "byte-identical" : "differ") << " (" << reports[0].size() << " bytes), models "
         << (models[0] == models[1] ? "byte-identical" : "differ");
  o.require(same, "identical reports");
}

}  // namespace

int main() {
  report(1, "rigid invariance", rigid_invariance);
  report(2, "procrustes recovery", procrustes_recovery);
  report(3, "pipeline oracle", pipeline_oracle);
  report(4, "nms oracle", nms_oracle);
  report(5, "kalman smoother", kalman);
  report(6, "gradient checks", gradients);

  double clean_seconds = 0.0;
  TrainHistory clean_history;
  std::optional<NoiseStudyResult> study;
  std::string study_error;
  try {
    study = land_lstm_study(clean_seconds, clean_history);
  } catch (const std::exception& e) {
    study_error = e.what();
  }
  report(7, "synthetic separability", [&](Outcome& o) {
    o.require(study.has_value(), "noise study ran: " + study_error);
    if (!study) return;
    const double of_acc = of_convnet_accuracy();
    o.note << "Land-LSTM test acc " << study->clean.rates.acc << " after " << clean_history.epochs.size()
           << " epochs in " << clean_seconds << " s; OF-ConvNet tiny-cnn test acc " << of_acc;
    o.require(study->clean.rates.acc >= 0.95, "Land-LSTM >= 0.95");
    o.require(clean_history.epochs.size() <= 30, "<= 30 epochs");
    o.require(clean_seconds < 600.0, "< 10 min");
    o.require(of_acc >= 0.90, "OF-ConvNet >= 0.90");
  });
  report(8, "noise robustness", [&](Outcome& o) {
    o.require(study.has_value(), "noise study ran: " + study_error);
    if (!study) return;
    o.note << "flipped " << study->flipped << " of 2000 training labels; clean acc " << study->clean.rates.acc
           << ", noisy acc " << study->noisy.rates.acc << ", gap " << 100.0 * study->gap << " pp";
    o.require(study->gap <= 0.05, "gap <= 5 pp");
  });
  report(9, "voting and metrics", voting_and_metrics);
  report(10, "determinism", determinism);

  std::printf("%d of 10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
