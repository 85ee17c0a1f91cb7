#pragma once

// Clip-level metrics (positive = speaking) and the evaluation protocols:
// stratified k-fold cross validation, holdout on a manually labeled test set,
// cross-dataset transfer and the clean-vs-noisy training comparison.

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "vvad/annotation_pipeline.hpp"
#include "vvad/datasets.hpp"
#include "vvad/error.hpp"
#include "vvad/io.hpp"
#include "vvad/models.hpp"
#include "vvad/random.hpp"
#include "vvad/synthetic_data.hpp"
#include "vvad/training.hpp"

namespace vvad {

struct ConfusionCounts {
  long tp = 0, fn = 0, tn = 0, fp = 0;

  long speaking() const { return tp + fn; }
  long silent() const { return tn + fp; }
  long total() const { return tp + fn + tn + fp; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fn += o.fn;
    tn += o.tn;
    fp += o.fp;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts count(std::span<const ClipLabel> truth, std::span<const ClipLabel> predicted) {
  if (truth.size() != predicted.size()) throw ShapeMismatch("truth vs predictions");
  ConfusionCounts c;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] == ClipLabel::speaking, p = predicted[i] == ClipLabel::speaking;
    if (t) (p ? c.tp : c.fn)++;
    else (p ? c.fp : c.tn)++;
  }
  return c;
}

struct Rates {
  double tpr = 0.0, tnr = 0.0, acc = 0.0;
  bool operator==(const Rates&) const = default;
};

struct FoldResult {
  ConfusionCounts counts;
  Rates rates;
  bool operator==(const FoldResult&) const = default;
};

struct EvalReport {
  std::string protocol = "holdout";  // holdout | crossval | cross-dataset | noise-study
  std::string model;
  std::string source;  // training domain
  std::string target;  // test domain
  ConfusionCounts counts;  // pooled over folds
  Rates rates;             // from `counts`
  std::vector<FoldResult> per_fold;
  std::optional<Rates> mean, sigma;  // across folds
  bool operator==(const EvalReport&) const = default;
};

inline Rates rates_of(const ConfusionCounts& c) {
  if (c.speaking() == 0) throw EmptyClass("no speaking samples");
  if (c.silent() == 0) throw EmptyClass("no silent samples");
  if (c.tp < 0 || c.fn < 0 || c.tn < 0 || c.fp < 0) throw ValidationError("negative confusion count");
  Rates r;
  r.tpr = static_cast<double>(c.tp) / static_cast<double>(c.speaking());
  r.tnr = static_cast<double>(c.tn) / static_cast<double>(c.silent());
  r.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  return r;
}

inline EvalReport metrics(const ConfusionCounts& c) {
  EvalReport r;
  r.counts = c;
  r.rates = rates_of(c);
  return r;
}

/// Mean and sample (n - 1) standard deviation of per-fold rates; a single
/// fold has sigma 0.
inline EvalReport aggregate(std::span<const FoldResult> folds) {
  if (folds.empty()) throw EmptyInput("no folds to aggregate");
  EvalReport r;
  r.protocol = "crossval";
  r.per_fold.assign(folds.begin(), folds.end());
  for (const auto& f : folds) r.counts += f.counts;
  r.rates = rates_of(r.counts);
  // Moments shifted by the first fold.
  const auto stats = [&](auto get) {
    const double k = get(folds.front().rates), n = static_cast<double>(folds.size());
    double s = 0.0, s2 = 0.0;
    for (const auto& f : folds) {
      const double d = get(f.rates) - k;
      s += d;
      s2 += d * d;
    }
    const double var = folds.size() > 1 ? std::max(0.0, (s2 - s * s / n) / (n - 1.0)) : 0.0;
    return std::pair{k + s / n, std::sqrt(var)};
  };
  Rates mean, sd;
  std::tie(mean.tpr, sd.tpr) = stats([](const Rates& x) { return x.tpr; });
  std::tie(mean.tnr, sd.tnr) = stats([](const Rates& x) { return x.tnr; });
  std::tie(mean.acc, sd.acc) = stats([](const Rates& x) { return x.acc; });
  r.mean = mean;
  r.sigma = sd;
  return r;
}

// ---------------------------------------------------------------------------
// Serialization

inline ordered_json to_json(const ConfusionCounts& c) {
  return {{"tp", c.tp}, {"fn", c.fn}, {"tn", c.tn}, {"fp", c.fp}};
}

inline ordered_json to_json(const Rates& r) { return {{"tpr", r.tpr}, {"tnr", r.tnr}, {"acc", r.acc}}; }

inline ordered_json to_json(const EvalReport& r) {
  ordered_json j;
  j["protocol"] = r.protocol;
  j["model"] = r.model;
  j["source"] = r.source;
  j["target"] = r.target;
  j["counts"] = to_json(r.counts);
  j["tpr"] = r.rates.tpr;
  j["tnr"] = r.rates.tnr;
  j["acc"] = r.rates.acc;
  if (r.mean) j["mean"] = to_json(*r.mean);
  if (r.sigma) j["sigma"] = to_json(*r.sigma);
  if (!r.per_fold.empty()) {
    ordered_json folds = ordered_json::array();
    for (const auto& f : r.per_fold) {
      ordered_json fj = to_json(f.rates);
      fj["counts"] = to_json(f.counts);
      folds.push_back(std::move(fj));
    }
    j["per_fold"] = std::move(folds);
  }
  return j;
}

inline ConfusionCounts counts_from_json(const json& j) {
  return {j.at("tp").get<long>(), j.at("fn").get<long>(), j.at("tn").get<long>(), j.at("fp").get<long>()};
}

inline Rates rates_from_json(const json& j) {
  return {j.at("tpr").get<double>(), j.at("tnr").get<double>(), j.at("acc").get<double>()};
}

inline EvalReport report_from_json(const json& j) {
  try {
    EvalReport r;
    r.protocol = j.at("protocol").get<std::string>();
    r.model = j.value("model", std::string{});
    r.source = j.value("source", std::string{});
    r.target = j.value("target", std::string{});
    r.counts = counts_from_json(j.at("counts"));
    r.rates = rates_from_json(j);
    if (j.contains("mean")) r.mean = rates_from_json(j.at("mean"));
    if (j.contains("sigma")) r.sigma = rates_from_json(j.at("sigma"));
    for (const auto& f : j.value("per_fold", json::array()))
      r.per_fold.push_back({counts_from_json(f.at("counts")), rates_from_json(f)});
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad report: ") + e.what());
  }
}

/// One row per report: rates in percent, "mean±sigma" columns when folded.
inline std::string report_table_csv(std::span<const EvalReport> reports) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "model,protocol,source,target,TPR,TNR,ACC\n";
  for (const auto& r : reports) {
    os << r.model << ',' << r.protocol << ',' << r.source << ',' << r.target;
    const Rates& m = r.mean ? *r.mean : r.rates;
    const double vals[3] = {m.tpr, m.tnr, m.acc};
    const double sds[3] = {r.sigma ? r.sigma->tpr : 0.0, r.sigma ? r.sigma->tnr : 0.0,
                           r.sigma ? r.sigma->acc : 0.0};
    for (int k = 0; k < 3; ++k) {
      os << ',' << 100.0 * vals[k];
      if (r.sigma) os << "±" << 100.0 * sds[k];
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Protocols

/// Stratified k folds: each class is shuffled and dealt round-robin, the deal
/// continuing across classes. Test sets are disjoint and cover every clip.
inline std::vector<Split> kfold(std::span<const int> labels, int k, std::uint64_t seed) {
  if (k < 2) throw ValidationError("k must be >= 2");
  std::vector<std::vector<std::size_t>> by_class(2);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class.at(static_cast<std::size_t>(labels[i])).push_back(i);
  for (const auto& c : by_class)
    if (static_cast<int>(c.size()) < k)
      throw TooFewSamples("each class needs at least k = " + std::to_string(k) + " clips");
  Rng rng = make_rng(seed, "kfold");
  std::vector<std::vector<std::size_t>> tests(static_cast<std::size_t>(k));
  std::size_t deal = 0;
  for (auto& c : by_class) {
    std::shuffle(c.begin(), c.end(), rng);
    for (std::size_t i : c) tests[deal++ % static_cast<std::size_t>(k)].push_back(i);
  }
  std::vector<Split> out;
  for (auto& t : tests) {
    std::sort(t.begin(), t.end());
    Split s;
    s.test = t;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (!std::binary_search(t.begin(), t.end(), i)) s.train.push_back(i);
    out.push_back(std::move(s));
  }
  return out;
}

/// Scores predictions against a manually labeled test manifest. Predictions
/// are matched by clip id.
inline EvalReport holdout_eval(std::span<const LabeledClip> test, std::span<const Prediction> predictions) {
  if (test.empty()) throw TooFewSamples("empty test manifest");
  std::map<std::string, ClipLabel> predicted;
  for (const auto& p : predictions) predicted[p.clip_id] = p.label;
  std::vector<ClipLabel> truth, guess;
  for (const auto& c : test) {
    if (c.provenance != Provenance::manual)
      throw ProvenanceViolation("test clip " + c.clip_id() + " is auto-labeled");
    auto it = predicted.find(c.clip_id());
    if (it == predicted.end()) throw FormatError("no prediction for clip " + c.clip_id());
    truth.push_back(c.label);
    guess.push_back(it->second);
  }
  EvalReport r = metrics(count(truth, guess));
  r.protocol = "holdout";
  return r;
}

/// Predicts every clip of `data` with `net` and scores against `test`
/// (same order as `data`).
template <typename Net>
EvalReport holdout_eval(Net& net, const typename Net::Dataset& data, std::span<const LabeledClip> test) {
  if (test.empty()) throw TooFewSamples("empty test manifest");
  for (const auto& c : test)
    if (c.provenance != Provenance::manual)
      throw ProvenanceViolation("test clip " + c.clip_id() + " is auto-labeled");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  return holdout_eval(test, net.predict(data, idx));
}

template <typename Net>
EvalReport cross_dataset(Net& net, const typename Net::Dataset& data, std::span<const LabeledClip> test,
                         const std::string& source, const std::string& target) {
  EvalReport r = holdout_eval(net, data, test);
  r.protocol = "cross-dataset";
  r.source = source;
  r.target = target;
  return r;
}

/// Clip-level scoring of `net` on dataset indices `idx`.
template <typename Net>
FoldResult evaluate_indices(Net& net, const typename Net::Dataset& data, std::span<const std::size_t> idx) {
  std::vector<ClipLabel> truth, guess;
  for (const auto& p : net.predict(data, idx)) guess.push_back(p.label);
  for (std::size_t i : idx) truth.push_back(data.label(i) == 1 ? ClipLabel::speaking : ClipLabel::silent);
  FoldResult f;
  f.counts = count(truth, guess);
  f.rates = rates_of(f.counts);
  return f;
}

/// k-fold cross validation. `make_net(fold)` builds a fresh model; each fold
/// trains with the fold's own seed substream. Up to `jobs` folds run at once;
/// results do not depend on `jobs`.
template <typename MakeNet>
EvalReport crossval(MakeNet make_net, const auto& data, int k, const TrainConfig& tcfg, int jobs = 1) {
  const auto splits = kfold(data.labels, k, substream_seed(tcfg.seed, "crossval"));
  std::vector<FoldResult> folds(splits.size());
  auto run = [&](std::size_t f) {
    auto net = make_net(static_cast<int>(f));
    TrainConfig fold_cfg = tcfg;
    fold_cfg.seed = substream_seed(tcfg.seed, static_cast<std::uint64_t>(f));
    train(net, data, fold_cfg, splits[f].train);
    folds[f] = evaluate_indices(net, data, splits[f].test);
  };
  jobs = std::max(1, jobs);
  for (std::size_t start = 0; start < splits.size(); start += static_cast<std::size_t>(jobs)) {
    std::vector<std::future<void>> running;
    for (std::size_t f = start; f < std::min(splits.size(), start + static_cast<std::size_t>(jobs)); ++f)
      running.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async, run, f));
    for (auto& r : running) r.get();
  }
  return aggregate(folds);
}

struct Window {
  int start = 0, end = 0;  // [start, end)
  ClipLabel label = ClipLabel::silent;
  bool operator==(const Window&) const = default;
};

/// Non-overlapping windows of `length` frames tiling each maximal run of
/// constant speaking state from its start.
inline std::vector<Window> constant_state_subsequences(std::span<const ClipLabel> frame_labels, int length = 50) {
  if (length < 1) throw ValidationError("window length must be >= 1");
  std::vector<Window> out;
  std::size_t run_start = 0;
  for (std::size_t i = 1; i <= frame_labels.size(); ++i) {
    if (i < frame_labels.size() && frame_labels[i] == frame_labels[run_start]) continue;
    const int begin = static_cast<int>(run_start), run_len = static_cast<int>(i - run_start);
    for (int w = 0; w + length <= run_len; w += length)
      out.push_back({begin + w, begin + w + length, frame_labels[run_start]});
    run_start = i;
  }
  return out;
}

struct NoiseStudyResult {
  EvalReport clean, noisy;
  double gap = 0.0;  // clean acc - noisy acc
  std::size_t flipped = 0;
};

inline ordered_json to_json(const NoiseStudyResult& r) {
  return {{"clean", to_json(r.clean)}, {"noisy", to_json(r.noisy)}, {"gap", r.gap}, {"flipped", r.flipped}};
}

/// Trains twice from the same initialization, seed and validation split, once
/// on clean labels and once with `spec` noise injected into the training
/// labels, and scores both on the clean test indices.
template <typename MakeNet, typename Dataset>
NoiseStudyResult noise_study(MakeNet make_net, const Dataset& data, std::span<const std::size_t> train_idx,
                             std::span<const std::size_t> test_idx, const NoiseSpec& spec,
                             const TrainConfig& tcfg,
                             const std::function<void(const std::string& arm, const TrainHistory&)>& on_trained = {}) {
  spec.validate();
  std::vector<std::size_t> pool(train_idx.begin(), train_idx.end());
  const Split split = validation_split(data, tcfg, pool);
  NoiseStudyResult out;

  auto clean_net = make_net();
  const TrainHistory clean_history = train_split(clean_net, data, tcfg, split);
  if (on_trained) on_trained("clean", clean_history);
  const FoldResult clean = evaluate_indices(clean_net, data, test_idx);

  Dataset noisy_data = data;
  std::vector<ClipLabel> labels;
  for (std::size_t i : pool) labels.push_back(data.label(i) == 1 ? ClipLabel::speaking : ClipLabel::silent);
  const auto mask = inject_label_noise(std::span<ClipLabel>(labels), spec);
  for (std::size_t k = 0; k < pool.size(); ++k) noisy_data.labels[pool[k]] = labels[k] == ClipLabel::speaking;
  out.flipped = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));

  auto noisy_net = make_net();
  const TrainHistory noisy_history = train_split(noisy_net, noisy_data, tcfg, split);
  if (on_trained) on_trained("noisy", noisy_history);
  const FoldResult noisy = evaluate_indices(noisy_net, data, test_idx);

  out.clean = metrics(clean.counts);
  out.noisy = metrics(noisy.counts);
  out.clean.protocol = out.noisy.protocol = "noise-study";
  out.clean.target = out.noisy.target = "clean-test";
  out.clean.source = "clean-train";
  out.noisy.source = "noisy-train";
  out.gap = out.clean.rates.acc - out.noisy.rates.acc;
  return out;
}

}  // namespace vvad
