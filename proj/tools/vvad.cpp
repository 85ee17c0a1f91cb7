// vvad: command-line entry point.
//
// Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
// Every command writes a resolved-config snapshot (<out>.config.json, or
// config.json inside an output directory) and a run log next to its outputs.

#include <CLI11.hpp>

#include <atomic>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <mutex>
#include <thread>

#include "vvad/avad_gate.hpp"
#include "vvad/datasets.hpp"
#include "vvad/evaluation.hpp"
#include "vvad/face_model.hpp"
#include "vvad/synthetic_data.hpp"
#include "vvad/training.hpp"

namespace fs = std::filesystem;
using namespace vvad;

namespace {

// Runs fn(i) for i in [0, n) on up to `jobs` threads; the first exception is
// rethrown after all threads finish.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  const auto workers = static_cast<std::size_t>(std::clamp(jobs, 1, 256));
  if (workers == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

/// Flags that override one config section; only flags given on the command
/// line take part.
class FlagSet {
public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto holder = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *holder, help);
    setters_.push_back([opt, holder, key](json& j) {
      if (opt->count() > 0) j[key] = *holder;
    });
    return opt;
  }

  CLI::Option* add_flag(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    auto holder = std::make_shared<bool>(false);
    CLI::Option* opt = app->add_flag(flag, *holder, help);
    setters_.push_back([opt, holder, key](json& j) {
      if (opt->count() > 0) j[key] = *holder;
    });
    return opt;
  }

  json overrides() const {
    json j = json::object();
    for (const auto& s : setters_) s(j);
    return j;
  }

private:
  std::vector<std::function<void(json&)>> setters_;
};

struct Globals {
  std::string cfg_path;
  std::uint64_t seed = 0;
  int jobs = 1;
  bool verbose = false;
  CLI::Option* seed_opt = nullptr;
  json file = json::object();

  void load() {
    if (!cfg_path.empty()) {
      file = read_json(cfg_path);
      if (!file.is_object()) throw ValidationError(cfg_path + ": config must be a JSON object");
    }
    if (seed_opt->count() == 0 && file.contains("seed")) seed = file.at("seed").get<std::uint64_t>();
    if (jobs < 1) throw ValidationError("--jobs must be >= 1");
  }

  /// File section merged with flag overrides (flags > file > defaults).
  json section(const std::string& name, const FlagSet& flags) const {
    json j = file.value(name, json::object());
    if (!j.is_object()) throw ValidationError("config section '" + name + "' must be an object");
    j.update(flags.overrides());
    return j;
  }
};

/// Snapshot and log locations for an output file or directory.
struct RunFiles {
  std::string config;
  std::string log;
};

RunFiles run_files(const std::string& out, bool is_dir) {
  if (is_dir) {
    fs::create_directories(out);
    return {(fs::path(out) / "config.json").string(), (fs::path(out) / "run.log").string()};
  }
  ensure_parent_dir(out);
  return {out + ".config.json", out + ".log"};
}

struct Run {
  RunFiles files;
  RunLog log;
  ordered_json snapshot;

  Run(const std::string& command, const std::string& out, bool is_dir, const Globals& g)
      : files(run_files(out, is_dir)), log(files.log, g.verbose) {
    snapshot["command"] = command;
    snapshot["seed"] = g.seed;
    log.info("vvad " + command + " seed=" + std::to_string(g.seed) + " jobs=" + std::to_string(g.jobs));
  }

  void write_snapshot() { write_json(files.config, snapshot); }
};

// ---------------------------------------------------------------------------
// Model helpers

enum class Arch { land_lstm, of_convnet };

Arch parse_arch(const std::string& s) {
  if (s == kLandLstmArch) return Arch::land_lstm;
  if (s == kOfConvNetArch) return Arch::of_convnet;
  throw ValidationError("unknown arch '" + s + "' (expected land-lstm or of-convnet)");
}

ordered_json template_to_json(const MeanFace& f) {
  ordered_json pts = ordered_json::array();
  for (int i = 0; i < kNumLandmarks; ++i) pts.push_back({f.points(i, 0), f.points(i, 1), f.points(i, 2)});
  return pts;
}

MeanFace template_from_json(const json& j) {
  MeanFace f;
  if (j.size() != static_cast<std::size_t>(kNumLandmarks)) throw FormatError("template needs 68 points");
  for (int i = 0; i < kNumLandmarks; ++i)
    for (int k = 0; k < 3; ++k) f.points(i, k) = j.at(i).at(k).get<double>();
  return f;
}

MeanFace load_template(const std::string& path) {
  return path.empty() ? canonical_mean_face() : read_template(path);
}

std::vector<LabeledClip> load_manifest(const std::string& path) {
  auto clips = read_clip_manifest(path);
  if (clips.empty()) throw TooFewSamples(path + ": manifest has no clips");
  return clips;
}

struct ModelFlags {
  FlagSet train, land, ofc;
  std::string arch, manifest, template_path;
};

void add_model_flags(CLI::App* app, ModelFlags& m) {
  app->add_option("--arch", m.arch, "land-lstm or of-convnet")->required();
  app->add_option("--manifest", m.manifest, "training clip manifest (JSON lines)")->required();
  app->add_option("--template", m.template_path, "mean-face template file (default: built-in v1)");
  m.train.add<int>(app, "--epochs", "max_epochs", "maximum epochs");
  m.train.add<int>(app, "--batch-size", "batch_size", "mini-batch size");
  m.train.add<double>(app, "--lr", "learning_rate", "Adam learning rate");
  m.train.add<int>(app, "--patience", "patience", "early-stopping patience (epochs)");
  m.train.add<double>(app, "--val-fraction", "val_fraction", "validation share of the training set");
  m.land.add<int>(app, "--lstm-layers", "lstm_layers", "BiLSTM layers");
  m.land.add<int>(app, "--hidden", "hidden_units", "LSTM hidden units per direction");
  m.land.add<int>(app, "--fc", "fc_units", "time-shared FC units");
  m.land.add<double>(app, "--dropout", "dropout", "dropout after the FC layer");
  m.ofc.add<std::string>(app, "--backbone", "backbone", "tiny-cnn or vgg16-pretrained");
  m.ofc.add<int>(app, "--finetune-blocks", "finetune_blocks", "trailing conv blocks to train (-1 = all)");
  m.ofc.add<int>(app, "--input-size", "input_size", "network input side, px");
  m.ofc.add<std::string>(app, "--weights", "weights_path", "pretrained backbone weights");
  m.ofc.add<std::string>(app, "--vote", "vote", "majority or mean-score");
}

struct ResolvedModel {
  Arch arch = Arch::land_lstm;
  TrainConfig train;
  LandLstmConfig land;
  OfConvNetConfig ofc;
  MeanFace tmpl;
};

ResolvedModel resolve_model(const ModelFlags& m, const Globals& g, Run& run) {
  ResolvedModel r;
  r.arch = parse_arch(m.arch);
  r.train = train_config_from_json(g.section("train", m.train));
  r.train.seed = g.seed;
  run.snapshot["arch"] = m.arch;
  run.snapshot["train"] = to_json(r.train);
  if (r.arch == Arch::land_lstm) {
    r.land = land_lstm_config_from_json(g.section("land_lstm", m.land));
    r.tmpl = load_template(m.template_path);
    run.snapshot["land_lstm"] = to_json(r.land);
    run.snapshot["template"] = m.template_path.empty() ? std::string("builtin-") + kMeanFaceVersion : m.template_path;
  } else {
    r.ofc = of_convnet_config_from_json(g.section("of_convnet", m.ofc));
    run.snapshot["of_convnet"] = to_json(r.ofc);
  }
  run.snapshot["manifest"] = m.manifest;
  return r;
}

/// Calls fn(make_net, dataset) with the dataset built from `clips`.
template <typename Fn>
void with_model(const ResolvedModel& r, const std::string& manifest, std::span<const LabeledClip> clips,
                Fn&& fn) {
  if (r.arch == Arch::land_lstm) {
    auto data = sequence_dataset<float>(manifest, clips, r.tmpl);
    fn([&r] { return LandLstm<float>(r.land, r.train.seed); }, data);
  } else {
    auto data = flow_dataset<float>(manifest, clips, r.ofc);
    fn([&r] { return OfConvNet<float>(r.ofc, r.train.seed); }, data);
  }
}

std::string class_counts(std::span<const LabeledClip> clips) {
  const auto speaking = std::count_if(clips.begin(), clips.end(),
                                      [](const LabeledClip& c) { return c.label == ClipLabel::speaking; });
  return std::to_string(speaking) + " speaking / " + std::to_string(clips.size() - speaking) + " silent";
}

struct LoadedModel {
  Archive archive;
  Arch arch = Arch::land_lstm;
};

std::vector<Prediction> predict_manifest(const std::string& model_path, const std::string& manifest,
                                         std::span<const LabeledClip> clips) {
  const Archive a = read_archive(model_path);
  std::vector<std::size_t> idx(clips.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (archive_arch(a) == kLandLstmArch) {
    auto net = load_land_lstm(a, model_path);
    const MeanFace tmpl = a.header.contains("template_points") ? template_from_json(a.header.at("template_points"))
                                                               : canonical_mean_face();
    const auto data = sequence_dataset<float>(manifest, clips, tmpl);
    return net.predict(data, idx);
  }
  auto net = load_of_convnet(a, model_path);
  const auto data = flow_dataset<float>(manifest, clips, net.config());
  return net.predict(data, idx);
}

// ---------------------------------------------------------------------------
// Commands

struct PipelineArgs {
  std::string detections, vad, audio, shots, out;
  FlagSet pipeline, energy;
};

int cmd_pipeline(const PipelineArgs& a, const Globals& g) {
  Run run("pipeline", a.out, false, g);
  const PipelineConfig cfg = pipeline_config_from_json(g.section("pipeline", a.pipeline));
  cfg.validate();
  const EnergyVadConfig vad_cfg = energy_vad_config_from_json(g.section("energy_vad", a.energy));
  if (a.vad.empty() == a.audio.empty()) throw ValidationError("give exactly one of --vad or --audio");
  run.snapshot["pipeline"] = to_json(cfg);
  run.snapshot["energy_vad"] = to_json(vad_cfg);
  run.snapshot["inputs"] = {{"detections", a.detections}, {"vad", a.vad}, {"audio", a.audio}, {"shots", a.shots}};
  run.write_snapshot();

  std::map<std::string, std::vector<DetectionFrame>> frames;
  for (const auto& j : read_jsonl(a.detections))
    frames[j.value("video_id", std::string("video"))].push_back(detection_from_json(j));
  if (frames.empty()) throw EmptyInput(a.detections + ": no detections");

  // Lines without video_id apply to every video.
  std::map<std::string, std::vector<AudioVadSegment>> vad;
  std::vector<AudioVadSegment> vad_all;
  if (!a.vad.empty()) {
    for (const auto& j : read_jsonl(a.vad)) {
      const auto s = segment_from_json(j);
      if (j.contains("video_id")) vad[j.at("video_id").get<std::string>()].push_back(s);
      else vad_all.push_back(s);
    }
  } else {
    if (frames.size() != 1) throw ValidationError("--audio supports a single video");
    const PcmAudio pcm = read_wav(a.audio);
    const auto windows = split_windows(pcm.samples, pcm.sample_rate, vad_cfg.window_s);
    vad_all = energy_vad(windows, vad_cfg);
    run.log.info("energy VAD: " + std::to_string(vad_all.size()) + " segments from " + a.audio);
  }
  std::map<std::string, std::vector<ShotBoundary>> shots;
  std::vector<ShotBoundary> shots_all;
  if (!a.shots.empty())
    for (const auto& j : read_jsonl(a.shots)) {
      if (j.contains("video_id")) shots[j.at("video_id").get<std::string>()].push_back(shot_from_json(j));
      else shots_all.push_back(shot_from_json(j));
    }

  std::vector<std::string> ids;
  for (const auto& [id, _] : frames) ids.push_back(id);
  std::vector<std::vector<LabeledClip>> per_video(ids.size());
  parallel_for(ids.size(), g.jobs, [&](std::size_t i) {
    const auto& id = ids[i];
    auto segs = vad_all;
    if (auto it = vad.find(id); it != vad.end()) segs.insert(segs.end(), it->second.begin(), it->second.end());
    std::sort(segs.begin(), segs.end(),
              [](const AudioVadSegment& x, const AudioVadSegment& y) { return x.start_s < y.start_s; });
    validate_segments(segs);
    auto cuts = shots_all;
    if (auto it = shots.find(id); it != shots.end()) cuts.insert(cuts.end(), it->second.begin(), it->second.end());
    std::sort(cuts.begin(), cuts.end(),
              [](const ShotBoundary& x, const ShotBoundary& y) { return x.frame_idx < y.frame_idx; });
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    per_video[i] = run_pipeline(id, frames.at(id), segs, cuts, cfg);
  });
  std::vector<LabeledClip> clips;
  for (auto& v : per_video) clips.insert(clips.end(), v.begin(), v.end());
  write_clip_manifest(a.out, clips);
  run.log.info("wrote " + std::to_string(clips.size()) + " clips (" + class_counts(clips) + ") to " + a.out);
  return 0;
}

struct SynthArgs {
  std::string out;
  bool flow = false;
  FlagSet synth, render;
};

int cmd_synth(const SynthArgs& a, const Globals& g) {
  Run run("synth", a.out, true, g);
  SynthConfig cfg = synth_config_from_json(g.section("synth", a.synth));
  cfg.seed = g.seed;
  const json rj = g.section("render", a.render);
  RenderConfig render;
  render.size = rj.value("size", render.size);
  render.blob_sigma = rj.value("blob_sigma", render.blob_sigma);
  render.max_mag = rj.value("max_mag", render.max_mag);
  if (render.size < 8) throw ValidationError("render size must be >= 8");
  run.snapshot["synth"] = to_json(cfg);
  run.snapshot["flow"] = a.flow;
  run.snapshot["render"] = {{"size", render.size}, {"blob_sigma", render.blob_sigma}, {"max_mag", render.max_mag}};
  run.write_snapshot();

  std::vector<SynthClip> clips(static_cast<std::size_t>(cfg.n_clips));
  parallel_for(clips.size(), g.jobs, [&](std::size_t i) { clips[i] = generate_clip(cfg, static_cast<int>(i)); });
  std::vector<std::vector<FlowImage>> flows;
  if (a.flow) {
    flows.resize(clips.size());
    parallel_for(clips.size(), g.jobs, [&](std::size_t i) { flows[i] = render_flow_clip(clips[i], render); });
  }
  write_synthetic(a.out, clips, a.flow ? &flows : nullptr);
  run.log.info("wrote " + std::to_string(clips.size()) + " synthetic clips to " + a.out);
  return 0;
}

struct TrainArgs {
  ModelFlags model;
  std::string out;
};

int cmd_train(const TrainArgs& a, const Globals& g) {
  Run run("train", a.out, false, g);
  const ResolvedModel r = resolve_model(a.model, g, run);
  run.write_snapshot();
  const auto clips = load_manifest(a.model.manifest);
  run.log.info("training " + a.model.arch + " on " + std::to_string(clips.size()) + " clips (" +
               class_counts(clips) + ")");
  with_model(r, a.model.manifest, clips, [&](auto make_net, const auto& data) {
    auto net = make_net();
    const TrainHistory h = train(net, data, r.train);
    for (const auto& e : h.epochs)
      run.log.info("epoch " + std::to_string(e.epoch) + " train_loss=" + std::to_string(e.train_loss) +
                   " val_loss=" + std::to_string(e.val_loss) + " val_acc=" + std::to_string(e.val_accuracy));
    ordered_json extra = ordered_json::object();
    if (r.arch == Arch::land_lstm) extra["template_points"] = template_to_json(r.tmpl);
    save_model(a.out, net, r.train, h, extra);
    std::ofstream(a.out + ".history.csv") << history_csv(h);
    run.log.info("best epoch " + std::to_string(h.best_epoch) + "; model written to " + a.out);
  });
  return 0;
}

struct PredictArgs {
  std::string model, manifest, out;
};

int cmd_predict(const PredictArgs& a, const Globals& g) {
  Run run("predict", a.out, false, g);
  run.snapshot["model"] = a.model;
  run.snapshot["manifest"] = a.manifest;
  run.write_snapshot();
  const auto clips = load_manifest(a.manifest);
  const auto preds = predict_manifest(a.model, a.manifest, clips);
  std::vector<ordered_json> rows;
  for (const auto& p : preds) rows.push_back(to_json(p));
  write_jsonl(a.out, rows);
  run.log.info("wrote " + std::to_string(rows.size()) + " predictions to " + a.out);
  return 0;
}

struct EvalArgs {
  std::string model, predictions, manifest, out, csv, source, target;
};

void write_report(const std::string& out, const std::string& csv, const EvalReport& r) {
  write_json(out, to_json(r));
  if (!csv.empty()) std::ofstream(csv) << report_table_csv(std::span<const EvalReport>(&r, 1));
}

int cmd_eval(const EvalArgs& a, const Globals& g) {
  Run run("eval", a.out, false, g);
  if (a.model.empty() == a.predictions.empty()) throw ValidationError("give exactly one of --model or --predictions");
  run.snapshot["model"] = a.model;
  run.snapshot["predictions"] = a.predictions;
  run.snapshot["manifest"] = a.manifest;
  run.snapshot["source"] = a.source;
  run.snapshot["target"] = a.target;
  run.write_snapshot();
  const auto clips = read_clip_manifest(a.manifest);
  if (clips.empty()) throw TooFewSamples(a.manifest + ": empty test manifest");
  for (const auto& c : clips)
    if (c.provenance != Provenance::manual)
      throw ProvenanceViolation("test clip " + c.clip_id() + " is auto-labeled");
  std::vector<Prediction> preds;
  std::string model_name;
  if (!a.model.empty()) {
    preds = predict_manifest(a.model, a.manifest, clips);
    model_name = archive_arch(read_archive(a.model));
  } else {
    for (const auto& j : read_jsonl(a.predictions)) preds.push_back(prediction_from_json(j));
  }
  EvalReport r = holdout_eval(clips, preds);
  r.model = model_name;
  if (!a.source.empty() || !a.target.empty()) {
    r.protocol = "cross-dataset";
    r.source = a.source;
    r.target = a.target;
  }
  write_report(a.out, a.csv, r);
  run.log.info("acc=" + std::to_string(r.rates.acc) + " tpr=" + std::to_string(r.rates.tpr) +
               " tnr=" + std::to_string(r.rates.tnr) + "; report written to " + a.out);
  return 0;
}

struct CrossvalArgs {
  ModelFlags model;
  int k = 5;
  std::string out, csv;
};

int cmd_crossval(const CrossvalArgs& a, const Globals& g) {
  Run run("crossval", a.out, false, g);
  const ResolvedModel r = resolve_model(a.model, g, run);
  run.snapshot["k"] = a.k;
  run.write_snapshot();
  const auto clips = load_manifest(a.model.manifest);
  EvalReport report;
  with_model(r, a.model.manifest, clips, [&](auto make_net, const auto& data) {
    report = crossval([&](int) { return make_net(); }, data, a.k, r.train, g.jobs);
  });
  report.model = a.model.arch;
  write_report(a.out, a.csv, report);
  run.log.info("acc=" + std::to_string(report.mean->acc) + " +- " + std::to_string(report.sigma->acc) +
               " over " + std::to_string(a.k) + " folds; report written to " + a.out);
  return 0;
}

struct NoiseArgs {
  ModelFlags model;
  std::string test_manifest, out;
  FlagSet noise;
};

int cmd_noise_study(const NoiseArgs& a, const Globals& g) {
  Run run("noise-study", a.out, false, g);
  const ResolvedModel r = resolve_model(a.model, g, run);
  NoiseSpec spec{kMeasuredFlipSpeaking, kMeasuredFlipSilent, substream_seed(g.seed, "label_noise")};
  spec = noise_spec_from_json(g.section("noise", a.noise), spec);
  run.snapshot["noise"] = to_json(spec);
  run.snapshot["test_manifest"] = a.test_manifest;
  run.write_snapshot();

  auto train_clips = load_manifest(a.model.manifest);
  const auto test_clips = load_manifest(a.test_manifest);
  for (const auto& c : test_clips)
    if (c.provenance != Provenance::manual)
      throw ProvenanceViolation("test clip " + c.clip_id() + " is auto-labeled");
  // One dataset: training clips, then test clips. Test paths are made
  // relative to the training manifest's directory.
  std::vector<LabeledClip> all = train_clips;
  for (auto c : test_clips) {
    if (!c.landmarks.empty()) c.landmarks = fs::absolute(resolve_relative(a.test_manifest, c.landmarks)).string();
    if (!c.flow.empty()) c.flow = fs::absolute(resolve_relative(a.test_manifest, c.flow)).string();
    all.push_back(std::move(c));
  }
  std::vector<std::size_t> train_idx(train_clips.size()), test_idx(test_clips.size());
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::iota(test_idx.begin(), test_idx.end(), train_clips.size());

  NoiseStudyResult result;
  with_model(r, a.model.manifest, all, [&](auto make_net, const auto& data) {
    result = noise_study(make_net, data, train_idx, test_idx, spec, r.train,
                         [&](const std::string& arm, const TrainHistory& h) {
                           run.log.info(arm + " arm: " + std::to_string(h.epochs.size()) + " epochs, best " +
                                        std::to_string(h.best_epoch));
                         });
  });
  result.clean.model = result.noisy.model = a.model.arch;
  ordered_json j = to_json(result);
  j["noise"] = to_json(spec);
  write_json(a.out, j);
  run.log.info("flipped " + std::to_string(result.flipped) + " training labels; clean acc=" +
               std::to_string(result.clean.rates.acc) + " noisy acc=" + std::to_string(result.noisy.rates.acc) +
               " gap=" + std::to_string(result.gap));
  return 0;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out, model, history_out;
};

int cmd_report(const ReportArgs& a, const Globals& g) {
  if (a.inputs.empty() && a.model.empty()) throw ValidationError("give --in reports and/or --model");
  const std::string anchor = !a.out.empty() ? a.out : a.history_out;
  if (anchor.empty()) throw ValidationError("give --out and/or --history-out");
  Run run("report", anchor, false, g);
  run.snapshot["inputs"] = a.inputs;
  run.snapshot["model"] = a.model;
  run.write_snapshot();
  if (!a.inputs.empty()) {
    if (a.out.empty()) throw ValidationError("--in needs --out");
    std::vector<EvalReport> reports;
    for (const auto& path : a.inputs) {
      const json j = read_json(path);
      if (j.contains("clean") && j.contains("noisy")) {
        reports.push_back(report_from_json(j.at("clean")));
        reports.push_back(report_from_json(j.at("noisy")));
      } else {
        reports.push_back(report_from_json(j));
      }
    }
    std::ofstream(a.out) << report_table_csv(reports);
    run.log.info("table of " + std::to_string(reports.size()) + " reports written to " + a.out);
  }
  if (!a.model.empty()) {
    if (a.history_out.empty()) throw ValidationError("--model needs --history-out");
    const Archive ar = read_archive(a.model);
    std::ofstream(a.history_out) << history_csv(history_from_json(ar.header.at("history")));
    run.log.info("history written to " + a.history_out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vvad: visual voice activity detection toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--cfg", g.cfg_path, "JSON config file (flags override its values)");
  g.seed_opt = app.add_option("--seed", g.seed, "root random seed");
  app.add_option("--jobs", g.jobs, "parallel workers for per-clip / per-fold work");
  app.add_flag("-v,--verbose", g.verbose, "echo the run log to stderr");

  std::function<int()> action;

  PipelineArgs pa;
  auto* pipeline = app.add_subcommand("pipeline", "label face tracks as speaking/silent clips");
  pipeline->add_option("--detections", pa.detections, "face detections (JSON lines)")->required();
  pipeline->add_option("--vad", pa.vad, "audio VAD segments (JSON lines)");
  pipeline->add_option("--audio", pa.audio, "PCM WAV for the built-in energy VAD");
  pipeline->add_option("--shots", pa.shots, "shot boundaries (JSON lines)");
  pipeline->add_option("--out", pa.out, "clip manifest to write")->required();
  pa.pipeline.add<int>(pipeline, "--clip-len", "clip_len", "clip length, frames");
  pa.pipeline.add<double>(pipeline, "--speech-cov", "speech_cov", "speech coverage threshold");
  pa.pipeline.add<double>(pipeline, "--fps", "fps", "video frame rate");
  pa.pipeline.add<int>(pipeline, "--min-len", "min_len", "minimum shot/clip length, frames");
  pa.pipeline.add<int>(pipeline, "--max-len", "max_len", "maximum clip length, frames");
  pa.pipeline.add<double>(pipeline, "--iou", "iou_threshold", "NMS IoU threshold");
  pa.pipeline.add<double>(pipeline, "--dist-threshold", "dist_threshold", "association gate, px (0 = auto)");
  pa.pipeline.add<double>(pipeline, "--process-noise", "process_noise", "Kalman process noise");
  pa.pipeline.add<double>(pipeline, "--measurement-noise", "measurement_noise", "Kalman measurement noise");
  pa.pipeline.add_flag(pipeline, "--single-face-silent", "single_face_silent", "silent clips only with one face");
  pa.pipeline.add<int>(pipeline, "--num-frames", "num_frames", "video length, frames");
  pa.pipeline.add<int>(pipeline, "--image-w", "image_w", "frame width, px");
  pa.pipeline.add<int>(pipeline, "--image-h", "image_h", "frame height, px");
  pa.energy.add<double>(pipeline, "--vad-threshold-db", "threshold_db", "energy VAD threshold above noise floor");
  pa.energy.add<int>(pipeline, "--vad-hangover", "hangover_windows", "energy VAD hangover windows");
  pipeline->callback([&] { action = [&] { return cmd_pipeline(pa, g); }; });

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate synthetic landmark (and flow) clips");
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_flag("--flow", sa.flow, "also render flow filmstrips");
  sa.synth.add<int>(synth, "--n", "n_clips", "number of clips (even)");
  sa.synth.add<int>(synth, "--clip-len", "clip_len", "frames per clip");
  sa.synth.add<double>(synth, "--speak-amp", "speak_amp", "mouth-opening amplitude, template units");
  sa.synth.add<double>(synth, "--speak-freq", "speak_freq", "mouth oscillation frequency, Hz");
  sa.synth.add<std::string>(synth, "--head-motion", "head_motion", "none or rigid");
  sa.synth.add<double>(synth, "--noise-sigma", "noise_sigma", "landmark jitter, template units");
  sa.synth.add<std::string>(synth, "--source-id", "source_id", "source id written to the manifest");
  sa.render.add<int>(synth, "--flow-size", "size", "flow crop side, px");
  sa.render.add<double>(synth, "--flow-max-mag", "max_mag", "flow color scale, px (0 = per frame)");
  synth->callback([&] { action = [&] { return cmd_synth(sa, g); }; });

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "train a classifier");
  add_model_flags(trainc, ta.model);
  trainc->add_option("--out", ta.out, "model file to write")->required();
  trainc->callback([&] { action = [&] { return cmd_train(ta, g); }; });

  PredictArgs pr;
  auto* predict = app.add_subcommand("predict", "predict clip labels");
  predict->add_option("--model", pr.model, "trained model file")->required();
  predict->add_option("--manifest", pr.manifest, "clip manifest")->required();
  predict->add_option("--out", pr.out, "predictions to write (JSON lines)")->required();
  predict->callback([&] { action = [&] { return cmd_predict(pr, g); }; });

  EvalArgs ea;
  auto* evalc = app.add_subcommand("eval", "holdout / cross-dataset evaluation on a manual test set");
  evalc->add_option("--model", ea.model, "trained model file");
  evalc->add_option("--predictions", ea.predictions, "precomputed predictions (JSON lines)");
  evalc->add_option("--manifest", ea.manifest, "manually labeled test manifest")->required();
  evalc->add_option("--out", ea.out, "report to write (JSON)")->required();
  evalc->add_option("--csv", ea.csv, "also write a CSV table");
  evalc->add_option("--source", ea.source, "training domain name (cross-dataset)");
  evalc->add_option("--target", ea.target, "test domain name (cross-dataset)");
  evalc->callback([&] { action = [&] { return cmd_eval(ea, g); }; });

  CrossvalArgs ca;
  auto* cv = app.add_subcommand("crossval", "stratified k-fold cross validation");
  add_model_flags(cv, ca.model);
  cv->add_option("--k", ca.k, "number of folds");
  cv->add_option("--out", ca.out, "report to write (JSON)")->required();
  cv->add_option("--csv", ca.csv, "also write a CSV table");
  cv->callback([&] { action = [&] { return cmd_crossval(ca, g); }; });

  NoiseArgs na;
  auto* noise = app.add_subcommand("noise-study", "clean vs label-noise training on a clean test set");
  add_model_flags(noise, na.model);
  noise->add_option("--test-manifest", na.test_manifest, "manually labeled test manifest")->required();
  noise->add_option("--out", na.out, "report to write (JSON)")->required();
  na.noise.add<double>(noise, "--flip-speaking", "flip_speaking", "speaking->silent flip rate");
  na.noise.add<double>(noise, "--flip-silent", "flip_silent", "silent->speaking flip rate");
  noise->callback([&] { action = [&] { return cmd_noise_study(na, g); }; });

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "tabulate reports / export training history");
  report->add_option("--in", ra.inputs, "report JSON files");
  report->add_option("--out", ra.out, "CSV table to write");
  report->add_option("--model", ra.model, "model file whose history to export");
  report->add_option("--history-out", ra.history_out, "per-epoch CSV to write");
  report->callback([&] { action = [&] { return cmd_report(ra, g); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    g.load();
    return action();
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.is_validation() ? 1 : 2;
  } catch (const json::exception& e) {
    std::cerr << "error: bad config or input value: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
