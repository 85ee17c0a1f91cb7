#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vvad/checkpoint.hpp"
#include "vvad/error.hpp"
#include "vvad/io.hpp"
#include "vvad/models.hpp"
#include "vvad/nn.hpp"
#include "vvad/random.hpp"

namespace vvad {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 64;
  double val_fraction = 0.20;
  int patience = 7;
  int max_epochs = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    if (patience < 1) throw ValidationError("patience must be >= 1");
    if (max_epochs < 1) throw ValidationError("max_epochs must be >= 1");
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
      throw ValidationError("val_fraction must lie in (0, 1)");
    if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  }
};

inline ordered_json to_json(const TrainConfig& c) {
  return {{"optimizer", "adam"},       {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size}, {"val_fraction", c.val_fraction},
          {"patience", c.patience},     {"max_epochs", c.max_epochs},
          {"seed", c.seed}};
}

inline TrainConfig train_config_from_json(const json& j, TrainConfig c = {}) {
  if (j.contains("optimizer") && j.at("optimizer") != "adam")
    throw ValidationError("only the adam optimizer is supported");
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.patience = j.value("patience", c.patience);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

/// Stops after `patience` consecutive epochs without a strictly lower
/// validation loss. Epochs are 1-based.
class EarlyStopping {
public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Records one epoch; returns true when training should stop.
  bool update(double val_loss) {
    ++epoch_;
    if (val_loss < best_loss_) {
      best_loss_ = val_loss;
      best_epoch_ = epoch_;
      improved_ = true;
    } else {
      improved_ = false;
    }
    return epoch_ - best_epoch_ >= patience_;
  }

  bool improved() const { return improved_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }
  int epoch() const { return epoch_; }

private:
  int patience_;
  int epoch_ = 0;
  int best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
  bool improved_ = false;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  int best_epoch = 0;
  bool stopped_early = false;
  bool operator==(const TrainHistory&) const = default;
};

inline ordered_json to_json(const TrainHistory& h) {
  ordered_json epochs = ordered_json::array();
  for (const auto& e : h.epochs)
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"val_loss", e.val_loss},
                      {"val_accuracy", e.val_accuracy}});
  return {{"epochs", epochs}, {"best_epoch", h.best_epoch}, {"stopped_early", h.stopped_early}};
}

inline TrainHistory history_from_json(const json& j) {
  TrainHistory h;
  for (const auto& e : j.at("epochs"))
    h.epochs.push_back({e.at("epoch"), e.at("train_loss"), e.at("val_loss"), e.at("val_accuracy")});
  h.best_epoch = j.at("best_epoch");
  h.stopped_early = j.at("stopped_early");
  return h;
}

/// Plot-ready per-epoch table.
inline std::string history_csv(const TrainHistory& h) {
  std::ostringstream os;
  os << std::setprecision(10) << "epoch,train_loss,val_loss,val_accuracy\n";
  for (const auto& e : h.epochs)
    os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_accuracy << '\n';
  return os.str();
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified, seeded holdout: round(fraction * class size) clips of each
/// class (at least one when the class has two or more) go to `test`.
inline Split stratified_split(const std::vector<int>& labels, double fraction, std::uint64_t seed) {
  Split s;
  Rng rng(seed);
  for (int cls : {0, 1}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == cls) idx.push_back(i);
    std::shuffle(idx.begin(), idx.end(), rng);
    auto n_test = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(idx.size())));
    if (n_test == 0 && idx.size() >= 2) n_test = 1;
    s.test.insert(s.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.insert(s.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

template <typename T>
std::vector<nn::Mat<T>> snapshot(const std::vector<nn::Tensor<T>*>& tensors) {
  std::vector<nn::Mat<T>> out;
  for (const auto* t : tensors) out.push_back(t->value);
  return out;
}

template <typename T>
void restore(const std::vector<nn::Tensor<T>*>& tensors, const std::vector<nn::Mat<T>>& values) {
  for (std::size_t i = 0; i < tensors.size(); ++i) tensors[i]->value = values[i];
}

/// Stratified validation split of `pool` (all clips when empty), seeded from
/// the training seed. Returns clip indices.
template <typename Dataset>
Split validation_split(const Dataset& data, const TrainConfig& cfg, std::vector<std::size_t> pool = {}) {
  if (pool.empty()) {
    pool.resize(data.size());
    std::iota(pool.begin(), pool.end(), 0);
  }
  std::vector<int> pool_labels;
  for (std::size_t i : pool) pool_labels.push_back(data.label(i));
  if (std::count(pool_labels.begin(), pool_labels.end(), 1) == 0 ||
      std::count(pool_labels.begin(), pool_labels.end(), 0) == 0)
    throw SingleClassDataset("training data must contain speaking and silent clips");
  Split local = stratified_split(pool_labels, cfg.val_fraction, substream_seed(cfg.seed, "val_split"));
  Split out;
  for (std::size_t k : local.train) out.train.push_back(pool[k]);
  for (std::size_t k : local.test) out.test.push_back(pool[k]);
  return out;
}

/// Trains on `split.train` and early-stops on `split.test`: Adam minimizes
/// the cross-entropy of every item (clip or frame), training stops on the
/// patience rule and the best-validation-loss weights are restored.
template <typename Net>
TrainHistory train_split(Net& net, const typename Net::Dataset& data, const TrainConfig& cfg,
                         const Split& split) {
  using T = typename Net::Scalar;
  cfg.validate();
  std::vector<Item> train_items, val_items;
  const std::vector<std::size_t>& val_clips = split.test;
  for (std::size_t c : split.train)
    for (int i = 0; i < net.items_in(data, c); ++i) train_items.push_back({c, i});
  for (std::size_t c : split.test)
    for (int i = 0; i < net.items_in(data, c); ++i) val_items.push_back({c, i});
  if (train_items.empty() || val_items.empty()) throw TooFewSamples("not enough clips to train");

  auto params = net.parameters();
  auto state = params;
  for (auto* b : net.buffers()) state.push_back(b);
  nn::Adam<T> adam(params, {cfg.learning_rate});
  Rng shuffle_rng = make_rng(cfg.seed, "shuffle");
  Rng dropout_rng = make_rng(cfg.seed, "dropout");

  EarlyStopping stopper(cfg.patience);
  TrainHistory history;
  auto best = snapshot(state);
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(train_items.begin(), train_items.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t off = 0; off < train_items.size(); off += bs) {
      const std::size_t n = std::min(bs, train_items.size() - off);
      const std::span<const Item> batch(train_items.data() + off, n);
      loss_sum += static_cast<double>(net.train_batch(data, batch, dropout_rng)) * static_cast<double>(n);
      adam.step();
    }
    if constexpr (requires { net.refresh_batch_stats(data, std::span<const Item>(train_items), bs); })
      net.refresh_batch_stats(data, std::span<const Item>(train_items), bs);

    double val_sum = 0.0;
    for (std::size_t off = 0; off < val_items.size(); off += bs) {
      const std::size_t n = std::min(bs, val_items.size() - off);
      val_sum += net.eval_loss_sum(data, std::span<const Item>(val_items.data() + off, n));
    }
    std::size_t correct = 0;
    const auto preds = net.predict(data, val_clips);
    for (std::size_t i = 0; i < preds.size(); ++i)
      correct += (preds[i].label == ClipLabel::speaking) == (data.label(val_clips[i]) == 1);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_items.size());
    rec.val_loss = val_sum / static_cast<double>(val_items.size());
    rec.val_accuracy = static_cast<double>(correct) / static_cast<double>(val_clips.size());
    history.epochs.push_back(rec);

    const bool stop = stopper.update(rec.val_loss);
    if (stopper.improved()) best = snapshot(state);
    if (stop) {
      history.stopped_early = true;
      break;
    }
  }
  history.best_epoch = stopper.best_epoch();
  restore(state, best);
  return history;
}

/// Holds out 20% (stratified) of `pool` for validation and trains on the rest.
template <typename Net>
TrainHistory train(Net& net, const typename Net::Dataset& data, const TrainConfig& cfg,
                   std::vector<std::size_t> pool = {}) {
  cfg.validate();
  return train_split(net, data, cfg, validation_split(data, cfg, std::move(pool)));
}

// ---------------------------------------------------------------------------
// Model archives

inline constexpr const char* kLandLstmArch = "land-lstm";
inline constexpr const char* kOfConvNetArch = "of-convnet";

inline const char* arch_name(const LandLstm<float>&) { return kLandLstmArch; }
inline const char* arch_name(const OfConvNet<float>&) { return kOfConvNetArch; }

/// Weights, configs and history in one archive (see checkpoint.hpp).
template <typename Net>
void save_model(const std::string& path, Net& net, const TrainConfig& tcfg, const TrainHistory& history,
                const ordered_json& extra = ordered_json::object()) {
  ordered_json header;
  header["arch"] = arch_name(net);
  header["model_config"] = to_json(net.config());
  header["train_config"] = to_json(tcfg);
  header["history"] = to_json(history);
  header["seed"] = tcfg.seed;
  for (const auto& [k, v] : extra.items()) header[k] = v;
  auto tensors = net.parameters();
  for (auto* b : net.buffers()) tensors.push_back(b);
  ensure_parent_dir(path);
  write_archive(path, header, tensors);
}

inline std::string archive_arch(const Archive& a) { return a.header.at("arch").get<std::string>(); }

inline LandLstm<float> load_land_lstm(const Archive& a, const std::string& what) {
  if (archive_arch(a) != kLandLstmArch) throw FormatError(what + ": not a Land-LSTM checkpoint");
  LandLstm<float> net(land_lstm_config_from_json(a.header.at("model_config")));
  auto tensors = net.parameters();
  for (auto* b : net.buffers()) tensors.push_back(b);
  assign_tensors(a, tensors, what);
  return net;
}

inline OfConvNet<float> load_of_convnet(const Archive& a, const std::string& what) {
  if (archive_arch(a) != kOfConvNetArch) throw FormatError(what + ": not an OF-ConvNet checkpoint");
  OfConvNet<float> net(of_convnet_config_from_json(a.header.at("model_config")), 0, false);
  assign_tensors(a, net.parameters(), what);
  return net;
}

}  // namespace vvad
