#pragma once

// Land-LSTM (frontalized landmark sequences -> stacked BiLSTM) and OF-ConvNet
// (flow images -> conv blocks, frame-wise decisions combined by voting).

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <opencv2/imgproc.hpp>

#include "vvad/annotation_pipeline.hpp"
#include "vvad/checkpoint.hpp"
#include "vvad/error.hpp"
#include "vvad/flow_encoding.hpp"
#include "vvad/nn.hpp"
#include "vvad/random.hpp"

namespace vvad {

// ---------------------------------------------------------------------------
// Voting

enum class VoteRule { majority, mean_score };

/// Strict majority of frame labels; ties go to silent.
inline ClipLabel vote(std::span<const ClipLabel> per_frame) {
  if (per_frame.empty()) throw EmptyInput("vote over zero frames");
  const auto speaking = std::count(per_frame.begin(), per_frame.end(), ClipLabel::speaking);
  return 2 * speaking > static_cast<std::ptrdiff_t>(per_frame.size()) ? ClipLabel::speaking
                                                                      : ClipLabel::silent;
}

struct Prediction {
  std::string clip_id;
  ClipLabel label = ClipLabel::silent;
  double score = 0.0;  // P(speaking), or the speaking-frame share under majority voting
  std::optional<std::vector<ClipLabel>> per_frame;
};

inline ordered_json to_json(const Prediction& p) {
  ordered_json j;
  j["clip_id"] = p.clip_id;
  j["label"] = to_string(p.label);
  j["score"] = p.score;
  if (p.per_frame) {
    std::string frames;
    for (auto l : *p.per_frame) frames.push_back(l == ClipLabel::speaking ? '1' : '0');
    j["per_frame"] = frames;
  }
  return j;
}

inline Prediction prediction_from_json(const json& j) {
  Prediction p;
  p.clip_id = j.at("clip_id").get<std::string>();
  p.label = parse_label(j.at("label").get<std::string>());
  p.score = j.at("score").get<double>();
  if (j.contains("per_frame")) {
    std::vector<ClipLabel> frames;
    for (char c : j.at("per_frame").get<std::string>())
      frames.push_back(c == '1' ? ClipLabel::speaking : ClipLabel::silent);
    p.per_frame = std::move(frames);
  }
  return p;
}

/// A training unit: clip index and item within the clip (a frame for
/// OF-ConvNet, always 0 for Land-LSTM).
struct Item {
  std::size_t clip = 0;
  int index = 0;
};

// ---------------------------------------------------------------------------
// Land-LSTM

struct LandLstmConfig {
  int input_dim = 204;
  int lstm_layers = 2;
  int hidden_units = 128;
  int fc_units = 64;
  double dropout = 0.2;
  int classes = 2;

  void validate() const {
    if (input_dim < 1 || lstm_layers < 1 || hidden_units < 1 || fc_units < 1)
      throw ValidationError("Land-LSTM sizes must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
    if (classes != 2) throw ValidationError("only two classes are supported");
  }
};

inline ordered_json to_json(const LandLstmConfig& c) {
  return {{"input_dim", c.input_dim}, {"lstm_layers", c.lstm_layers},
          {"hidden_units", c.hidden_units}, {"fc_units", c.fc_units},
          {"dropout", c.dropout}, {"classes", c.classes}};
}

inline LandLstmConfig land_lstm_config_from_json(const json& j, LandLstmConfig c = {}) {
  c.input_dim = j.value("input_dim", c.input_dim);
  c.lstm_layers = j.value("lstm_layers", c.lstm_layers);
  c.hidden_units = j.value("hidden_units", c.hidden_units);
  c.fc_units = j.value("fc_units", c.fc_units);
  c.dropout = j.value("dropout", c.dropout);
  c.classes = j.value("classes", c.classes);
  c.validate();
  return c;
}

/// Sequences padded to a common length, packed column-wise (see nn.hpp).
template <typename T>
struct SequenceBatch {
  nn::Mat<T> x;
  nn::RowVec<T> mask;
  std::vector<int> lengths;
  int steps = 0;
  int batch = 0;
};

/// Packs (dim, length) sequences; `steps` = 0 pads to the longest.
template <typename T>
SequenceBatch<T> make_sequence_batch(std::span<const nn::Mat<T>* const> seqs, int steps = 0) {
  if (seqs.empty()) throw EmptyInput("empty sequence batch");
  SequenceBatch<T> b;
  b.batch = static_cast<int>(seqs.size());
  const auto dim = seqs.front()->rows();
  for (const auto* s : seqs) {
    if (s->rows() != dim) throw ShapeMismatch("sequences differ in feature dimension");
    if (s->cols() < 1) throw ShapeMismatch("empty sequence");
    b.lengths.push_back(static_cast<int>(s->cols()));
    b.steps = std::max(b.steps, static_cast<int>(s->cols()));
  }
  if (steps > 0) {
    if (steps < b.steps) throw ShapeMismatch("padding length shorter than a sequence");
    b.steps = steps;
  }
  b.x = nn::Mat<T>::Zero(dim, static_cast<Eigen::Index>(b.steps) * b.batch);
  b.mask = nn::RowVec<T>::Zero(static_cast<Eigen::Index>(b.steps) * b.batch);
  for (int i = 0; i < b.batch; ++i)
    for (int t = 0; t < b.lengths[i]; ++t) {
      b.x.col(t * b.batch + i) = seqs[i]->col(t);
      b.mask(t * b.batch + i) = T(1);
    }
  return b;
}

template <typename T>
struct SequenceDataset {
  std::vector<nn::Mat<T>> sequences;  // (input_dim, length) each
  std::vector<int> labels;            // 1 = speaking
  std::vector<std::string> ids;

  std::size_t size() const { return sequences.size(); }
  int label(std::size_t i) const { return labels[i]; }
};

template <typename T>
class LandLstm {
public:
  using Scalar = T;
  using Dataset = SequenceDataset<T>;

  explicit LandLstm(const LandLstmConfig& cfg, std::uint64_t seed = 0) : cfg_(cfg) {
    cfg_.validate();
    Rng rng = make_rng(seed, "land_lstm.init");
    int in = cfg_.input_dim;
    for (int l = 0; l < cfg_.lstm_layers; ++l) {
      lstm_.emplace_back("lstm" + std::to_string(l), in, cfg_.hidden_units, rng);
      if (l + 1 < cfg_.lstm_layers) bn_.emplace_back("bn" + std::to_string(l), 2 * cfg_.hidden_units);
      in = 2 * cfg_.hidden_units;
    }
    fc_ = nn::Linear<T>("fc", in, cfg_.fc_units, rng, true);
    head_ = nn::Linear<T>("head", cfg_.fc_units, cfg_.classes, rng);
  }

  const LandLstmConfig& config() const { return cfg_; }

  /// Logits of shape (2, batch). `rng` drives dropout in training mode.
  nn::Mat<T> forward(const SequenceBatch<T>& b, bool training, Rng* rng = nullptr) {
    if (b.x.rows() != cfg_.input_dim)
      throw ShapeMismatch("expected " + std::to_string(cfg_.input_dim) + " input features, got " +
                          std::to_string(b.x.rows()));
    if (b.x.cols() != static_cast<Eigen::Index>(b.steps) * b.batch || b.mask.size() != b.x.cols())
      throw ShapeMismatch("sequence batch packing");
    batch_ = b.batch;
    steps_ = b.steps;
    mask_ = b.mask;
    lengths_ = b.lengths;

    nn::Mat<T> h = b.x;
    for (std::size_t l = 0; l < lstm_.size(); ++l) {
      h = lstm_[l].forward(h, b.mask, b.steps, b.batch);
      if (l < bn_.size()) h = bn_[l].forward(h, b.mask, training);
    }
    fc_pre_ = fc_.forward(h);
    nn::Mat<T> r = fc_pre_.cwiseMax(T(0));
    drop_.resize(0, 0);
    if (training && cfg_.dropout > 0.0) {
      if (!rng) throw ValidationError("dropout needs a random stream");
      std::bernoulli_distribution keep(1.0 - cfg_.dropout);
      const T scale = static_cast<T>(1.0 / (1.0 - cfg_.dropout));
      drop_.resize(r.rows(), r.cols());
      for (Eigen::Index i = 0; i < drop_.size(); ++i) drop_.data()[i] = keep(*rng) ? scale : T(0);
      r.array() *= drop_.array();
    }
    nn::Mat<T> pooled = nn::Mat<T>::Zero(r.rows(), b.batch);
    for (int i = 0; i < b.batch; ++i) {
      for (int t = 0; t < b.lengths[i]; ++t) pooled.col(i) += r.col(t * b.batch + i);
      pooled.col(i) /= static_cast<T>(b.lengths[i]);
    }
    return head_.forward(pooled);
  }

  /// Training-mode backward pass for the last forward call.
  void backward(const nn::Mat<T>& dlogits) {
    const nn::Mat<T> dpooled = head_.backward(dlogits);
    nn::Mat<T> dr = nn::Mat<T>::Zero(fc_pre_.rows(), fc_pre_.cols());
    for (int i = 0; i < batch_; ++i)
      for (int t = 0; t < lengths_[i]; ++t)
        dr.col(t * batch_ + i) = dpooled.col(i) / static_cast<T>(lengths_[i]);
    if (drop_.size() > 0) dr.array() *= drop_.array();
    dr = (fc_pre_.array() > T(0)).select(dr, T(0));
    nn::Mat<T> dh = fc_.backward(dr);
    for (std::size_t l = lstm_.size(); l-- > 0;) {
      if (l < bn_.size()) dh = bn_[l].backward(dh);
      dh = lstm_[l].backward(dh);
    }
  }

  std::vector<nn::Tensor<T>*> parameters() {
    std::vector<nn::Tensor<T>*> out;
    for (std::size_t l = 0; l < lstm_.size(); ++l) {
      lstm_[l].collect(out);
      if (l < bn_.size()) bn_[l].collect(out);
    }
    fc_.collect(out);
    head_.collect(out);
    return out;
  }

  std::vector<nn::Tensor<T>*> buffers() {
    std::vector<nn::Tensor<T>*> out;
    for (auto& bn : bn_) bn.collect_buffers(out);
    return out;
  }

  // Trainer interface ------------------------------------------------------

  int items_in(const Dataset&, std::size_t) const { return 1; }

  /// Sets batch-norm running statistics to the exact statistics of `items`
  /// under the current weights, batch by batch in training mode.
  void refresh_batch_stats(const Dataset& data, std::span<const Item> items, std::size_t batch_size) {
    if (bn_.empty() || items.empty()) return;
    for (auto& bn : bn_) bn.begin_refresh();
    for (std::size_t off = 0; off < items.size(); off += batch_size) {
      const SequenceBatch<T> b = gather(data, items.subspan(off, std::min(batch_size, items.size() - off)));
      nn::Mat<T> h = b.x;
      for (std::size_t l = 0; l < bn_.size(); ++l) {
        h = lstm_[l].forward(h, b.mask, b.steps, b.batch);
        bn_[l].accumulate(h, b.mask);
        h = bn_[l].forward(h, b.mask, true);
      }
    }
    for (auto& bn : bn_) bn.finish_refresh();
  }

  T train_batch(const Dataset& data, std::span<const Item> items, Rng& rng) {
    const SequenceBatch<T> b = gather(data, items);
    for (auto* p : parameters()) p->zero_grad();
    nn::Mat<T> dlogits;
    const nn::Mat<T> logits = forward(b, true, &rng);
    const T loss = nn::softmax_cross_entropy<T>(logits, labels_of(data, items), &dlogits);
    backward(dlogits);
    return loss;
  }

  /// Summed cross-entropy over `items` in eval mode.
  double eval_loss_sum(const Dataset& data, std::span<const Item> items) {
    const nn::Mat<T> logits = forward(gather(data, items), false);
    return static_cast<double>(nn::softmax_cross_entropy<T>(logits, labels_of(data, items), nullptr)) *
           static_cast<double>(items.size());
  }

  /// P(speaking) for each listed clip.
  std::vector<double> speaking_probability(const Dataset& data, std::span<const std::size_t> clips,
                                           int batch_size = 64) {
    std::vector<double> out;
    for (std::size_t off = 0; off < clips.size(); off += static_cast<std::size_t>(batch_size)) {
      std::vector<Item> items;
      for (std::size_t i = off; i < std::min(clips.size(), off + batch_size); ++i)
        items.push_back({clips[i], 0});
      const nn::Mat<T> p = nn::softmax<T>(forward(gather(data, items), false));
      for (Eigen::Index j = 0; j < p.cols(); ++j) out.push_back(static_cast<double>(p(1, j)));
    }
    return out;
  }

  std::vector<Prediction> predict(const Dataset& data, std::span<const std::size_t> clips) {
    const auto probs = speaking_probability(data, clips);
    std::vector<Prediction> out;
    for (std::size_t i = 0; i < clips.size(); ++i) {
      Prediction p;
      p.clip_id = data.ids.empty() ? std::to_string(clips[i]) : data.ids[clips[i]];
      p.score = probs[i];
      p.label = probs[i] > 0.5 ? ClipLabel::speaking : ClipLabel::silent;
      out.push_back(std::move(p));
    }
    return out;
  }

private:
  static SequenceBatch<T> gather(const Dataset& data, std::span<const Item> items) {
    std::vector<const nn::Mat<T>*> seqs;
    for (const auto& it : items) seqs.push_back(&data.sequences.at(it.clip));
    return make_sequence_batch<T>(seqs);
  }
  static std::vector<int> labels_of(const Dataset& data, std::span<const Item> items) {
    std::vector<int> out;
    for (const auto& it : items) out.push_back(data.labels.at(it.clip));
    return out;
  }

  LandLstmConfig cfg_;
  std::vector<nn::BiLstm<T>> lstm_;
  std::vector<nn::MaskedBatchNorm<T>> bn_;
  nn::Linear<T> fc_, head_;

  int batch_ = 0, steps_ = 0;
  nn::RowVec<T> mask_;
  std::vector<int> lengths_;
  nn::Mat<T> fc_pre_, drop_;
};

// ---------------------------------------------------------------------------
// OF-ConvNet

enum class Backbone { tiny_cnn, vgg16_pretrained };

inline const char* to_string(Backbone b) {
  return b == Backbone::vgg16_pretrained ? "vgg16-pretrained" : "tiny-cnn";
}

inline Backbone parse_backbone(const std::string& s) {
  if (s == "tiny-cnn") return Backbone::tiny_cnn;
  if (s == "vgg16-pretrained") return Backbone::vgg16_pretrained;
  throw ValidationError("unknown backbone '" + s + "'");
}

/// Conv layout of VGG-16: output channels of each 3x3 conv, grouped by block.
inline std::vector<std::vector<int>> vgg16_blocks() {
  return {{64, 64}, {128, 128}, {256, 256, 256}, {512, 512, 512}, {512, 512, 512}};
}

struct OfConvNetConfig {
  Backbone backbone = Backbone::tiny_cnn;
  /// Output channels of each conv, grouped by block. Ignored for VGG-16.
  std::vector<std::vector<int>> blocks{{8}, {16}, {32}, {32}};
  /// Trailing blocks that receive gradients; -1 trains every block.
  int finetune_blocks = -1;
  int input_size = 32;
  /// Pretrained VGG-16 conv weights; empty looks in $VVAD_CACHE.
  std::string weights_path;
  VoteRule vote_rule = VoteRule::majority;
  int classes = 2;

  std::vector<std::vector<int>> layout() const {
    return backbone == Backbone::vgg16_pretrained ? vgg16_blocks() : blocks;
  }
  int trainable_blocks() const {
    const int n = static_cast<int>(layout().size());
    return finetune_blocks < 0 ? n : finetune_blocks;
  }

  void validate() const {
    const auto l = layout();
    if (l.empty()) throw ValidationError("conv net needs at least one block");
    for (const auto& b : l)
      if (b.empty() || std::any_of(b.begin(), b.end(), [](int c) { return c < 1; }))
        throw ValidationError("every block needs convs with positive channel counts");
    if (finetune_blocks > static_cast<int>(l.size()))
      throw ValidationError("finetune_blocks exceeds the backbone block count");
    if (input_size < (1 << l.size())) throw ValidationError("input_size too small for the pooling depth");
    if (classes != 2) throw ValidationError("only two classes are supported");
  }
};

inline ordered_json to_json(const OfConvNetConfig& c) {
  return {{"backbone", to_string(c.backbone)},
          {"blocks", c.blocks},
          {"finetune_blocks", c.finetune_blocks},
          {"input_size", c.input_size},
          {"weights_path", c.weights_path},
          {"vote", c.vote_rule == VoteRule::majority ? "majority" : "mean-score"},
          {"classes", c.classes}};
}

inline OfConvNetConfig of_convnet_config_from_json(const json& j, OfConvNetConfig c = {}) {
  if (j.contains("backbone")) c.backbone = parse_backbone(j.at("backbone").get<std::string>());
  if (j.contains("blocks")) c.blocks = j.at("blocks").get<std::vector<std::vector<int>>>();
  c.finetune_blocks = j.value("finetune_blocks", c.finetune_blocks);
  c.input_size = j.value("input_size", c.input_size);
  c.weights_path = j.value("weights_path", c.weights_path);
  if (j.contains("vote")) {
    const auto v = j.at("vote").get<std::string>();
    if (v == "majority") c.vote_rule = VoteRule::majority;
    else if (v == "mean-score") c.vote_rule = VoteRule::mean_score;
    else throw ValidationError("unknown vote rule '" + v + "'");
  }
  c.classes = j.value("classes", c.classes);
  c.validate();
  return c;
}

/// Flow image -> (3, size * size) network input. VGG-16 inputs use ImageNet
/// normalization; the tiny net maps [0, 255] to [-1, 1].
template <typename T>
nn::Image<T> flow_image_input(const FlowImage& img, int size, Backbone backbone) {
  cv::Mat src(img.rows, img.cols, CV_8UC3, const_cast<std::uint8_t*>(img.rgb.data()));
  cv::Mat resized = src;
  if (img.rows != size || img.cols != size) cv::resize(src, resized, cv::Size(size, size), 0, 0, cv::INTER_AREA);
  static constexpr double kMean[3] = {0.485, 0.456, 0.406};
  static constexpr double kStd[3] = {0.229, 0.224, 0.225};
  nn::Image<T> out(3, size * size);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const auto& px = resized.at<cv::Vec3b>(r, c);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = px[ch] / 255.0;
        out(ch, r * size + c) = static_cast<T>(
            backbone == Backbone::vgg16_pretrained ? (v - kMean[ch]) / kStd[ch] : 2.0 * v - 1.0);
      }
    }
  return out;
}

template <typename T>
struct FlowClipDataset {
  std::vector<std::vector<nn::Image<T>>> clips;  // per clip, per flow frame
  std::vector<int> labels;
  std::vector<std::string> ids;

  std::size_t size() const { return clips.size(); }
  int label(std::size_t i) const { return labels[i]; }
};

inline std::string default_vgg16_weights() {
  const char* cache = std::getenv("VVAD_CACHE");
  if (!cache || !*cache) return {};
  return (std::filesystem::path(cache) / "vgg16_conv.ckpt").string();
}

template <typename T>
class OfConvNet;

template <typename T>
void load_backbone_weights(OfConvNet<T>& net, const std::string& path);

template <typename T>
class OfConvNet {
public:
  using Scalar = T;
  using Dataset = FlowClipDataset<T>;

  /// With the vgg16-pretrained backbone, `load_pretrained` reads the conv
  /// weights and throws BackboneUnavailable when they are missing.
  explicit OfConvNet(const OfConvNetConfig& cfg, std::uint64_t seed = 0, bool load_pretrained = true)
      : cfg_(cfg) {
    cfg_.validate();
    Rng rng = make_rng(seed, "of_convnet.init");
    const auto layout = cfg_.layout();
    int in = 3;
    for (std::size_t b = 0; b < layout.size(); ++b) {
      std::vector<nn::Conv3x3<T>> convs;
      for (std::size_t c = 0; c < layout[b].size(); ++c) {
        convs.emplace_back("block" + std::to_string(b + 1) + ".conv" + std::to_string(c + 1), in,
                           layout[b][c], rng);
        in = layout[b][c];
      }
      blocks_.push_back(std::move(convs));
      pools_.emplace_back();
    }
    head_ = nn::Linear<T>("head", in, cfg_.classes, rng);
    const int frozen = static_cast<int>(layout.size()) - cfg_.trainable_blocks();
    for (int b = 0; b < frozen; ++b)
      for (auto& conv : blocks_[b]) conv.weight.trainable = conv.bias.trainable = false;

    if (cfg_.backbone == Backbone::vgg16_pretrained && load_pretrained) {
      const std::string path = cfg_.weights_path.empty() ? default_vgg16_weights() : cfg_.weights_path;
      if (path.empty() || !std::filesystem::exists(path))
        throw BackboneUnavailable(
            "pretrained VGG-16 weights not found (set VVAD_CACHE or weights_path, or use tiny-cnn)");
      load_backbone_weights(*this, path);
    }
  }

  const OfConvNetConfig& config() const { return cfg_; }
  std::size_t block_count() const { return blocks_.size(); }
  std::vector<nn::Conv3x3<T>>& block(std::size_t b) { return blocks_.at(b); }

  /// Per-frame logits of shape (2, frames).
  nn::Mat<T> forward(const std::vector<nn::Image<T>>& frames, bool training) {
    if (frames.empty()) throw EmptyInput("no frames");
    const int s = cfg_.input_size;
    for (const auto& f : frames)
      if (f.rows() != 3 || f.cols() != static_cast<Eigen::Index>(s) * s)
        throw ShapeMismatch("frames must be 3 x " + std::to_string(s) + " x " + std::to_string(s));
    const int first_trainable = static_cast<int>(blocks_.size()) - cfg_.trainable_blocks();
    std::vector<nn::Image<T>> x = frames;
    int h = s, w = s;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      const bool cache = training && static_cast<int>(b) >= first_trainable;
      for (auto& conv : blocks_[b]) x = conv.forward(x, h, w, cache);
      x = pools_[b].forward(x, h, w);
      h /= 2;
      w /= 2;
    }
    spatial_ = h * w;
    nn::Mat<T> feats(x.front().rows(), static_cast<Eigen::Index>(x.size()));
    for (std::size_t n = 0; n < x.size(); ++n)
      feats.col(static_cast<Eigen::Index>(n)) = x[n].rowwise().mean();
    return head_.forward(feats);
  }

  void backward(const nn::Mat<T>& dlogits) {
    const nn::Mat<T> dfeats = head_.backward(dlogits);
    std::vector<nn::Image<T>> dx(static_cast<std::size_t>(dfeats.cols()));
    for (std::size_t n = 0; n < dx.size(); ++n)
      dx[n] = dfeats.col(static_cast<Eigen::Index>(n)).replicate(1, spatial_) / static_cast<T>(spatial_);
    const int first_trainable = static_cast<int>(blocks_.size()) - cfg_.trainable_blocks();
    for (int b = static_cast<int>(blocks_.size()) - 1; b >= first_trainable; --b) {
      dx = pools_[b].backward(dx);
      for (int c = static_cast<int>(blocks_[b].size()) - 1; c >= 0; --c) {
        const bool need_input = !(b == first_trainable && c == 0);
        dx = blocks_[b][c].backward(dx, need_input);
      }
    }
  }

  std::vector<nn::Tensor<T>*> parameters() {
    std::vector<nn::Tensor<T>*> out;
    for (auto& blk : blocks_)
      for (auto& conv : blk) conv.collect(out);
    head_.collect(out);
    return out;
  }
  std::vector<nn::Tensor<T>*> buffers() { return {}; }

  // Trainer interface ------------------------------------------------------

  int items_in(const Dataset& data, std::size_t clip) const {
    return static_cast<int>(data.clips.at(clip).size());
  }

  T train_batch(const Dataset& data, std::span<const Item> items, Rng&) {
    for (auto* p : parameters()) p->zero_grad();
    nn::Mat<T> dlogits;
    const nn::Mat<T> logits = forward(gather(data, items), true);
    const T loss = nn::softmax_cross_entropy<T>(logits, labels_of(data, items), &dlogits);
    backward(dlogits);
    return loss;
  }

  double eval_loss_sum(const Dataset& data, std::span<const Item> items) {
    const nn::Mat<T> logits = forward(gather(data, items), false);
    return static_cast<double>(nn::softmax_cross_entropy<T>(logits, labels_of(data, items), nullptr)) *
           static_cast<double>(items.size());
  }

  /// Frame-wise decisions combined by the configured vote rule.
  std::vector<Prediction> predict(const Dataset& data, std::span<const std::size_t> clips) {
    std::vector<Prediction> out;
    for (std::size_t ci : clips) {
      const auto& frames = data.clips.at(ci);
      std::vector<double> probs;
      for (std::size_t off = 0; off < frames.size(); off += 64) {
        std::vector<nn::Image<T>> chunk(frames.begin() + off,
                                        frames.begin() + std::min(frames.size(), off + 64));
        const nn::Mat<T> p = nn::softmax<T>(forward(chunk, false));
        for (Eigen::Index j = 0; j < p.cols(); ++j) probs.push_back(static_cast<double>(p(1, j)));
      }
      Prediction pred;
      pred.clip_id = data.ids.empty() ? std::to_string(ci) : data.ids[ci];
      std::vector<ClipLabel> per_frame;
      for (double p : probs) per_frame.push_back(p > 0.5 ? ClipLabel::speaking : ClipLabel::silent);
      if (cfg_.vote_rule == VoteRule::majority) {
        pred.label = vote(per_frame);
        pred.score = static_cast<double>(std::count(per_frame.begin(), per_frame.end(),
                                                    ClipLabel::speaking)) /
                     static_cast<double>(per_frame.size());
      } else {
        if (probs.empty()) throw EmptyInput("clip without frames");
        double mean = 0.0;
        for (double p : probs) mean += p;
        mean /= static_cast<double>(probs.size());
        pred.score = mean;
        pred.label = mean > 0.5 ? ClipLabel::speaking : ClipLabel::silent;
      }
      pred.per_frame = std::move(per_frame);
      out.push_back(std::move(pred));
    }
    return out;
  }

private:
  static std::vector<nn::Image<T>> gather(const Dataset& data, std::span<const Item> items) {
    std::vector<nn::Image<T>> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(data.clips.at(it.clip).at(static_cast<std::size_t>(it.index)));
    return out;
  }
  static std::vector<int> labels_of(const Dataset& data, std::span<const Item> items) {
    std::vector<int> out;
    for (const auto& it : items) out.push_back(data.labels.at(it.clip));
    return out;
  }

  OfConvNetConfig cfg_;
  std::vector<std::vector<nn::Conv3x3<T>>> blocks_;
  std::vector<nn::MaxPool2<T>> pools_;
  nn::Linear<T> head_;
  Eigen::Index spatial_ = 1;
};

template <typename T>
void load_backbone_weights(OfConvNet<T>& net, const std::string& path) {
  Archive a;
  try {
    a = read_archive(path);
  } catch (const Error& e) {
    throw BackboneUnavailable(e.what());
  }
  std::vector<nn::Tensor<T>*> convs;
  for (std::size_t b = 0; b < net.block_count(); ++b)
    for (auto& conv : net.block(b)) conv.collect(convs);
  assign_tensors(a, convs, path);
}

}  // namespace vvad
