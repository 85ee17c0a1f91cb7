#pragma once

// Small reverse-mode building blocks for the two classifiers. Every layer
// caches what its backward pass needs during forward; gradients accumulate into
// Tensor::grad. Layers are templated on the scalar type so that gradient checks
// can run in double while training runs in float.
//
// Sequence activations are packed as one matrix of shape (features, steps *
// batch) where column t * batch + b holds step t of sample b. A (1, steps *
// batch) mask marks valid columns.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "vvad/error.hpp"
#include "vvad/random.hpp"

namespace vvad::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;

/// a * b one column at a time: column j of the result depends only on column j
/// of b, bit for bit, whatever the batch layout.
template <typename T, typename Derived>
Mat<T> column_product(const Mat<T>& a, const Eigen::MatrixBase<Derived>& b) {
  Mat<T> out(a.rows(), b.cols());
  Vec<T> col(a.rows());
  for (Eigen::Index j = 0; j < b.cols(); ++j) {
    col.noalias() = a * b.col(j);
    out.col(j) = col;
  }
  return out;
}

template <typename T>
struct Tensor {
  std::string name;
  Mat<T> value;
  Mat<T> grad;
  bool trainable = true;

  Tensor() = default;
  Tensor(std::string n, Eigen::Index rows, Eigen::Index cols)
      : name(std::move(n)), value(Mat<T>::Zero(rows, cols)), grad(Mat<T>::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename T>
void init_uniform(Mat<T>& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

template <typename T>
void init_normal(Mat<T>& m, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
}

template <typename T>
Mat<T> sigmoid(const Mat<T>& x) {
  return (T(1) + (-x.array()).exp()).inverse().matrix();
}

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

template <typename T>
class Adam {
public:
  Adam(std::vector<Tensor<T>*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat<T>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
    const T lr_t = static_cast<T>(cfg_.lr * std::sqrt(c2) / c1);
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T eps = static_cast<T>(cfg_.eps * std::sqrt(c2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto* p = params_[i];
      if (!p->trainable) continue;
      m_[i] = b1 * m_[i] + (T(1) - b1) * p->grad;
      v_[i] = b2 * v_[i] + (T(1) - b2) * p->grad.cwiseAbs2();
      p->value.array() -= lr_t * m_[i].array() / (v_[i].array().sqrt() + eps);
    }
  }

private:
  std::vector<Tensor<T>*> params_;
  AdamConfig cfg_;
  std::vector<Mat<T>> m_, v_;
  int t_ = 0;
};

// ---------------------------------------------------------------------------
// Dense layers

template <typename T>
class Linear {
public:
  Linear() = default;
  Linear(const std::string& name, int in, int out, Rng& rng, bool relu_follows = false)
      : weight(name + ".weight", out, in), bias(name + ".bias", out, 1) {
    if (relu_follows) init_normal(weight.value, std::sqrt(2.0 / in), rng);
    else init_uniform(weight.value, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  }

  Mat<T> forward(const Mat<T>& x) {
    input_ = x;
    return column_product(weight.value, x).colwise() + bias.value.col(0);
  }

  Mat<T> backward(const Mat<T>& dy) {
    if (weight.trainable) {
      weight.grad.noalias() += dy * input_.transpose();
      bias.grad += dy.rowwise().sum();
    }
    return weight.value.transpose() * dy;
  }

  void collect(std::vector<Tensor<T>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  Tensor<T> weight, bias;

private:
  Mat<T> input_;
};

/// Softmax cross-entropy averaged over columns. Returns the loss and writes
/// d(loss)/d(logits) into `dlogits`.
template <typename T>
T softmax_cross_entropy(const Mat<T>& logits, const std::vector<int>& labels, Mat<T>* dlogits) {
  const Eigen::Index n = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ShapeMismatch("labels vs logits");
  Mat<T> shifted = logits.rowwise() - logits.colwise().maxCoeff();
  Mat<T> e = shifted.array().exp();
  const RowVec<T> z = e.colwise().sum();
  T loss = 0;
  for (Eigen::Index j = 0; j < n; ++j) loss -= shifted(labels[j], j) - std::log(z(j));
  loss /= static_cast<T>(n);
  if (dlogits) {
    *dlogits = e.array().rowwise() / z.array();
    for (Eigen::Index j = 0; j < n; ++j) (*dlogits)(labels[j], j) -= T(1);
    *dlogits /= static_cast<T>(n);
  }
  return loss;
}

template <typename T>
Mat<T> softmax(const Mat<T>& logits) {
  Mat<T> e = (logits.rowwise() - logits.colwise().maxCoeff()).array().exp();
  return e.array().rowwise() / e.colwise().sum().array();
}

// ---------------------------------------------------------------------------
// Recurrent layers (packed sequence layout)

/// One direction of an LSTM. Gate rows are ordered input, forget, cell, output.
/// Masked columns reset the state to zero, so a reversed direction starts
/// fresh at every sample's last valid step.
template <typename T>
class LstmDirection {
public:
  LstmDirection() = default;
  LstmDirection(const std::string& name, int in, int hidden, bool reverse, Rng& rng)
      : w(name + ".w", 4 * hidden, in), u(name + ".u", 4 * hidden, hidden),
        b(name + ".b", 4 * hidden, 1), hidden_(hidden), reverse_(reverse) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    init_uniform(w.value, bound, rng);
    init_uniform(u.value, bound, rng);
    b.value.setZero();
    b.value.block(hidden, 0, hidden, 1).setOnes();  // forget-gate bias
  }

  Mat<T> forward(const Mat<T>& x, const RowVec<T>& mask, int steps, int batch) {
    const int h = hidden_;
    steps_ = steps;
    batch_ = batch;
    x_ = x;
    mask_ = mask;
    const Mat<T> zx = column_product(w.value, x).colwise() + b.value.col(0);
    gates_.resize(4 * h, x.cols());
    cells_.resize(h, x.cols());
    tanh_c_.resize(h, x.cols());
    out_.resize(h, x.cols());

    Mat<T> h_prev = Mat<T>::Zero(h, batch), c_prev = Mat<T>::Zero(h, batch);
    for (int k = 0; k < steps; ++k) {
      const int t = reverse_ ? steps - 1 - k : k;
      Mat<T> z = zx.middleCols(t * batch, batch);
      z += column_product(u.value, h_prev);
      auto g = gates_.middleCols(t * batch, batch);
      g.topRows(2 * h) = sigmoid<T>(z.topRows(2 * h));
      g.middleRows(2 * h, h) = z.middleRows(2 * h, h).array().tanh();
      g.bottomRows(h) = sigmoid<T>(z.bottomRows(h));
      Mat<T> c = g.middleRows(h, h).cwiseProduct(c_prev) +
                 g.topRows(h).cwiseProduct(g.middleRows(2 * h, h));
      const auto m = mask.segment(t * batch, batch);
      c.array().rowwise() *= m.array();
      Mat<T> tc = c.array().tanh();
      Mat<T> hh = g.bottomRows(h).cwiseProduct(tc);
      hh.array().rowwise() *= m.array();
      cells_.middleCols(t * batch, batch) = c;
      tanh_c_.middleCols(t * batch, batch) = tc;
      out_.middleCols(t * batch, batch) = hh;
      h_prev = std::move(hh);
      c_prev = std::move(c);
    }
    return out_;
  }

  Mat<T> backward(const Mat<T>& dout) {
    const int h = hidden_, batch = batch_;
    Mat<T> dz_all(4 * h, x_.cols());
    Mat<T> dh_next = Mat<T>::Zero(h, batch), dc_next = Mat<T>::Zero(h, batch);
    for (int k = steps_ - 1; k >= 0; --k) {
      const int t = reverse_ ? steps_ - 1 - k : k;
      const int tp = reverse_ ? t + 1 : t - 1;  // previous step in processing order
      const bool first = k == 0;
      const auto m = mask_.segment(t * batch, batch);
      const auto g = gates_.middleCols(t * batch, batch);

      Mat<T> dh = dout.middleCols(t * batch, batch) + dh_next;
      dh.array().rowwise() *= m.array();
      Mat<T> dc = dc_next;
      dc.array().rowwise() *= m.array();
      const auto tc = tanh_c_.middleCols(t * batch, batch);
      dc.array() += dh.array() * g.bottomRows(h).array() * (T(1) - tc.array().square());

      Mat<T> c_prev = first ? Mat<T>::Zero(h, batch)
                            : Mat<T>(cells_.middleCols(tp * batch, batch));
      Mat<T> h_prev = first ? Mat<T>::Zero(h, batch)
                            : Mat<T>(out_.middleCols(tp * batch, batch));

      auto dz = dz_all.middleCols(t * batch, batch);
      const auto gi = g.topRows(h).array(), gf = g.middleRows(h, h).array();
      const auto gg = g.middleRows(2 * h, h).array(), go = g.bottomRows(h).array();
      dz.topRows(h).array() = dc.array() * gg * gi * (T(1) - gi);
      dz.middleRows(h, h).array() = dc.array() * c_prev.array() * gf * (T(1) - gf);
      dz.middleRows(2 * h, h).array() = dc.array() * gi * (T(1) - gg.square());
      dz.bottomRows(h).array() = dh.array() * tc.array() * go * (T(1) - go);

      if (u.trainable) u.grad.noalias() += dz * h_prev.transpose();
      dh_next.noalias() = u.value.transpose() * dz;
      dc_next = dc.array() * gf;
    }
    if (w.trainable) {
      w.grad.noalias() += dz_all * x_.transpose();
      b.grad += dz_all.rowwise().sum();
    }
    return w.value.transpose() * dz_all;
  }

  void collect(std::vector<Tensor<T>*>& out) {
    out.push_back(&w);
    out.push_back(&u);
    out.push_back(&b);
  }

  Tensor<T> w, u, b;

private:
  int hidden_ = 0;
  bool reverse_ = false;
  int steps_ = 0, batch_ = 0;
  Mat<T> x_, gates_, cells_, tanh_c_, out_;
  RowVec<T> mask_;
};

template <typename T>
class BiLstm {
public:
  BiLstm() = default;
  BiLstm(const std::string& name, int in, int hidden, Rng& rng)
      : fwd_(name + ".fwd", in, hidden, false, rng), bwd_(name + ".bwd", in, hidden, true, rng),
        hidden_(hidden) {}

  Mat<T> forward(const Mat<T>& x, const RowVec<T>& mask, int steps, int batch) {
    Mat<T> out(2 * hidden_, x.cols());
    out.topRows(hidden_) = fwd_.forward(x, mask, steps, batch);
    out.bottomRows(hidden_) = bwd_.forward(x, mask, steps, batch);
    return out;
  }

  Mat<T> backward(const Mat<T>& dout) {
    Mat<T> dx = fwd_.backward(dout.topRows(hidden_));
    dx += bwd_.backward(dout.bottomRows(hidden_));
    return dx;
  }

  void collect(std::vector<Tensor<T>*>& out) {
    fwd_.collect(out);
    bwd_.collect(out);
  }

private:
  LstmDirection<T> fwd_, bwd_;
  int hidden_ = 0;
};

/// Per-feature batch normalization over the valid columns of a packed
/// sequence matrix (the flattened batch x time axis).
template <typename T>
class MaskedBatchNorm {
public:
  MaskedBatchNorm() = default;
  MaskedBatchNorm(const std::string& name, int features)
      : gamma(name + ".gamma", features, 1), beta(name + ".beta", features, 1),
        running_mean(name + ".running_mean", features, 1),
        running_var(name + ".running_var", features, 1) {
    gamma.value.setOnes();
    running_var.value.setOnes();
    running_mean.trainable = running_var.trainable = false;
  }

  Mat<T> forward(const Mat<T>& x, const RowVec<T>& mask, bool training) {
    mask_ = mask;
    Vec<T> mean, var;
    if (training) {
      count_ = mask.sum();
      if (count_ <= T(0)) throw EmptyInput("batch norm over an empty batch");
      mean = (x.array().rowwise() * mask.array()).rowwise().sum() / count_;
      const Mat<T> centered = x.colwise() - mean;
      var = (centered.array().square().rowwise() * mask.array()).rowwise().sum() / count_;
      const T unbias = count_ > T(1) ? count_ / (count_ - T(1)) : T(1);
      running_mean.value = (T(1) - momentum) * running_mean.value + momentum * mean;
      running_var.value = (T(1) - momentum) * running_var.value + momentum * unbias * var;
    } else {
      mean = running_mean.value.col(0);
      var = running_var.value.col(0);
    }
    inv_std_ = (var.array() + eps).rsqrt();
    xhat_ = (x.colwise() - mean).array().colwise() * inv_std_.array();
    xhat_.array().rowwise() *= mask.array();
    Mat<T> y = (xhat_.array().colwise() * gamma.value.col(0).array()).colwise() +
               beta.value.col(0).array();
    y.array().rowwise() *= mask.array();
    return y;
  }

  /// Training-mode backward pass.
  Mat<T> backward(const Mat<T>& dy_in) {
    Mat<T> dy = dy_in;
    dy.array().rowwise() *= mask_.array();
    const Vec<T> sum_dy = dy.rowwise().sum();
    const Vec<T> sum_dy_xhat = dy.cwiseProduct(xhat_).rowwise().sum();
    if (gamma.trainable) {
      gamma.grad += sum_dy_xhat;
      beta.grad += sum_dy;
    }
    Mat<T> dx = (count_ * dy.array()).matrix();
    dx.colwise() -= sum_dy;
    dx -= (xhat_.array().colwise() * sum_dy_xhat.array()).matrix();
    dx.array().colwise() *= (gamma.value.col(0).array() * inv_std_.array() / count_);
    dx.array().rowwise() *= mask_.array();
    return dx;
  }

  /// Exact statistics over the valid columns of every `accumulate`d batch;
  /// `finish_refresh` writes them to the running buffers.
  void begin_refresh() {
    sum_ = Eigen::VectorXd::Zero(running_mean.value.rows());
    sq_ = Eigen::VectorXd::Zero(running_mean.value.rows());
    n_ = 0.0;
  }
  void accumulate(const Mat<T>& x, const RowVec<T>& mask) {
    const Eigen::MatrixXd xd = x.template cast<double>();
    const Eigen::RowVectorXd md = mask.template cast<double>();
    sum_ += (xd.array().rowwise() * md.array()).rowwise().sum().matrix();
    sq_ += (xd.array().square().rowwise() * md.array()).rowwise().sum().matrix();
    n_ += md.sum();
  }
  void finish_refresh() {
    if (n_ <= 1.0) throw EmptyInput("batch norm refresh over fewer than two columns");
    const Eigen::VectorXd mean = sum_ / n_;
    const Eigen::VectorXd var = ((sq_ / n_).array() - mean.array().square()).cwiseMax(0.0) * (n_ / (n_ - 1.0));
    running_mean.value.col(0) = mean.cast<T>();
    running_var.value.col(0) = var.cast<T>();
  }

  void collect(std::vector<Tensor<T>*>& params) {
    params.push_back(&gamma);
    params.push_back(&beta);
  }
  void collect_buffers(std::vector<Tensor<T>*>& buffers) {
    buffers.push_back(&running_mean);
    buffers.push_back(&running_var);
  }

  Tensor<T> gamma, beta, running_mean, running_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

private:
  RowVec<T> mask_;
  Vec<T> inv_std_;
  Mat<T> xhat_;
  T count_ = 0;
  Eigen::VectorXd sum_, sq_;
  double n_ = 0.0;
};

// ---------------------------------------------------------------------------
// Convolutional layers. Images are (channels, height * width) matrices with
// row-major pixel order; a batch is a vector of images.

template <typename T>
using Image = Mat<T>;

template <typename T>
class Conv3x3 {
public:
  Conv3x3() = default;
  Conv3x3(const std::string& name, int in, int out, Rng& rng)
      : weight(name + ".weight", out, in * 9), bias(name + ".bias", out, 1), in_(in), out_(out) {
    init_normal(weight.value, std::sqrt(2.0 / (in * 9)), rng);
  }

  /// 3x3 convolution, stride 1, zero padding 1, followed by ReLU.
  std::vector<Image<T>> forward(const std::vector<Image<T>>& x, int height, int width,
                                bool keep_cache) {
    height_ = height;
    width_ = width;
    std::vector<Image<T>> y(x.size());
    if (keep_cache) cols_.resize(x.size());
    for (std::size_t n = 0; n < x.size(); ++n) {
      if (x[n].rows() != in_ || x[n].cols() != height * width)
        throw ShapeMismatch("conv input shape");
      Mat<T> col = im2col(x[n]);
      y[n] = ((weight.value * col).colwise() + bias.value.col(0)).cwiseMax(T(0));
      if (keep_cache) cols_[n] = std::move(col);
    }
    if (keep_cache) out_cache_ = y;
    return y;
  }

  std::vector<Image<T>> backward(const std::vector<Image<T>>& dy, bool need_input_grad) {
    std::vector<Image<T>> dx(need_input_grad ? dy.size() : 0);
    for (std::size_t n = 0; n < dy.size(); ++n) {
      const Mat<T> dz = (out_cache_[n].array() > T(0)).select(dy[n], T(0));
      if (weight.trainable) {
        weight.grad.noalias() += dz * cols_[n].transpose();
        bias.grad += dz.rowwise().sum();
      }
      if (need_input_grad) dx[n] = col2im(weight.value.transpose() * dz);
    }
    return dx;
  }

  void collect(std::vector<Tensor<T>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }

  Tensor<T> weight, bias;

private:
  // Row (c * 9 + ky * 3 + kx) of the column matrix holds channel c shifted by
  // (ky - 1, kx - 1).
  Mat<T> im2col(const Image<T>& x) const {
    const int h = height_, w = width_;
    Mat<T> col = Mat<T>::Zero(in_ * 9, h * w);
    for (int c = 0; c < in_; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int row = c * 9 + ky * 3 + kx;
          for (int yy = 0; yy < h; ++yy) {
            const int sy = yy + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (int xx = 0; xx < w; ++xx) {
              const int sx = xx + kx - 1;
              if (sx < 0 || sx >= w) continue;
              col(row, yy * w + xx) = x(c, sy * w + sx);
            }
          }
        }
    return col;
  }

  Image<T> col2im(const Mat<T>& col) const {
    const int h = height_, w = width_;
    Image<T> x = Image<T>::Zero(in_, h * w);
    for (int c = 0; c < in_; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int row = c * 9 + ky * 3 + kx;
          for (int yy = 0; yy < h; ++yy) {
            const int sy = yy + ky - 1;
            if (sy < 0 || sy >= h) continue;
            for (int xx = 0; xx < w; ++xx) {
              const int sx = xx + kx - 1;
              if (sx < 0 || sx >= w) continue;
              x(c, sy * w + sx) += col(row, yy * w + xx);
            }
          }
        }
    return x;
  }

  int in_ = 0, out_ = 0, height_ = 0, width_ = 0;
  std::vector<Mat<T>> cols_;
  std::vector<Image<T>> out_cache_;
};

/// 2x2 max pooling with stride 2 (odd trailing rows/columns dropped).
template <typename T>
class MaxPool2 {
public:
  std::vector<Image<T>> forward(const std::vector<Image<T>>& x, int height, int width) {
    height_ = height;
    width_ = width;
    const int oh = height / 2, ow = width / 2;
    argmax_.assign(x.size(), {});
    std::vector<Image<T>> y(x.size());
    for (std::size_t n = 0; n < x.size(); ++n) {
      const Eigen::Index channels = x[n].rows();
      y[n].resize(channels, oh * ow);
      argmax_[n].resize(static_cast<std::size_t>(channels * oh * ow));
      for (Eigen::Index c = 0; c < channels; ++c)
        for (int yy = 0; yy < oh; ++yy)
          for (int xx = 0; xx < ow; ++xx) {
            int best = (2 * yy) * width + 2 * xx;
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const int idx = (2 * yy + dy) * width + 2 * xx + dx;
                if (x[n](c, idx) > x[n](c, best)) best = idx;
              }
            y[n](c, yy * ow + xx) = x[n](c, best);
            argmax_[n][static_cast<std::size_t>(c * oh * ow + yy * ow + xx)] = best;
          }
    }
    return y;
  }

  std::vector<Image<T>> backward(const std::vector<Image<T>>& dy) {
    const int oh = height_ / 2, ow = width_ / 2;
    std::vector<Image<T>> dx(dy.size());
    for (std::size_t n = 0; n < dy.size(); ++n) {
      dx[n] = Image<T>::Zero(dy[n].rows(), height_ * width_);
      for (Eigen::Index c = 0; c < dy[n].rows(); ++c)
        for (int i = 0; i < oh * ow; ++i)
          dx[n](c, argmax_[n][static_cast<std::size_t>(c * oh * ow + i)]) += dy[n](c, i);
    }
    return dx;
  }

private:
  int height_ = 0, width_ = 0;
  std::vector<std::vector<int>> argmax_;
};

}  // namespace vvad::nn
