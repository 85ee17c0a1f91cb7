#pragma once

// Dense optical flow between consecutive face crops and its color encoding:
// hue gives the flow direction on the 55-bin Middlebury wheel, saturation the
// magnitude, zero flow is white.

#include <Eigen/Dense>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <opencv2/video/tracking.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "vvad/error.hpp"

namespace vvad {

using Plane = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Grayscale intensities in [0, 255].
struct GrayImage {
  Plane pixels;
  int rows() const { return static_cast<int>(pixels.rows()); }
  int cols() const { return static_cast<int>(pixels.cols()); }
};

struct FlowFrame {
  Plane u;  // horizontal displacement, px
  Plane v;  // vertical displacement, px

  int rows() const { return static_cast<int>(u.rows()); }
  int cols() const { return static_cast<int>(u.cols()); }
};

struct FlowImage {
  int rows = 0, cols = 0;
  std::vector<std::uint8_t> rgb;  // row-major, interleaved R, G, B

  std::array<std::uint8_t, 3> at(int r, int c) const {
    const std::size_t o = (static_cast<std::size_t>(r) * cols + c) * 3;
    return {rgb[o], rgb[o + 1], rgb[o + 2]};
  }
};

struct FlowConfig {
  int levels = 3;
  int window = 9;
  int iterations = 5;
  double pyr_scale = 0.5;
  int poly_n = 5;
  double poly_sigma = 1.1;
};

using FlowProvider = std::function<FlowFrame(const GrayImage&, const GrayImage&)>;

inline cv::Mat as_mat(const Plane& p) {
  return cv::Mat(static_cast<int>(p.rows()), static_cast<int>(p.cols()), CV_32F,
                 const_cast<float*>(p.data()));
}

/// Polynomial-expansion pyramidal flow (Farneback) from `frame_a` to `frame_b`.
inline FlowFrame dense_flow(const GrayImage& frame_a, const GrayImage& frame_b,
                            const FlowConfig& cfg = {}) {
  if (frame_a.rows() != frame_b.rows() || frame_a.cols() != frame_b.cols())
    throw ShapeMismatch("dense_flow frames differ in shape");
  if (frame_a.rows() == 0 || frame_a.cols() == 0) throw ShapeMismatch("empty frame");
  cv::Mat flow;
  cv::calcOpticalFlowFarneback(as_mat(frame_a.pixels), as_mat(frame_b.pixels), flow, cfg.pyr_scale,
                               cfg.levels, cfg.window, cfg.iterations, cfg.poly_n, cfg.poly_sigma, 0);
  FlowFrame out{Plane(frame_a.rows(), frame_a.cols()), Plane(frame_a.rows(), frame_a.cols())};
  for (int r = 0; r < flow.rows; ++r)
    for (int c = 0; c < flow.cols; ++c) {
      const auto d = flow.at<cv::Vec2f>(r, c);
      out.u(r, c) = std::isfinite(d[0]) ? d[0] : 0.0f;
      out.v(r, c) = std::isfinite(d[1]) ? d[1] : 0.0f;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Color wheel

inline constexpr int kWheelBins = 55;

/// Middlebury wheel: red-yellow 15, yellow-green 6, green-cyan 4, cyan-blue 11,
/// blue-magenta 13, magenta-red 6 bins.
inline const std::array<std::array<int, 3>, kWheelBins>& color_wheel() {
  static const auto wheel = [] {
    std::array<std::array<int, 3>, kWheelBins> w{};
    constexpr int ry = 15, yg = 6, gc = 4, cb = 11, bm = 13, mr = 6;
    int k = 0;
    for (int i = 0; i < ry; ++i) w[k++] = {255, 255 * i / ry, 0};
    for (int i = 0; i < yg; ++i) w[k++] = {255 - 255 * i / yg, 255, 0};
    for (int i = 0; i < gc; ++i) w[k++] = {0, 255, 255 * i / gc};
    for (int i = 0; i < cb; ++i) w[k++] = {0, 255 - 255 * i / cb, 255};
    for (int i = 0; i < bm; ++i) w[k++] = {255 * i / bm, 0, 255};
    for (int i = 0; i < mr; ++i) w[k++] = {255, 0, 255 - 255 * i / mr};
    return w;
  }();
  return wheel;
}

/// Continuous wheel position in [0, 55) of direction (u, v); a full turn of the
/// vector spans all 55 bins.
inline double wheel_position(double u, double v) {
  const double a = std::atan2(-v, -u) / std::numbers::pi;  // (-1, 1]
  double pos = 0.5 * (a + 1.0) * kWheelBins;
  if (pos >= kWheelBins) pos -= kWheelBins;
  return pos;
}

/// Encodes one vector; `saturation` in [0, 1].
inline std::array<std::uint8_t, 3> encode_flow_color(double u, double v, double saturation) {
  const auto& wheel = color_wheel();
  const double pos = wheel_position(u, v);
  const int k0 = static_cast<int>(std::floor(pos));
  const int k1 = (k0 + 1) % kWheelBins;
  const double f = pos - k0;
  std::array<std::uint8_t, 3> out{};
  for (int c = 0; c < 3; ++c) {
    const double hue = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
    const double col = 1.0 - saturation * (1.0 - hue);
    out[c] = static_cast<std::uint8_t>(std::lround(255.0 * col));
  }
  return out;
}

inline double max_magnitude(const FlowFrame& flow) {
  return std::sqrt(static_cast<double>((flow.u.array().square() + flow.v.array().square()).maxCoeff()));
}

/// Color encoding of a flow field. `max_mag <= 0` selects the per-frame maximum
/// magnitude, floored at 1 px.
inline FlowImage flow_to_rgb(const FlowFrame& flow, double max_mag = 0.0) {
  if (flow.u.rows() != flow.v.rows() || flow.u.cols() != flow.v.cols())
    throw ShapeMismatch("flow planes differ in shape");
  const double scale = max_mag > 0.0 ? max_mag : std::max(1.0, max_magnitude(flow));
  FlowImage img;
  img.rows = flow.rows();
  img.cols = flow.cols();
  img.rgb.resize(static_cast<std::size_t>(img.rows) * img.cols * 3);
  for (int r = 0; r < img.rows; ++r)
    for (int c = 0; c < img.cols; ++c) {
      const double u = flow.u(r, c), v = flow.v(r, c);
      const double sat = std::min(std::hypot(u, v) / scale, 1.0);
      const auto px = encode_flow_color(u, v, sat);
      std::memcpy(&img.rgb[(static_cast<std::size_t>(r) * img.cols + c) * 3], px.data(), 3);
    }
  return img;
}

// ---------------------------------------------------------------------------
// Files

/// Writes frames stacked vertically into one RGB PNG.
inline void write_png(const std::string& path, const std::vector<FlowImage>& frames) {
  if (frames.empty()) throw EmptyInput("no frames to write");
  const int rows = frames.front().rows, cols = frames.front().cols;
  cv::Mat strip(rows * static_cast<int>(frames.size()), cols, CV_8UC3);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].rows != rows || frames[i].cols != cols) throw ShapeMismatch("filmstrip frames");
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const auto px = frames[i].at(r, c);
        strip.at<cv::Vec3b>(static_cast<int>(i) * rows + r, c) = cv::Vec3b(px[2], px[1], px[0]);
      }
  }
  if (!cv::imwrite(path, strip)) throw IoError("cannot write " + path);
}

inline void write_png(const std::string& path, const FlowImage& frame) {
  write_png(path, std::vector<FlowImage>{frame});
}

/// Reads a vertical filmstrip of square frames (frame height = image width).
inline std::vector<FlowImage> read_png_filmstrip(const std::string& path) {
  const cv::Mat strip = cv::imread(path, cv::IMREAD_COLOR);
  if (strip.empty()) throw IoError("cannot read " + path);
  const int side = strip.cols;
  if (strip.rows % side != 0) throw FormatError(path + ": filmstrip height not a multiple of width");
  std::vector<FlowImage> out(static_cast<std::size_t>(strip.rows / side));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].rows = out[i].cols = side;
    out[i].rgb.resize(static_cast<std::size_t>(side) * side * 3);
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c) {
        const auto px = strip.at<cv::Vec3b>(static_cast<int>(i) * side + r, c);
        auto* dst = &out[i].rgb[(static_cast<std::size_t>(r) * side + c) * 3];
        dst[0] = px[2];
        dst[1] = px[1];
        dst[2] = px[0];
      }
  }
  return out;
}

// Raw flow file: 8-byte magic "VVADFLOW", uint32 H, uint32 W (little endian),
// then H*W float32 u values followed by H*W float32 v values.
inline constexpr char kFlowMagic[8] = {'V', 'V', 'A', 'D', 'F', 'L', 'O', 'W'};

inline void write_flow(const std::string& path, const FlowFrame& flow) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  const std::uint32_t dims[2] = {static_cast<std::uint32_t>(flow.rows()),
                                 static_cast<std::uint32_t>(flow.cols())};
  os.write(kFlowMagic, 8);
  os.write(reinterpret_cast<const char*>(dims), sizeof dims);
  os.write(reinterpret_cast<const char*>(flow.u.data()), static_cast<std::streamsize>(flow.u.size() * 4));
  os.write(reinterpret_cast<const char*>(flow.v.data()), static_cast<std::streamsize>(flow.v.size() * 4));
}

inline FlowFrame read_flow(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read " + path);
  char magic[8];
  std::uint32_t dims[2];
  if (!is.read(magic, 8) || std::memcmp(magic, kFlowMagic, 8) != 0)
    throw FormatError(path + ": bad flow magic");
  if (!is.read(reinterpret_cast<char*>(dims), sizeof dims)) throw FormatError(path + ": short header");
  FlowFrame f{Plane(dims[0], dims[1]), Plane(dims[0], dims[1])};
  is.read(reinterpret_cast<char*>(f.u.data()), static_cast<std::streamsize>(f.u.size() * 4));
  is.read(reinterpret_cast<char*>(f.v.data()), static_cast<std::streamsize>(f.v.size() * 4));
  if (!is) throw FormatError(path + ": truncated flow data");
  return f;
}

}  // namespace vvad
