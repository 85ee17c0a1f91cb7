#pragma once

// Resolution- and pose-invariant normalization of 68-point 3D facial landmarks.
//
// Coordinates follow the image plane (x right, y down, pixels) with z as depth,
// +z pointing toward the camera. Landmark indices use the 0-based iBUG-68
// layout.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "vvad/error.hpp"

namespace vvad {

inline constexpr int kNumLandmarks = 68;
inline constexpr int kLandmarkDim = kNumLandmarks * 3;
inline constexpr int kRightEyeOuter = 36;
inline constexpr int kLeftEyeOuter = 45;
inline constexpr double kDegenerateEyeDistance = 1e-9;

using LandmarkPoints = Eigen::Matrix<double, kNumLandmarks, 3, Eigen::RowMajor>;

struct LandmarkFrame {
  LandmarkPoints points = LandmarkPoints::Zero();

  double inter_ocular() const {
    return (points.row(kLeftEyeOuter) - points.row(kRightEyeOuter)).norm();
  }
  bool operator==(const LandmarkFrame&) const = default;
};

struct LandmarkSequence {
  std::vector<LandmarkFrame> frames;
  double frame_rate = 25.0;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
};

/// Frontal template with unit inter-ocular distance.
struct MeanFace {
  LandmarkPoints points = LandmarkPoints::Zero();
};

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  LandmarkPoints apply(const LandmarkPoints& p) const {
    LandmarkPoints out = p * rotation.transpose();
    out.rowwise() += translation.transpose();
    return out;
  }
  LandmarkFrame apply(const LandmarkFrame& f) const { return {apply(f.points)}; }

  bool is_proper(double tol = 1e-9) const {
    const double ortho = (rotation * rotation.transpose() - Eigen::Matrix3d::Identity())
                             .cwiseAbs()
                             .maxCoeff();
    return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

/// Uniformly rescales about the origin so that the outer eye corners are at
/// distance 1.
inline LandmarkFrame scale_normalize(const LandmarkFrame& frame) {
  if (!frame.points.allFinite()) throw DegenerateFace("non-finite landmark coordinates");
  const double d = frame.inter_ocular();
  if (!(d >= kDegenerateEyeDistance))
    throw DegenerateFace("inter-ocular distance " + std::to_string(d) + " below tolerance");
  return {frame.points / d};
}

/// Least-squares rigid transform mapping `source` onto `target` (Kabsch).
inline RigidTransform fit_rigid(const LandmarkPoints& source, const LandmarkPoints& target) {
  const Eigen::RowVector3d src_mean = source.colwise().mean();
  const Eigen::RowVector3d dst_mean = target.colwise().mean();
  const Eigen::Matrix<double, kNumLandmarks, 3> src = source.rowwise() - src_mean;
  const Eigen::Matrix<double, kNumLandmarks, 3> dst = target.rowwise() - dst_mean;

  // cross-covariance, source rows against target rows
  const Eigen::Matrix3d cov = src.transpose() * dst;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  const double scale = std::max(sv(0), std::numeric_limits<double>::min());
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * scale)
    throw DegenerateConfiguration("cross-covariance rank < 2 (collinear points)");

  const Eigen::Matrix3d& u = svd.matrixU();
  const Eigen::Matrix3d& v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;

  RigidTransform t;
  t.rotation = v * d * u.transpose();
  t.translation = dst_mean.transpose() - t.rotation * src_mean.transpose();
  return t;
}

inline RigidTransform fit_rigid(const LandmarkFrame& source, const MeanFace& target) {
  return fit_rigid(source.points, target.points);
}

inline double rms_residual(const LandmarkPoints& source, const LandmarkPoints& target,
                           const RigidTransform& t) {
  return std::sqrt((t.apply(source) - target).rowwise().squaredNorm().mean());
}

/// Scale-normalizes then rigidly aligns every frame to `tmpl`, independently.
inline LandmarkSequence frontalize(const LandmarkSequence& seq, const MeanFace& tmpl) {
  LandmarkSequence out;
  out.frame_rate = seq.frame_rate;
  out.frames.reserve(seq.frames.size());
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    try {
      const LandmarkFrame norm = scale_normalize(seq.frames[i]);
      out.frames.push_back(fit_rigid(norm, tmpl).apply(norm));
    } catch (const DegenerateFace& e) {
      throw DegenerateFace("frame " + std::to_string(i) + ": " + e.what());
    } catch (const DegenerateConfiguration& e) {
      throw DegenerateConfiguration("frame " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

using LandmarkVector = std::array<double, kLandmarkDim>;

/// Per frame (x0, y0, z0, ..., x67, y67, z67).
inline std::vector<LandmarkVector> flatten(const LandmarkSequence& seq) {
  std::vector<LandmarkVector> out(seq.frames.size());
  for (std::size_t f = 0; f < seq.frames.size(); ++f)
    std::copy(seq.frames[f].points.data(), seq.frames[f].points.data() + kLandmarkDim,
              out[f].begin());
  return out;
}

inline LandmarkSequence unflatten(const std::vector<LandmarkVector>& vectors,
                                  double frame_rate = 25.0) {
  LandmarkSequence seq;
  seq.frame_rate = frame_rate;
  seq.frames.resize(vectors.size());
  for (std::size_t f = 0; f < vectors.size(); ++f)
    std::copy(vectors[f].begin(), vectors[f].end(), seq.frames[f].points.data());
  return seq;
}

// ---------------------------------------------------------------------------
// Bilateral symmetry and template construction

/// Index of each landmark's mirror image across the facial midline.
inline const std::array<int, kNumLandmarks>& mirror_index() {
  static const std::array<int, kNumLandmarks> table = [] {
    std::array<int, kNumLandmarks> m{};
    for (int i = 0; i < kNumLandmarks; ++i) m[i] = i;
    auto pair = [&](int a, int b) { m[a] = b; m[b] = a; };
    for (int i = 0; i <= 7; ++i) pair(i, 16 - i);      // jaw
    for (int i = 17; i <= 21; ++i) pair(i, 43 - i);    // brows
    pair(31, 35); pair(32, 34);                        // nostrils
    pair(36, 45); pair(37, 44); pair(38, 43);          // eyes
    pair(39, 42); pair(40, 47); pair(41, 46);
    pair(48, 54); pair(49, 53); pair(50, 52);          // outer lip
    pair(55, 59); pair(56, 58);
    pair(60, 64); pair(61, 63); pair(65, 67);          // inner lip
    return m;
  }();
  return table;
}

/// Reflection x -> -x with landmark relabeling.
inline LandmarkPoints mirror(const LandmarkPoints& p) {
  LandmarkPoints out;
  const auto& m = mirror_index();
  for (int i = 0; i < kNumLandmarks; ++i) out.row(i) << -p(m[i], 0), p(m[i], 1), p(m[i], 2);
  return out;
}

inline double asymmetry(const LandmarkPoints& p) {
  return (p - mirror(p)).cwiseAbs().maxCoeff();
}

/// Generalized Procrustes mean of `samples`, symmetrized about x = 0, centered,
/// with unit inter-ocular distance. The orientation follows the first sample.
inline MeanFace procrustes_mean(const std::vector<LandmarkFrame>& samples,
                                int max_iterations = 100) {
  if (samples.empty()) throw EmptyInput("procrustes_mean needs at least one sample");
  auto standardize = [](LandmarkPoints p) {
    p.rowwise() -= p.colwise().mean();
    const double d = (p.row(kLeftEyeOuter) - p.row(kRightEyeOuter)).norm();
    if (!(d >= kDegenerateEyeDistance)) throw DegenerateFace("template sample");
    return LandmarkPoints(p / d);
  };
  std::vector<LandmarkPoints> shapes;
  shapes.reserve(samples.size());
  for (const auto& s : samples) shapes.push_back(standardize(s.points));

  LandmarkPoints mean = shapes.front();
  for (int it = 0; it < max_iterations; ++it) {
    LandmarkPoints acc = LandmarkPoints::Zero();
    for (const auto& s : shapes) acc += fit_rigid(s, mean).apply(s);
    const LandmarkPoints next = standardize(acc / static_cast<double>(shapes.size()));
    const double change = (next - mean).cwiseAbs().maxCoeff();
    mean = next;
    if (change < 1e-13) break;
  }
  return {standardize(0.5 * (mean + mirror(mean)))};
}

// ---------------------------------------------------------------------------
// Landmark files
//
//   # vvad-landmarks v1 frames=<N> frame_rate=<fps>
//   frame,point,x,y,z
//   0,0,<x>,<y>,<z>
//   ...
//
// One row per (frame, point), frames ascending, points 0..67 within a frame.

inline void write_landmarks(std::ostream& os, const LandmarkSequence& seq) {
  os << "# vvad-landmarks v1 frames=" << seq.frames.size()
     << " frame_rate=" << std::setprecision(17) << seq.frame_rate << "\n";
  os << "frame,point,x,y,z\n";
  os << std::setprecision(17);
  for (std::size_t f = 0; f < seq.frames.size(); ++f)
    for (int p = 0; p < kNumLandmarks; ++p) {
      const auto& r = seq.frames[f].points;
      os << f << ',' << p << ',' << r(p, 0) << ',' << r(p, 1) << ',' << r(p, 2) << '\n';
    }
}

inline void write_landmarks(const std::string& path, const LandmarkSequence& seq) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  write_landmarks(os, seq);
}

inline LandmarkSequence read_landmarks(std::istream& is, const std::string& name = "<stream>") {
  std::string line;
  if (!std::getline(is, line) || line.rfind("# vvad-landmarks v1", 0) != 0)
    throw FormatError(name + ": missing landmark header");
  std::size_t n_frames = 0;
  double frame_rate = 25.0;
  {
    std::istringstream hs(line.substr(19));
    std::string tok;
    while (hs >> tok) {
      if (tok.rfind("frames=", 0) == 0) n_frames = std::stoul(tok.substr(7));
      else if (tok.rfind("frame_rate=", 0) == 0) frame_rate = std::stod(tok.substr(11));
    }
  }
  if (!std::getline(is, line) || line != "frame,point,x,y,z")
    throw FormatError(name + ": missing column header");

  LandmarkSequence seq;
  seq.frame_rate = frame_rate;
  seq.frames.resize(n_frames);
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t f = 0;
    int p = 0;
    double x = 0, y = 0, z = 0;
    char c1 = 0, c2 = 0, c3 = 0, c4 = 0;
    if (!(ls >> f >> c1 >> p >> c2 >> x >> c3 >> y >> c4 >> z) || c1 != ',' || c2 != ',' ||
        c3 != ',' || c4 != ',')
      throw FormatError(name + ": malformed row '" + line + "'");
    if (f != rows / kNumLandmarks || p != static_cast<int>(rows % kNumLandmarks) || f >= n_frames)
      throw FormatError(name + ": rows out of order at '" + line + "'");
    seq.frames[f].points.row(p) << x, y, z;
    ++rows;
  }
  if (rows != n_frames * kNumLandmarks) throw FormatError(name + ": truncated landmark file");
  return seq;
}

inline LandmarkSequence read_landmarks(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  return read_landmarks(is, path);
}

inline MeanFace read_template(const std::string& path) {
  const LandmarkSequence seq = read_landmarks(path);
  if (seq.frames.size() != 1) throw FormatError(path + ": template must hold exactly one frame");
  return {seq.frames.front().points};
}

inline void write_template(const std::string& path, const MeanFace& face) {
  LandmarkSequence seq;
  seq.frames.push_back({face.points});
  write_landmarks(path, seq);
}

}  // namespace vvad
