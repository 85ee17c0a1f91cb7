#pragma once

// Neutral 3D face used by the synthetic generator and the canonical frontal
// template derived from it.

#include <cmath>
#include <numbers>

#include "vvad/landmark_geometry.hpp"

namespace vvad {

inline constexpr const char* kMeanFaceVersion = "v1";

/// Frontal neutral face, unit inter-ocular distance, x = 0 midline. Only the
/// image-left half and the midline are authored; the rest is mirrored.
inline LandmarkFrame neutral_face() {
  LandmarkPoints p = LandmarkPoints::Constant(std::numeric_limits<double>::quiet_NaN());
  auto set = [&](int i, double x, double y, double z) { p.row(i) << x, y, z; };

  for (int i = 0; i <= 8; ++i) {  // jaw, half ellipse
    const double a = std::numbers::pi * i / 16.0;
    set(i, -0.95 * std::cos(a), 0.05 + 1.30 * std::sin(a), -0.50 + 0.30 * std::sin(a));
  }
  set(17, -0.80, -0.28, 0.02);  // right brow
  set(18, -0.65, -0.36, 0.08);
  set(19, -0.50, -0.39, 0.12);
  set(20, -0.35, -0.37, 0.15);
  set(21, -0.20, -0.32, 0.16);
  set(27, 0.0, 0.00, 0.20);  // nose bridge
  set(28, 0.0, 0.15, 0.28);
  set(29, 0.0, 0.30, 0.36);
  set(30, 0.0, 0.45, 0.45);
  set(31, -0.20, 0.55, 0.25);  // nostrils
  set(32, -0.10, 0.58, 0.30);
  set(33, 0.0, 0.60, 0.33);
  set(36, -0.50, 0.00, 0.00);  // right eye
  set(37, -0.40, -0.06, 0.03);
  set(38, -0.25, -0.06, 0.03);
  set(39, -0.15, 0.00, 0.02);
  set(40, -0.25, 0.05, 0.03);
  set(41, -0.40, 0.05, 0.03);
  set(48, -0.40, 0.90, 0.15);  // outer lip
  set(49, -0.25, 0.83, 0.25);
  set(50, -0.10, 0.80, 0.30);
  set(51, 0.0, 0.82, 0.31);
  set(57, 0.0, 1.00, 0.30);
  set(58, -0.10, 0.99, 0.29);
  set(59, -0.25, 0.97, 0.25);
  set(60, -0.30, 0.90, 0.20);  // inner lip
  set(61, -0.10, 0.88, 0.26);
  set(62, 0.0, 0.88, 0.27);
  set(66, 0.0, 0.92, 0.27);
  set(67, -0.10, 0.92, 0.26);

  const auto& m = mirror_index();
  for (int i = 0; i < kNumLandmarks; ++i)
    if (std::isnan(p(i, 0))) p.row(i) << -p(m[i], 0), p(m[i], 1), p(m[i], 2);
  return {p};
}

/// Canonical frontal template: Procrustes mean of the neutral face.
inline const MeanFace& canonical_mean_face() {
  static const MeanFace face = procrustes_mean({neutral_face()});
  return face;
}

// Mouth landmarks. Upper points open upward (-y), lower points downward (+y).
inline constexpr std::array<int, 3> kInnerUpperLip{61, 62, 63};
inline constexpr std::array<int, 3> kInnerLowerLip{65, 66, 67};
inline constexpr std::array<int, 5> kOuterUpperLip{49, 50, 51, 52, 53};
inline constexpr std::array<int, 5> kOuterLowerLip{55, 56, 57, 58, 59};

/// Vertical inner-mouth opening: mean lower-lip y minus mean upper-lip y.
inline double mouth_opening(const LandmarkPoints& p) {
  double upper = 0, lower = 0;
  for (int i : kInnerUpperLip) upper += p(i, 1);
  for (int i : kInnerLowerLip) lower += p(i, 1);
  return (lower - upper) / 3.0;
}

}  // namespace vvad
