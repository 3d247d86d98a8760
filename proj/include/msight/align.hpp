#pragma once

#include "msight/image.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace msight {

enum class MotionModel { Translation, Affine, Homography };

/// 3x3 projective map from input-image pixels to standard-view pixels.
/// Translation and affine variants keep the fixed bottom row (0, 0, 1).
struct AlignTransform {
  Eigen::Matrix3d w = Eigen::Matrix3d::Identity();
  MotionModel model = MotionModel::Homography;
};

struct AlignOptions {
  MotionModel model = MotionModel::Homography;
  int max_iters = 200;
  /// Stop once the parameter update norm falls below eps (per pyramid level).
  double eps = 1e-8;
  int pyramid_levels = 3;
};

struct AlignResult {
  AlignTransform transform;
  double ecc = 0.0;
  double identity_ecc = 0.0;
  int iterations = 0;
  bool converged = false;
  /// Set when no transform beat the identity; the identity is returned.
  bool no_improvement = false;
};

/// Enhanced correlation coefficient between the standard view and the input
/// warped into it by t, over the pixels where the warp is defined.
double ecc_value(const GrayImage& input, const GrayImage& standard, const AlignTransform& t);

/// Forward-additive ECC maximization, coarse to fine.
/// Errors: SizeMismatch, FlatImage (standard has no variance), Diverged
/// (objective fell for 5 consecutive iterations).
AlignResult estimate_transform(const GrayImage& input, const GrayImage& standard, const AlignOptions& opts = {});

struct WarpedGray {
  GrayImage image;
  std::vector<std::uint8_t> valid;  // 1 where the source pixel existed
};

struct WarpedRgb {
  RgbImage image;
  std::vector<std::uint8_t> valid;
};

/// dst(x) = src(t^-1 x), bilinear, zero outside. Throws SingularTransform.
WarpedGray warp_perspective(const GrayImage& img, const AlignTransform& t);
WarpedRgb warp_perspective(const RgbImage& img, const AlignTransform& t);

}  // namespace msight
