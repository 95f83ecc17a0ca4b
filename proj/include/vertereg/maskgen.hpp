#pragma once

#include <span>
#include <utility>
#include <vector>

#include "vertereg/cloud.hpp"
#include "vertereg/geom.hpp"

namespace vertereg {

/// Point-splat z-buffer: each point lands on its nearest pixel and the
/// smallest depth per pixel wins. Points with z <= 0 or outside the image
/// are skipped. Uncovered pixels stay 0 (invalid).
DepthMap render_depth(std::span<const PointList> posed_models, const CameraIntrinsics& k);
/// Splats into an existing depth map (min-depth merge).
void splat_points(DepthMap& depth, std::span<const Vec3> points, const CameraIntrinsics& k);

/// Ground-truth mask: true where both depths are valid and
/// |rendered - sensor| < thresh_mm.
BinaryMask synth_mask(const DepthMap& rendered, const DepthMap& sensor, double thresh_mm = 10.0);

/// k x k box filter with weights 1/k^2 and zero padding, then >= 0.5.
/// Throws Errc::invalid_argument for even or non-positive k.
BinaryMask smooth_mask(const BinaryMask& mask, int k = 15);

/// 1 - (2 sum(pred*gt) + s) / (sum(pred) + sum(gt) + s), s = smoothing.
double dice_loss(const RealMask& pred, const BinaryMask& gt, double smoothing = 1.0);
double dice_loss(const BinaryMask& pred, const BinaryMask& gt, double smoothing = 1.0);

struct LossTerms {
  double dice = 0.0;
  double geodesic = 0.0;
  double norm_penalty = 0.0;
};

/// Batch loss: mean(dice) + mean(geodesic + norm_penalty).
/// Throws Errc::empty_input on an empty batch.
double total_loss(std::span<const LossTerms> batch);

/// Rotates the mask by alpha about the image center (nearest-neighbor
/// resampling, out-of-image samples read as false) and left-multiplies the
/// orientation label by z_rotation_quat(alpha).
std::pair<BinaryMask, Quaternion> augment(const BinaryMask& mask, const Quaternion& q_gt, double alpha);

}  // namespace vertereg
