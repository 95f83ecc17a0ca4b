#include "vertereg/maskgen.hpp"

#include <cmath>

#include "vertereg/error.hpp"

namespace vertereg {

void splat_points(DepthMap& depth, std::span<const Vec3> points, const CameraIntrinsics& k) {
  for (const Vec3& p : points) {
    if (!(p.z() > 0.0)) continue;
    const auto uv = k.project(p);
    const int u = static_cast<int>(std::lround(uv.x()));
    const int v = static_cast<int>(std::lround(uv.y()));
    if (!depth.contains(u, v)) continue;
    float& d = depth.at(u, v);
    const auto z = static_cast<float>(p.z());
    if (d == 0.0f || z < d) d = z;
  }
}

DepthMap render_depth(std::span<const PointList> posed_models, const CameraIntrinsics& k) {
  k.validate();
  DepthMap depth(k.width, k.height, 0.0f);
  for (const PointList& model : posed_models) splat_points(depth, model, k);
  return depth;
}

BinaryMask synth_mask(const DepthMap& rendered, const DepthMap& sensor, double thresh_mm) {
  if (!rendered.same_shape(sensor)) throw Error(Errc::dimension_mismatch, "synth_mask: depth maps differ in size");
  BinaryMask mask(rendered.width, rendered.height, 0);
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const float r = rendered.data[i];
    const float s = sensor.data[i];
    if (r > 0.0f && s > 0.0f && std::abs(static_cast<double>(r) - static_cast<double>(s)) < thresh_mm) {
      mask.data[i] = 1;
    }
  }
  return mask;
}

BinaryMask smooth_mask(const BinaryMask& mask, int k) {
  if (k <= 0 || k % 2 == 0) throw Error(Errc::invalid_argument, "smooth_mask: kernel size must be odd and positive");
  const int w = mask.width;
  const int h = mask.height;
  const int r = k / 2;
  // Summed-area table with a zero border gives the zero-padded box sum.
  std::vector<std::int64_t> sat(static_cast<std::size_t>(w + 1) * (h + 1), 0);
  auto s = [&](int u, int v) -> std::int64_t& { return sat[static_cast<std::size_t>(v) * (w + 1) + u]; };
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      s(u + 1, v + 1) = (mask.at(u, v) != 0 ? 1 : 0) + s(u, v + 1) + s(u + 1, v) - s(u, v);
    }
  }
  // sum / k^2 >= 0.5  <=>  2 * sum >= k^2
  const std::int64_t k2 = static_cast<std::int64_t>(k) * k;
  BinaryMask out(w, h, 0);
  for (int v = 0; v < h; ++v) {
    const int v0 = std::max(0, v - r);
    const int v1 = std::min(h, v + r + 1);
    for (int u = 0; u < w; ++u) {
      const int u0 = std::max(0, u - r);
      const int u1 = std::min(w, u + r + 1);
      const std::int64_t sum = s(u1, v1) - s(u0, v1) - s(u1, v0) + s(u0, v0);
      out.at(u, v) = 2 * sum >= k2 ? 1 : 0;
    }
  }
  return out;
}

double dice_loss(const RealMask& pred, const BinaryMask& gt, double smoothing) {
  if (!pred.same_shape(gt)) throw Error(Errc::dimension_mismatch, "dice_loss: masks differ in size");
  double inter = 0.0;
  double sum_pred = 0.0;
  double sum_gt = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double g = gt.data[i] != 0 ? 1.0 : 0.0;
    inter += pred.data[i] * g;
    sum_pred += pred.data[i];
    sum_gt += g;
  }
  return 1.0 - (2.0 * inter + smoothing) / (sum_pred + sum_gt + smoothing);
}

double dice_loss(const BinaryMask& pred, const BinaryMask& gt, double smoothing) {
  RealMask soft(pred.width, pred.height, 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i) soft.data[i] = pred.data[i] != 0 ? 1.0 : 0.0;
  return dice_loss(soft, gt, smoothing);
}

double total_loss(std::span<const LossTerms> batch) {
  if (batch.empty()) throw Error(Errc::empty_input, "total_loss: empty batch");
  double dice = 0.0;
  double orientation = 0.0;
  for (const LossTerms& t : batch) {
    dice += t.dice;
    orientation += t.geodesic + t.norm_penalty;
  }
  const auto b = static_cast<double>(batch.size());
  return dice / b + orientation / b;
}

std::pair<BinaryMask, Quaternion> augment(const BinaryMask& mask, const Quaternion& q_gt, double alpha) {
  const Quaternion q = z_rotation_quat(alpha) * q_gt;
  if (alpha == 0.0) return {mask, q};
  const double cu = 0.5 * (mask.width - 1);
  const double cv = 0.5 * (mask.height - 1);
  const double c = std::cos(alpha);
  const double s = std::sin(alpha);
  BinaryMask out(mask.width, mask.height, 0);
  for (int v = 0; v < mask.height; ++v) {
    for (int u = 0; u < mask.width; ++u) {
      // Inverse map: the source pixel is the target rotated by -alpha.
      const double du = u - cu;
      const double dv = v - cv;
      const int su = static_cast<int>(std::lround(c * du + s * dv + cu));
      const int sv = static_cast<int>(std::lround(-s * du + c * dv + cv));
      if (mask.contains(su, sv)) out.at(u, v) = mask.at(su, sv);
    }
  }
  return {out, q};
}

}  // namespace vertereg
