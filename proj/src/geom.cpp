#include "vertereg/geom.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "vertereg/error.hpp"

namespace vertereg {

Quaternion Quaternion::from_axis_angle(const Vec3& axis, double angle) {
  const double n = axis.norm();
  if (n == 0.0) {
    if (angle == 0.0) return {};
    throw Error(Errc::invalid_argument, "rotation axis has zero length");
  }
  const Vec3 a = axis / n;
  const double s = std::sin(0.5 * angle);
  return {std::cos(0.5 * angle), a.x() * s, a.y() * s, a.z() * s};
}

Quaternion Quaternion::from_matrix(const Mat3& m) {
  // Shepperd's method: pivot on the largest of the four squared components.
  const double trace = m.trace();
  Quaternion q;
  if (trace >= m(0, 0) && trace >= m(1, 1) && trace >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + trace);
    q = {0.25 * s, (m(2, 1) - m(1, 2)) / s, (m(0, 2) - m(2, 0)) / s, (m(1, 0) - m(0, 1)) / s};
  } else if (m(0, 0) >= m(1, 1) && m(0, 0) >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(0, 0) - m(1, 1) - m(2, 2));
    q = {(m(2, 1) - m(1, 2)) / s, 0.25 * s, (m(0, 1) + m(1, 0)) / s, (m(0, 2) + m(2, 0)) / s};
  } else if (m(1, 1) >= m(2, 2)) {
    const double s = 2.0 * std::sqrt(1.0 + m(1, 1) - m(0, 0) - m(2, 2));
    q = {(m(0, 2) - m(2, 0)) / s, (m(0, 1) + m(1, 0)) / s, 0.25 * s, (m(1, 2) + m(2, 1)) / s};
  } else {
    const double s = 2.0 * std::sqrt(1.0 + m(2, 2) - m(0, 0) - m(1, 1));
    q = {(m(1, 0) - m(0, 1)) / s, (m(0, 2) + m(2, 0)) / s, (m(1, 2) + m(2, 1)) / s, 0.25 * s};
  }
  if (q.w < 0.0) q = -q;
  return q.normalized();
}

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw Error(Errc::invalid_argument, "quaternion has zero or non-finite norm");
  }
  return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::operator*(const Quaternion& r) const {
  return {w * r.w - x * r.x - y * r.y - z * r.z,
          w * r.x + x * r.w + y * r.z - z * r.y,
          w * r.y - x * r.z + y * r.w + z * r.x,
          w * r.z + x * r.y - y * r.x + z * r.w};
}

Mat3 Quaternion::to_matrix() const {
  const Quaternion q = normalized();
  const double xx = q.x * q.x, yy = q.y * q.y, zz = q.z * q.z;
  const double xy = q.x * q.y, xz = q.x * q.z, yz = q.y * q.z;
  const double wx = q.w * q.x, wy = q.w * q.y, wz = q.w * q.z;
  Mat3 m;
  m << 1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy),
       2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx),
       2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy);
  return m;
}

double geodesic_angle(const Quaternion& q_t, const Quaternion& q_p) {
  const Quaternion rel = q_t.normalized().conjugate() * q_p.normalized();
  return 2.0 * std::atan2(rel.vec().norm(), std::abs(rel.w));
}

double norm_penalty(const Quaternion& q) {
  const double d = 1.0 - q.norm();
  return d * d;
}

Quaternion z_rotation_quat(double alpha) { return {std::cos(0.5 * alpha), 0.0, 0.0, std::sin(0.5 * alpha)}; }

Quaternion align_hemisphere(const Quaternion& reference, const Quaternion& q) {
  return reference.dot(q) < 0.0 ? -q : q;
}

RigidTransform RigidTransform::rotation_about(const Quaternion& q, const Vec3& pivot) {
  return {q.normalized(), pivot - q.to_matrix() * pivot};
}

RigidTransform RigidTransform::from_matrix(const Mat3& rotation, const Vec3& translation) {
  return {Quaternion::from_matrix(rotation), translation};
}

Eigen::Matrix4d RigidTransform::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

RigidTransform normalize(const RigidTransform& t) { return {t.rotation.normalized(), t.translation}; }

RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return {(a.rotation.normalized() * b.rotation.normalized()).normalized(),
          a.rotation.to_matrix() * b.translation + a.translation};
}

RigidTransform invert(const RigidTransform& t) {
  const Quaternion inv = t.rotation.normalized().conjugate();
  return {inv, -(inv.to_matrix() * t.translation)};
}

Vec3 apply(const RigidTransform& t, const Vec3& p) { return t.rotation.to_matrix() * p + t.translation; }

PointList transform_points(const RigidTransform& t, std::span<const Vec3> points) {
  const Mat3 r = t.rotation.to_matrix();
  PointList out;
  out.reserve(points.size());
  for (const Vec3& p : points) out.push_back(r * p + t.translation);
  return out;
}

double rotation_distance(const RigidTransform& a, const RigidTransform& b) {
  return geodesic_angle(a.rotation, b.rotation);
}

double translation_distance(const RigidTransform& a, const RigidTransform& b) {
  return (a.translation - b.translation).norm();
}

RigidTransform umeyama(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) {
    throw Error(Errc::dimension_mismatch, "umeyama: point lists differ in length");
  }
  const std::size_t n = src.size();
  if (n < 3) throw Error(Errc::degenerate_configuration, "umeyama: fewer than three correspondences");

  Vec3 src_mean = Vec3::Zero();
  Vec3 dst_mean = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    src_mean += src[i];
    dst_mean += dst[i];
  }
  src_mean /= static_cast<double>(n);
  dst_mean /= static_cast<double>(n);

  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    cov.noalias() += (dst[i] - dst_mean) * (src[i] - src_mean).transpose();
  }

  const Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0.0) || sv(1) <= 1e-12 * sv(0)) {
    throw Error(Errc::degenerate_configuration, "umeyama: cross-covariance is rank deficient");
  }
  Mat3 s = Mat3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) s(2, 2) = -1.0;
  const Mat3 r = svd.matrixU() * s * svd.matrixV().transpose();
  return {Quaternion::from_matrix(r), dst_mean - r * src_mean};
}

}  // namespace vertereg
