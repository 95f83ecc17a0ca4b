#pragma once

#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace vertereg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using PointList = std::vector<Vec3>;

/// Rotation quaternion, scalar first. Unit norm is not enforced by the type;
/// every function that interprets it as a rotation normalizes first.
struct Quaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static Quaternion identity() { return {}; }
  static Quaternion from_axis_angle(const Vec3& axis, double angle);
  static Quaternion from_matrix(const Mat3& rotation);

  double norm() const;
  double dot(const Quaternion& other) const { return w * other.w + x * other.x + y * other.y + z * other.z; }
  Vec3 vec() const { return {x, y, z}; }

  /// Throws Errc::invalid_argument on a zero quaternion.
  Quaternion normalized() const;
  Quaternion conjugate() const { return {w, -x, -y, -z}; }
  Quaternion operator-() const { return {-w, -x, -y, -z}; }
  Quaternion operator*(const Quaternion& rhs) const;

  Mat3 to_matrix() const;
  Vec3 rotate(const Vec3& v) const { return to_matrix() * v; }

  bool operator==(const Quaternion&) const = default;
};

/// Rotation angle 2*acos(|<q_t, q_p>|) in [0, pi] after normalizing both
/// inputs. Evaluated through atan2 of the relative rotation so that angles
/// near zero keep full precision.
double geodesic_angle(const Quaternion& q_t, const Quaternion& q_p);

/// (1 - |q|)^2
double norm_penalty(const Quaternion& q);

/// Rotation by alpha about the camera z axis: [cos(a/2), 0, 0, sin(a/2)].
Quaternion z_rotation_quat(double alpha);

/// Returns q or -q, whichever lies in the hemisphere of `reference`.
Quaternion align_hemisphere(const Quaternion& reference, const Quaternion& q);

/// Proper rigid motion p -> R p + t, lengths in mm.
struct RigidTransform {
  Quaternion rotation;
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_translation(const Vec3& t) { return {Quaternion{}, t}; }
  static RigidTransform from_rotation(const Quaternion& q) { return {q, Vec3::Zero()}; }
  /// Rotation about an arbitrary pivot point.
  static RigidTransform rotation_about(const Quaternion& q, const Vec3& pivot);
  static RigidTransform from_matrix(const Mat3& rotation, const Vec3& translation);

  Mat3 rotation_matrix() const { return rotation.to_matrix(); }
  Eigen::Matrix4d matrix() const;

  bool operator==(const RigidTransform& other) const {
    return rotation == other.rotation && translation == other.translation;
  }
};

RigidTransform normalize(const RigidTransform& t);
/// a * b: applies b first, then a.
RigidTransform compose(const RigidTransform& a, const RigidTransform& b);
RigidTransform invert(const RigidTransform& t);
Vec3 apply(const RigidTransform& t, const Vec3& p);
PointList transform_points(const RigidTransform& t, std::span<const Vec3> points);

inline RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) { return compose(a, b); }

/// Geodesic angle between the rotation parts of two transforms.
double rotation_distance(const RigidTransform& a, const RigidTransform& b);
double translation_distance(const RigidTransform& a, const RigidTransform& b);

/// Rigid least-squares alignment (no scale) of corresponded point sets:
/// returns T minimizing sum |T src_i - dst_i|^2 with det(R) = +1.
/// Throws Errc::degenerate_configuration for fewer than three pairs or a
/// cross-covariance of rank below two (collinear or coincident points).
RigidTransform umeyama(std::span<const Vec3> src, std::span<const Vec3> dst);

}  // namespace vertereg
