#include "vertereg/track.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

#include "vertereg/error.hpp"

namespace vertereg {

void StereoRig::validate() const {
  left.validate();
  right.validate();
  if (!(right_in_left.translation.norm() > 0.0)) {
    throw Error(Errc::invalid_argument, "stereo baseline must be nonzero");
  }
}

Eigen::Vector2d StereoRig::project_right(const Vec3& p) const { return right.project(apply(invert(right_in_left), p)); }

void MarkerReference::validate() const {
  PointList all;
  for (const auto& [id, c] : corners) all.insert(all.end(), c.begin(), c.end());
  if (all.size() < 4) throw Error(Errc::degenerate_configuration, "marker reference needs at least one marker");
  const Vec3 mean = centroid(all);
  Mat3 scatter = Mat3::Zero();
  for (const Vec3& p : all) scatter += (p - mean) * (p - mean).transpose();
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(scatter, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues()(0) <= 1e-9 * eig.eigenvalues()(2)) {
    throw Error(Errc::degenerate_configuration, "marker reference corners are coplanar");
  }
}

Vec3 triangulate_point(const Pixel& left, const Pixel& right, const StereoRig& rig, double max_gap_mm) {
  const Vec3 d1((left.x() - rig.left.cx) / rig.left.fx, (left.y() - rig.left.cy) / rig.left.fy, 1.0);
  const Vec3 o2 = rig.right_in_left.translation;
  const Vec3 d2 = rig.right_in_left.rotation_matrix() *
                  Vec3((right.x() - rig.right.cx) / rig.right.fx, (right.y() - rig.right.cy) / rig.right.fy, 1.0);

  const Vec3 w0 = -o2;  // left center minus right center
  const double a = d1.dot(d1);
  const double b = d1.dot(d2);
  const double c = d2.dot(d2);
  const double d = d1.dot(w0);
  const double e = d2.dot(w0);
  const double denom = a * c - b * b;
  if (denom <= 1e-12 * a * c) {
    throw Error(Errc::unreliable_triangulation, "viewing rays are parallel");
  }
  const double s = (b * e - c * d) / denom;
  const double t = (a * e - b * d) / denom;
  if (!(s > 0.0) || !(t > 0.0)) {
    throw Error(Errc::unreliable_triangulation, "rays intersect behind a camera");
  }
  const Vec3 p1 = s * d1;
  const Vec3 p2 = o2 + t * d2;
  if ((p1 - p2).norm() > max_gap_mm) {
    throw Error(Errc::unreliable_triangulation, "viewing rays miss each other");
  }
  return 0.5 * (p1 + p2);
}

std::array<Vec3, 4> triangulate(const MarkerObservation& observation, const StereoRig& rig, double max_gap_mm) {
  std::array<Vec3, 4> out;
  for (int i = 0; i < 4; ++i) out[i] = triangulate_point(observation.left[i], observation.right[i], rig, max_gap_mm);
  return out;
}

PointList triangulate(std::span<const MarkerObservation> observations, const StereoRig& rig, double max_gap_mm) {
  PointList out;
  out.reserve(observations.size() * 4);
  for (const MarkerObservation& obs : observations) {
    const auto corners = triangulate(obs, rig, max_gap_mm);
    out.insert(out.end(), corners.begin(), corners.end());
  }
  return out;
}

RigidTransform marker_pose(std::span<const Vec3> observed, const MarkerReference& reference,
                           std::span<const int> ids) {
  if (ids.size() < 2) throw Error(Errc::insufficient_markers, "at least two markers are required");
  if (observed.size() != 4 * ids.size()) {
    throw Error(Errc::dimension_mismatch, "expected four observed corners per marker");
  }
  PointList ref;
  ref.reserve(observed.size());
  for (int id : ids) {
    const auto it = reference.corners.find(id);
    if (it == reference.corners.end()) {
      throw Error(Errc::invalid_argument, "marker " + std::to_string(id) + " is not in the reference");
    }
    ref.insert(ref.end(), it->second.begin(), it->second.end());
  }
  return umeyama(ref, observed);
}

std::optional<RigidTransform> estimate_sleeve_pose(std::span<const MarkerObservation> observations,
                                                   const StereoRig& rig, const MarkerReference& reference) {
  PointList points;
  std::vector<int> ids;
  for (const MarkerObservation& obs : observations) {
    if (!reference.corners.contains(obs.id)) continue;
    try {
      const auto corners = triangulate(obs, rig);
      points.insert(points.end(), corners.begin(), corners.end());
      ids.push_back(obs.id);
    } catch (const Error& e) {
      if (e.code() != Errc::unreliable_triangulation) throw;
    }
  }
  if (ids.size() < 2) return std::nullopt;
  return marker_pose(points, reference, ids);
}

void ConstantAccelerationFilter::initialize(double position, double meas_sigma) {
  x_ = {position, 0.0, 0.0};
  // Velocity and acceleration start unknown.
  p_ = Eigen::Vector3d(meas_sigma * meas_sigma, 1e6, 1e6).asDiagonal();
  initialized_ = true;
}

double ConstantAccelerationFilter::step(double measurement, double dt, double accel_sigma, double meas_sigma) {
  if (!initialized_) {
    initialize(measurement, meas_sigma);
    return measurement;
  }
  Eigen::Matrix3d f;
  f << 1.0, dt, 0.5 * dt * dt,
       0.0, 1.0, dt,
       0.0, 0.0, 1.0;
  const Eigen::Vector3d g(0.5 * dt * dt, dt, 1.0);
  x_ = f * x_;
  p_ = f * p_ * f.transpose() + accel_sigma * accel_sigma * g * g.transpose();

  const double r = meas_sigma * meas_sigma;
  const double s = p_(0, 0) + r;
  const Eigen::Vector3d k = p_.col(0) / s;
  x_ += k * (measurement - x_(0));
  // Joseph form keeps the covariance symmetric positive semidefinite.
  Eigen::Matrix3d ikh = Eigen::Matrix3d::Identity();
  ikh.col(0) -= k;
  p_ = ikh * p_ * ikh.transpose() + r * k * k.transpose();
  p_ = 0.5 * (p_ + p_.transpose()).eval();
  return x_(0);
}

RigidTransform kalman_step(KalmanState& state, const RigidTransform& measured, double dt, const KalmanConfig& config) {
  if (!(dt > 0.0)) throw Error(Errc::invalid_argument, "kalman_step: dt must be positive");
  const Quaternion q_meas = state.last_rotation ? align_hemisphere(*state.last_rotation, measured.rotation.normalized())
                                                : measured.rotation.normalized();
  if (!state.last_rotation) {
    for (int a = 0; a < 3; ++a) state.translation[a].initialize(measured.translation[a], config.sigma_meas_mm);
    const std::array<double, 4> c{q_meas.w, q_meas.x, q_meas.y, q_meas.z};
    for (int i = 0; i < 4; ++i) state.rotation[i].initialize(c[i], config.sigma_meas_rot);
    state.last_rotation = q_meas;
    return measured;
  }
  RigidTransform out;
  for (int a = 0; a < 3; ++a) {
    out.translation[a] =
        state.translation[a].step(measured.translation[a], dt, config.sigma_accel_mm, config.sigma_meas_mm);
  }
  const std::array<double, 4> c{q_meas.w, q_meas.x, q_meas.y, q_meas.z};
  std::array<double, 4> f{};
  for (int i = 0; i < 4; ++i) f[i] = state.rotation[i].step(c[i], dt, config.sigma_accel_rot, config.sigma_meas_rot);
  out.rotation = Quaternion{f[0], f[1], f[2], f[3]}.normalized();
  state.last_rotation = out.rotation;
  return out;
}

}  // namespace vertereg
