#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "vertereg/cloud.hpp"
#include "vertereg/geom.hpp"

namespace vertereg {

/// Calibrated, undistorted stereo pair. Points are expressed in the left
/// camera frame; `right_in_left` is the right camera's pose in that frame.
struct StereoRig {
  CameraIntrinsics left;
  CameraIntrinsics right;
  RigidTransform right_in_left;

  void validate() const;
  Eigen::Vector2d project_left(const Vec3& p) const { return left.project(p); }
  Eigen::Vector2d project_right(const Vec3& p) const;
};

using Pixel = Eigen::Vector2d;

/// Four corners of one fiducial seen in both images, in a fixed order.
struct MarkerObservation {
  int id = 0;
  std::array<Pixel, 4> left;
  std::array<Pixel, 4> right;
};

/// Corner coordinates of every marker in the sleeve frame (mm).
struct MarkerReference {
  std::map<int, std::array<Vec3, 4>> corners;

  /// Throws Errc::degenerate_configuration when all corners are coplanar.
  void validate() const;
};

/// Midpoint of the shortest segment between the two viewing rays.
/// Throws Errc::unreliable_triangulation for (near) parallel rays or when
/// the rays miss each other by more than max_gap_mm.
Vec3 triangulate_point(const Pixel& left, const Pixel& right, const StereoRig& rig, double max_gap_mm = 10.0);

/// Triangulates all four corners of every observation: 4, 8 or 12 points
/// in observation order.
PointList triangulate(std::span<const MarkerObservation> observations, const StereoRig& rig,
                      double max_gap_mm = 10.0);
std::array<Vec3, 4> triangulate(const MarkerObservation& observation, const StereoRig& rig,
                                double max_gap_mm = 10.0);

/// Sleeve pose (sleeve -> left camera) from triangulated corners, four per
/// id in `ids` order. Throws Errc::insufficient_markers below two markers.
RigidTransform marker_pose(std::span<const Vec3> observed, const MarkerReference& reference,
                           std::span<const int> ids);

/// Triangulates the observations of known markers and solves for the
/// sleeve pose; markers with unreliable triangulation are dropped.
/// Returns nullopt when fewer than two usable markers remain.
std::optional<RigidTransform> estimate_sleeve_pose(std::span<const MarkerObservation> observations,
                                                   const StereoRig& rig, const MarkerReference& reference);

struct KalmanConfig {
  double sigma_accel_mm = 2.0;    // process noise, mm/s^2
  double sigma_meas_mm = 1.0;     // measurement noise, mm
  double sigma_accel_rot = 0.01;  // quaternion component process noise, 1/s^2
  double sigma_meas_rot = 0.005;  // quaternion component measurement noise
};

/// Constant-acceleration Kalman filter on one scalar channel, state
/// [position, velocity, acceleration].
class ConstantAccelerationFilter {
 public:
  void initialize(double position, double meas_sigma);
  double step(double measurement, double dt, double accel_sigma, double meas_sigma);

  bool initialized() const { return initialized_; }
  const Eigen::Vector3d& state() const { return x_; }
  const Eigen::Matrix3d& covariance() const { return p_; }

 private:
  bool initialized_ = false;
  Eigen::Vector3d x_ = Eigen::Vector3d::Zero();
  Eigen::Matrix3d p_ = Eigen::Matrix3d::Zero();
};

struct KalmanState {
  std::array<ConstantAccelerationFilter, 3> translation;
  std::array<ConstantAccelerationFilter, 4> rotation;
  std::optional<Quaternion> last_rotation;
};

/// Filters one pose measurement. The first call initializes the state and
/// returns the measurement unchanged. Rotation components are brought into
/// the hemisphere of the previous output before filtering and the filtered
/// quaternion is renormalized. Throws Errc::invalid_argument for dt <= 0.
RigidTransform kalman_step(KalmanState& state, const RigidTransform& measured, double dt,
                           const KalmanConfig& config = {});

}  // namespace vertereg
