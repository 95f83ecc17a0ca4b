#pragma once

#include <optional>
#include <vector>

#include "vertereg/cloud.hpp"
#include "vertereg/geom.hpp"
#include "vertereg/track.hpp"

namespace vertereg {

/// Simulation-only ground truth attached to a frame.
struct FrameOracle {
  BinaryMask mask;
  Quaternion prior;                       // orientation prior for the spine
  std::vector<RigidTransform> gt_poses;   // model -> sensor, one per vertebra
  std::optional<RigidTransform> drill_pose;
};

/// One timestep of sensor data. Indices are 1-based and strictly increasing.
struct Frame {
  int index = 1;
  double timestamp = 0.0;  // seconds
  DepthMap depth;
  std::optional<FrameOracle> oracle;
  std::vector<MarkerObservation> markers;
};

/// Random-access source of frames (lazily generated or read from disk).
class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual int frame_count() const = 0;
  /// 1-based. Throws Errc::invalid_argument when out of range.
  virtual Frame frame(int index) const = 0;
  virtual const CameraIntrinsics& intrinsics() const = 0;
  virtual double fps() const = 0;
};

}  // namespace vertereg
