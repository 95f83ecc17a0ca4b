#pragma once

#include <array>
#include <climits>
#include <cstdint>
#include <optional>
#include <vector>

#include "vertereg/cloud.hpp"
#include "vertereg/frame.hpp"
#include "vertereg/geom.hpp"
#include "vertereg/model.hpp"
#include "vertereg/track.hpp"

namespace vertereg {

/// Synthetic lumbar spine in front of one depth sensor and one stereo
/// tracking camera.
struct Scene {
  std::vector<VertebraModel> vertebrae;  // L1..L5, combined model frame
  RigidTransform spine_pose;             // model -> depth sensor, nominal placement
  CameraIntrinsics intrinsics;           // depth sensor
  StereoRig rig;                         // tracking camera
  MarkerReference sleeve;                // drill-sleeve marker corners
  RigidTransform sleeve_pose;            // sleeve -> left tracking camera, nominal
  double background_offset_mm = 60.0;    // table plane behind the spine

  /// Centroid of a vertebra's registration points in the model frame.
  Vec3 vertebra_center(int id) const;
};

/// Deterministic scene from `seed`. Every anatomical length is multiplied by
/// `scale`; `spacing_mm` is the surface sampling distance.
/// Throws Errc::invalid_argument unless scale and spacing are positive.
Scene make_scene(std::uint64_t seed = 1, double scale = 1.0, double spacing_mm = 0.5);

/// Axis-aligned box in the depth-sensor frame, present on frames
/// [first_frame, last_frame].
struct Occluder {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();
  int first_frame = 1;
  int last_frame = INT_MAX;

  bool active(int frame) const { return frame >= first_frame && frame <= last_frame; }
  /// Entry depth of the pixel ray through (u, v), if the ray hits the box.
  std::optional<double> ray_depth(const CameraIntrinsics& k, int u, int v) const;
};

enum class MotionKind { sinusoid, linear };

/// Rigid perturbation of one vertebra (or of all with vertebra = 0),
/// expressed in the model frame about the vertebra center.
/// sinusoid: offset = translation * sin(2 pi f t + phase), angle likewise.
/// linear: offset = translation * (frames since first_frame).
struct Motion {
  int vertebra = 0;
  MotionKind kind = MotionKind::sinusoid;
  Vec3 translation = Vec3::Zero();  // mm amplitude, or mm per frame
  Vec3 axis = Vec3::UnitX();
  double angle_deg = 0.0;           // degrees amplitude, or degrees per frame
  double frequency_hz = 0.0;
  double phase = 0.0;
  int first_frame = 1;
  int last_frame = INT_MAX;

  RigidTransform at(int frame, double fps, const Vec3& center) const;
};

struct RecordingSpec {
  int frame_count = 200;
  double fps = 30.0;
  double depth_noise_mm = 0.0;
  double dropout = 0.0;
  std::vector<Occluder> occluders;
  std::vector<Motion> motions;
  double tilt_deg = 0.0;            // sensor forward axis vs coronal normal
  double prior_error_deg = 0.0;     // orientation-prior corruption
  double placement_jitter_deg = 0.0;
  double placement_jitter_mm = 0.0;
  double deformation_deg = 0.0;     // scene vertebrae vs preoperative models
  double deformation_mm = 0.0;
  double marker_noise_px = 0.5;
  double drill_motion_mm = 5.0;
  bool markers = true;
  int target_vertebra = 3;
  Side target_side = Side::left;

  /// Throws Errc::invalid_argument for fps <= 0, negative noise, dropout
  /// outside [0, 1), a frame count below 1 or a bad target.
  void validate() const;
};

/// Scale of the quantized sensor depth (mm per stored unit).
inline constexpr float kDepthUnitMm = 0.1f;

/// Lazily generated recording. Frame k depends only on (scene, spec, seed, k).
class SimulatedRecording final : public FrameSource {
 public:
  /// Throws Errc::rejected_spec when an occluder hides the whole image in
  /// the initial frame.
  SimulatedRecording(Scene scene, RecordingSpec spec, std::uint64_t seed);

  int frame_count() const override { return spec_.frame_count; }
  Frame frame(int index) const override;
  const CameraIntrinsics& intrinsics() const override { return scene_.intrinsics; }
  double fps() const override { return spec_.fps; }

  const Scene& scene() const { return scene_; }
  const RecordingSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }

  /// Ground-truth model -> sensor pose of every vertebra at a frame.
  std::vector<RigidTransform> gt_poses(int index) const;
  RigidTransform drill_pose(int index) const;
  /// Noise-free z-buffer of the posed scene vertebrae.
  DepthMap render(int index) const;
  /// Noise-free sensor view: spine, table plane and active occluders.
  DepthMap clean_depth(int index, const DepthMap& render) const;
  /// Geometry of the scene vertebrae (differs from the preoperative models
  /// when a deformation is configured).
  const std::vector<RigidTransform>& deformations() const { return deformations_; }
  const RigidTransform& placement() const { return placement_; }

 private:
  void check_index(int index) const;

  Scene scene_;
  RecordingSpec spec_;
  std::uint64_t seed_;
  RigidTransform placement_;
  std::vector<RigidTransform> deformations_;
  std::vector<Vec3> centers_;
};

/// Box in front of vertebra `id` that hides roughly `fraction` of its
/// visible points (the part with smallest sensor x).
Occluder occluder_over_vertebra(const Scene& scene, const RigidTransform& pose, int id, double fraction,
                                int first_frame, int last_frame);

/// Rotation of `q` by `angle` about a uniformly random axis drawn from `rng_seed`.
Quaternion corrupt_rotation(const Quaternion& q, double angle_rad, std::uint64_t rng_seed);

}  // namespace vertereg
