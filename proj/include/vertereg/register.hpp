#pragma once

#include <span>
#include <vector>

#include "vertereg/cloud.hpp"
#include "vertereg/frame.hpp"
#include "vertereg/geom.hpp"
#include "vertereg/model.hpp"
#include "vertereg/spatial_index.hpp"

namespace vertereg {

struct RegistrationConfig {
  double general_max_corr = 5.0;  // mm
  int general_max_iters = 50;
  double epsilon = 1e-8;
  double piecewise_inlier = 2.0;  // mm, strict
  int piecewise_max_iters = 50;
  bool piecewise_force_full_iters = false;
  double update_gate = 0.9;

  /// Throws Errc::config_error on non-positive distances/iterations or a
  /// gate outside (0, 1].
  void validate() const;
};

/// Initial pose from the orientation prior and the centroid of the largest
/// segmented component. `model_origin` is the model-frame point that lands
/// on the centroid (the centroid of all registration points).
/// Throws Errc::empty_input for an empty cloud.
RigidTransform initial_pose(std::span<const Vec3> largest_component_cloud, const Quaternion& prior,
                            const Vec3& model_origin = Vec3::Zero());

struct GeneralAlignment {
  RigidTransform pose;  // init * icp
  RigidTransform icp;   // combined ICP correction in the model frame
  int iterations = 0;
  std::size_t correspondences = 0;
};

/// Point-to-point ICP of the combined models (source) onto the segmented
/// cloud (target), correspondences capped at general_max_corr.
/// Throws Errc::no_overlap if the first iteration finds fewer than three
/// correspondences.
GeneralAlignment general_alignment(std::span<const Vec3> model_points, const RigidTransform& init,
                                   std::span<const Vec3> cloud, const RegistrationConfig& config);

struct Refinement {
  RigidTransform pose;  // general * icp
  RigidTransform icp;
  std::size_t baseline_inliers = 0;
  int iterations = 0;
  bool degenerate = false;
  std::vector<double> mean_distances;  // one per accepted iteration
};

/// Per-vertebra ICP with the strict inlier gate. A vertebra with fewer than
/// three inliers at any iteration comes back degenerate with the general
/// pose and a zero baseline.
Refinement piecewise_refine(std::span<const Vec3> reg_points, const RigidTransform& general,
                            const IndexedCloud& cloud, const RegistrationConfig& config);
Refinement piecewise_refine(const VertebraModel& model, const RigidTransform& general, std::span<const Vec3> cloud,
                            const RegistrationConfig& config);

struct VertebraState {
  int id = 1;
  RigidTransform pose;
  std::size_t baseline_inliers = 0;
  std::size_t last_inliers = 0;
  bool updated = false;
  bool frozen = false;  // refinement was degenerate; never updated
};

struct RegistrationState {
  RigidTransform initial;
  RigidTransform general;
  std::vector<VertebraState> vertebrae;
  int frame = 0;
};

struct PoseUpdate {
  RigidTransform pose;
  bool updated = false;
  std::size_t inliers = 0;
};

/// Single ICP step for one vertebra. The pose moves only if the inlier
/// count reaches update_gate * baseline; otherwise the previous pose is
/// returned bit-for-bit.
PoseUpdate update_pose(const VertebraState& state, std::span<const Vec3> reg_points, const IndexedCloud& cloud,
                       const RegistrationConfig& config);
PoseUpdate update_pose(const VertebraState& state, const VertebraModel& model, std::span<const Vec3> cloud,
                       const RegistrationConfig& config);

/// Initial-frame registration on an already segmented cloud. `component`
/// is the part of the cloud belonging to the largest mask component.
RegistrationState register_clouds(std::span<const Vec3> segmented, std::span<const Vec3> component,
                                  const Quaternion& prior, std::span<const VertebraModel> models,
                                  const RegistrationConfig& config);

/// Interaction-frame update of every vertebra against a segmented cloud.
void update_clouds(RegistrationState& state, std::span<const VertebraModel> models, std::span<const Vec3> segmented,
                   const RegistrationConfig& config);

/// Model-frame point mapped onto the cloud centroid by the initial pose.
Vec3 combined_origin(std::span<const VertebraModel> models);

struct Segmentation {
  BinaryMask mask;
  Quaternion prior;
};

/// Produces a spine mask and an orientation prior for a frame, e.g. a
/// learned segmentation network or the simulation oracle.
class Segmenter {
 public:
  virtual ~Segmenter() = default;
  virtual Segmentation segment(const Frame& frame) = 0;
};

/// Returns the mask and prior stored in the frame's oracle.
class OracleSegmenter final : public Segmenter {
 public:
  Segmentation segment(const Frame& frame) override;
};

struct SegmentedClouds {
  PointCloud segmented;  // every mask-true valid pixel
  PointCloud component;  // pixels of the largest mask component
};

/// Throws Errc::empty_mask if the mask selects no valid depth.
SegmentedClouds segment_clouds(const DepthMap& depth, const BinaryMask& mask, const CameraIntrinsics& k);

RegistrationState register_initial_frame(const Frame& frame, std::span<const VertebraModel> models,
                                         Segmenter& segmenter, const CameraIntrinsics& k,
                                         const RegistrationConfig& config);

void process_interaction_frame(RegistrationState& state, const Frame& frame, std::span<const VertebraModel> models,
                               Segmenter& segmenter, const CameraIntrinsics& k, const RegistrationConfig& config);

}  // namespace vertereg
