#include "vertereg/register.hpp"

#include <cmath>
#include <limits>

#include "vertereg/error.hpp"

namespace vertereg {

void RegistrationConfig::validate() const {
  if (!(general_max_corr > 0.0) || !(piecewise_inlier > 0.0)) {
    throw Error(Errc::config_error, "correspondence distances must be positive");
  }
  if (general_max_iters <= 0 || piecewise_max_iters <= 0) {
    throw Error(Errc::config_error, "iteration limits must be positive");
  }
  if (!(epsilon >= 0.0)) throw Error(Errc::config_error, "epsilon must be non-negative");
  if (!(update_gate > 0.0) || update_gate > 1.0) throw Error(Errc::config_error, "update gate must lie in (0, 1]");
}

namespace {

struct Pairs {
  PointList src;
  PointList dst;
  double distance_sum = 0.0;

  std::size_t size() const { return src.size(); }
  double mean_distance() const { return src.empty() ? 0.0 : distance_sum / static_cast<double>(src.size()); }
};

/// Model points posed by `pose` matched into the cloud. `strict` keeps only
/// pairs closer than max_dist; otherwise max_dist is inclusive.
void collect_pairs(std::span<const Vec3> model, const RigidTransform& pose, const IndexedCloud& cloud,
                   double max_dist, bool strict, Pairs& out) {
  out.src.clear();
  out.dst.clear();
  out.distance_sum = 0.0;
  const Mat3 r = pose.rotation_matrix();
  for (const Vec3& p : model) {
    const auto nb = cloud.nearest(r * p + pose.translation, max_dist);
    if (!nb || (strict && !(nb->distance < max_dist))) continue;
    out.src.push_back(p);
    out.dst.push_back(cloud[nb->index]);
    out.distance_sum += nb->distance;
  }
}

double transform_change(const RigidTransform& from, const RigidTransform& to) {
  const double angle = rotation_distance(from, to);
  return angle * angle + (to.translation - from.translation).squaredNorm();
}

PointList all_reg_points(std::span<const VertebraModel> models) {
  PointList out;
  for (const VertebraModel& m : models) out.insert(out.end(), m.reg_points.begin(), m.reg_points.end());
  return out;
}

}  // namespace

RigidTransform initial_pose(std::span<const Vec3> largest_component_cloud, const Quaternion& prior,
                            const Vec3& model_origin) {
  if (largest_component_cloud.empty()) throw Error(Errc::empty_input, "initial_pose: empty cloud");
  const Quaternion q = prior.normalized();
  return {q, centroid(largest_component_cloud) - q.to_matrix() * model_origin};
}

GeneralAlignment general_alignment(std::span<const Vec3> model_points, const RigidTransform& init,
                                   std::span<const Vec3> cloud, const RegistrationConfig& config) {
  config.validate();
  if (cloud.empty()) throw Error(Errc::empty_input, "general_alignment: empty cloud");
  const IndexedCloud target(PointList(cloud.begin(), cloud.end()), config.general_max_corr);
  GeneralAlignment result;
  RigidTransform pose = init;
  Pairs pairs;
  for (int it = 0; it < config.general_max_iters; ++it) {
    collect_pairs(model_points, pose, target, config.general_max_corr, false, pairs);
    if (pairs.size() < 3) {
      if (it == 0) throw Error(Errc::no_overlap, "general_alignment: no correspondences within range");
      break;
    }
    result.correspondences = pairs.size();
    const RigidTransform next = umeyama(pairs.src, pairs.dst);
    const double change = transform_change(pose, next);
    pose = next;
    result.iterations = it + 1;
    if (change < config.epsilon) break;
  }
  result.pose = pose;
  result.icp = compose(invert(init), pose);
  return result;
}

Refinement piecewise_refine(std::span<const Vec3> reg_points, const RigidTransform& general,
                            const IndexedCloud& cloud, const RegistrationConfig& config) {
  Refinement result;
  RigidTransform pose = general;
  RigidTransform previous_pose = general;
  double previous_mean = std::numeric_limits<double>::infinity();
  std::size_t previous_count = 0;
  Pairs pairs;
  // One correspondence pass per iteration plus a final pass that only
  // measures the converged pose.
  for (int it = 0; it <= config.piecewise_max_iters; ++it) {
    collect_pairs(reg_points, pose, cloud, config.piecewise_inlier, true, pairs);
    if (pairs.size() < 3) {
      Refinement degenerate;
      degenerate.pose = general;
      degenerate.degenerate = true;
      degenerate.iterations = it;
      return degenerate;
    }
    const double mean = pairs.mean_distance();
    if (!config.piecewise_force_full_iters && it > 0 && !(mean < previous_mean - config.epsilon)) {
      // The last step did not reduce the mean distance: keep the pose before it.
      pose = previous_pose;
      result.baseline_inliers = previous_count;
      break;
    }
    result.mean_distances.push_back(mean);
    result.baseline_inliers = pairs.size();
    if (it == config.piecewise_max_iters) break;
    previous_pose = pose;
    previous_mean = mean;
    previous_count = pairs.size();
    try {
      pose = umeyama(pairs.src, pairs.dst);
    } catch (const Error& e) {
      if (e.code() != Errc::degenerate_configuration) throw;
      Refinement degenerate;
      degenerate.pose = general;
      degenerate.degenerate = true;
      degenerate.iterations = it;
      return degenerate;
    }
    result.iterations = it + 1;
  }
  result.pose = pose;
  result.icp = compose(invert(general), pose);
  return result;
}

Refinement piecewise_refine(const VertebraModel& model, const RigidTransform& general, std::span<const Vec3> cloud,
                            const RegistrationConfig& config) {
  config.validate();
  if (cloud.empty()) {
    Refinement degenerate;
    degenerate.pose = general;
    degenerate.degenerate = true;
    return degenerate;
  }
  const IndexedCloud target(PointList(cloud.begin(), cloud.end()), config.piecewise_inlier);
  return piecewise_refine(model.reg_points, general, target, config);
}

PoseUpdate update_pose(const VertebraState& state, std::span<const Vec3> reg_points, const IndexedCloud& cloud,
                       const RegistrationConfig& config) {
  PoseUpdate result{state.pose, false, 0};
  if (state.frozen || cloud.empty()) return result;
  Pairs pairs;
  collect_pairs(reg_points, state.pose, cloud, config.piecewise_inlier, true, pairs);
  result.inliers = pairs.size();
  if (pairs.size() < 3) return result;
  if (static_cast<double>(pairs.size()) < config.update_gate * static_cast<double>(state.baseline_inliers)) {
    return result;
  }
  try {
    result.pose = umeyama(pairs.src, pairs.dst);
    result.updated = true;
  } catch (const Error& e) {
    if (e.code() != Errc::degenerate_configuration) throw;
  }
  return result;
}

PoseUpdate update_pose(const VertebraState& state, const VertebraModel& model, std::span<const Vec3> cloud,
                       const RegistrationConfig& config) {
  config.validate();
  if (cloud.empty()) return {state.pose, false, 0};
  const IndexedCloud target(PointList(cloud.begin(), cloud.end()), config.piecewise_inlier);
  return update_pose(state, model.reg_points, target, config);
}

Vec3 combined_origin(std::span<const VertebraModel> models) { return centroid(all_reg_points(models)); }

RegistrationState register_clouds(std::span<const Vec3> segmented, std::span<const Vec3> component,
                                  const Quaternion& prior, std::span<const VertebraModel> models,
                                  const RegistrationConfig& config) {
  config.validate();
  if (models.empty()) throw Error(Errc::empty_input, "no vertebra models");
  if (segmented.empty() || component.empty()) throw Error(Errc::empty_mask, "segmented cloud is empty");
  const PointList combined = all_reg_points(models);

  RegistrationState state;
  state.initial = initial_pose(component, prior, centroid(combined));
  state.general = general_alignment(combined, state.initial, segmented, config).pose;

  const IndexedCloud target(PointList(segmented.begin(), segmented.end()), config.piecewise_inlier);
  // Vertebrae are independent here; they run in id order so the result is
  // the same however the work is scheduled.
  for (const VertebraModel& model : models) {
    const Refinement ref = piecewise_refine(model.reg_points, state.general, target, config);
    VertebraState v;
    v.id = model.id;
    v.pose = ref.pose;
    v.baseline_inliers = ref.baseline_inliers;
    v.last_inliers = ref.baseline_inliers;
    v.frozen = ref.degenerate;
    v.updated = !ref.degenerate;
    state.vertebrae.push_back(v);
  }
  state.frame = 1;
  return state;
}

void update_clouds(RegistrationState& state, std::span<const VertebraModel> models, std::span<const Vec3> segmented,
                   const RegistrationConfig& config) {
  if (models.size() != state.vertebrae.size()) {
    throw Error(Errc::dimension_mismatch, "model count does not match the registration state");
  }
  ++state.frame;
  if (segmented.empty()) {
    for (VertebraState& v : state.vertebrae) {
      v.updated = false;
      v.last_inliers = 0;
    }
    return;
  }
  const IndexedCloud target(PointList(segmented.begin(), segmented.end()), config.piecewise_inlier);
  for (std::size_t i = 0; i < models.size(); ++i) {
    VertebraState& v = state.vertebrae[i];
    const PoseUpdate up = update_pose(v, models[i].reg_points, target, config);
    v.pose = up.pose;
    v.updated = up.updated;
    v.last_inliers = up.inliers;
  }
}

Segmentation OracleSegmenter::segment(const Frame& frame) {
  if (!frame.oracle) throw Error(Errc::invalid_argument, "frame has no oracle segmentation");
  return {frame.oracle->mask, frame.oracle->prior};
}

SegmentedClouds segment_clouds(const DepthMap& depth, const BinaryMask& mask, const CameraIntrinsics& k) {
  SegmentedClouds out;
  out.segmented = depth_to_cloud(depth, k, &mask);
  if (out.segmented.empty()) throw Error(Errc::empty_mask, "segmentation selects no valid depth");
  const BinaryMask largest = largest_component(mask);
  out.component = depth_to_cloud(depth, k, &largest);
  if (out.component.empty()) throw Error(Errc::empty_mask, "largest mask component has no valid depth");
  return out;
}

RegistrationState register_initial_frame(const Frame& frame, std::span<const VertebraModel> models,
                                         Segmenter& segmenter, const CameraIntrinsics& k,
                                         const RegistrationConfig& config) {
  const Segmentation seg = segmenter.segment(frame);
  const SegmentedClouds clouds = segment_clouds(frame.depth, seg.mask, k);
  RegistrationState state = register_clouds(clouds.segmented, clouds.component, seg.prior, models, config);
  state.frame = frame.index;
  return state;
}

void process_interaction_frame(RegistrationState& state, const Frame& frame, std::span<const VertebraModel> models,
                               Segmenter& segmenter, const CameraIntrinsics& k, const RegistrationConfig& config) {
  const Segmentation seg = segmenter.segment(frame);
  if (!seg.mask.same_shape(frame.depth)) throw Error(Errc::dimension_mismatch, "mask does not match the depth map");
  const PointCloud segmented = depth_to_cloud(frame.depth, k, &seg.mask);
  update_clouds(state, models, segmented, config);
  state.frame = frame.index;
}

}  // namespace vertereg
