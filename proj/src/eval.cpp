#include "vertereg/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

#include "vertereg/error.hpp"

namespace vertereg {

double tre(const RigidTransform& gt, const RigidTransform& est, std::span<const Vec3> landmarks) {
  if (landmarks.empty()) throw Error(Errc::empty_input, "tre: no landmarks");
  double sum = 0.0;
  for (const Vec3& l : landmarks) sum += (apply(gt, l) - apply(est, l)).norm();
  return sum / static_cast<double>(landmarks.size());
}

double recording_mean(std::span<const double> series, int first_frame) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = std::max(first_frame, 1) - 1; i < series.size(); ++i) {
    sum += series[i];
    ++n;
  }
  if (n == 0) throw Error(Errc::empty_input, "recording has no frame at or after frame " + std::to_string(first_frame));
  return sum / static_cast<double>(n);
}

double trajectory_error(const Vec3& planned_dir, const RigidTransform& gt, const RigidTransform& est) {
  const Vec3 a = gt.rotation_matrix() * planned_dir;
  const Vec3 b = est.rotation_matrix() * planned_dir;
  return std::atan2(a.cross(b).norm(), a.dot(b)) * 180.0 / std::numbers::pi;
}

double entry_point_error(const Vec3& planned_entry, const RigidTransform& gt, const RigidTransform& est) {
  return (apply(gt, planned_entry) - apply(est, planned_entry)).norm();
}

std::optional<double> perforation(std::span<const Vec3> points, const ScrewPlan& screw,
                                  const PerforationOptions& options) {
  if (!(screw.radius > 0.0) || !(screw.length > 0.0)) {
    throw Error(Errc::invalid_argument, "screw radius and length must be positive");
  }
  const Vec3 d = screw.direction.normalized();
  std::optional<double> deepest;
  for (const Vec3& p : points) {
    const Vec3 w = p - screw.entry;
    const double axial = w.dot(d);
    if (axial < 0.0 || axial > screw.length) continue;
    const double radial = (w - axial * d).norm();
    if (!(radial < screw.radius)) continue;
    double depth = screw.radius - radial;
    if (!options.lateral_only) depth = std::min({depth, axial, screw.length - axial});
    if (!deepest || depth > *deepest) deepest = depth;
  }
  return deepest;
}

std::optional<double> screw_perforation(const VertebraModel& model, Side side, const RigidTransform& gt,
                                        const RigidTransform& est, const PerforationOptions& options) {
  const ScrewPlan& plan = model.screw(side);
  ScrewPlan placed = plan;
  placed.entry = apply(est, plan.entry);
  placed.direction = est.rotation_matrix() * plan.direction;
  return perforation(transform_points(gt, model.pedicle_points), placed, options);
}

double success_rate(std::span<const bool> frame_success) {
  if (frame_success.empty()) throw Error(Errc::empty_input, "success_rate: no frames");
  const auto ok = std::count(frame_success.begin(), frame_success.end(), true);
  return static_cast<double>(ok) / static_cast<double>(frame_success.size());
}

double viewpoint_angle(const Vec3& sensor_forward, const Vec3& coronal_normal) {
  const Vec3 a = sensor_forward.normalized();
  const Vec3 b = coronal_normal.normalized();
  return std::atan2(a.cross(b).norm(), std::abs(a.dot(b))) * 180.0 / std::numbers::pi;
}

// Angles within 1e-9 degrees of the limit count as on it.
bool viewpoint_acceptable(double angle_deg) { return angle_deg < 30.0 - 1e-9; }

const char* to_string(AblationMode mode) noexcept {
  switch (mode) {
    case AblationMode::general: return "general";
    case AblationMode::refinement: return "refinement";
    case AblationMode::first60: return "first-60";
    case AblationMode::full: return "full";
  }
  return "?";
}

AblationMode parse_ablation_mode(const std::string& text) {
  std::string t;
  for (char c : text) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  if (t == "general") return AblationMode::general;
  if (t == "refinement") return AblationMode::refinement;
  if (t == "first-60" || t == "first60") return AblationMode::first60;
  if (t == "full") return AblationMode::full;
  throw Error(Errc::unknown_mode, "unknown ablation mode '" + text + "'");
}

RegistrationPipeline::RegistrationPipeline(std::vector<VertebraModel> models, CameraIntrinsics intrinsics,
                                           PipelineOptions options)
    : models_(std::move(models)), intrinsics_(intrinsics), options_(options) {
  options_.registration.validate();
  intrinsics_.validate();
  if (models_.empty()) throw Error(Errc::empty_input, "no vertebra models");
  for (const VertebraModel& m : models_) m.validate();
  if (options_.update_frames < 0) throw Error(Errc::config_error, "update_frames must be non-negative");
}

bool RegistrationPipeline::begin_frame(int index) {
  if (index <= last_index_) throw Error(Errc::invalid_argument, "frames must arrive in increasing order");
  if (!state_) return true;
  ++interaction_frames_;
  return options_.mode == AblationMode::full ||
         (options_.mode == AblationMode::first60 && interaction_frames_ <= options_.update_frames);
}

FrameResult RegistrationPipeline::process(const Frame& frame, Segmenter& segmenter) {
  const bool initial = !state_;
  if (!begin_frame(frame.index)) {
    for (VertebraState& v : state_->vertebrae) v.updated = false;
  } else if (initial) {
    state_ = register_initial_frame(frame, models_, segmenter, intrinsics_, options_.registration);
  } else {
    process_interaction_frame(*state_, frame, models_, segmenter, intrinsics_, options_.registration);
  }
  if (state_) state_->frame = frame.index;
  last_index_ = frame.index;
  return snapshot(frame.index, frame.timestamp);
}

FrameResult RegistrationPipeline::process_clouds(int index, double timestamp, std::span<const Vec3> segmented,
                                                 std::span<const Vec3> component, const Quaternion& prior) {
  const bool initial = !state_;
  if (!begin_frame(index)) {
    for (VertebraState& v : state_->vertebrae) v.updated = false;
  } else if (initial) {
    state_ = register_clouds(segmented, component, prior, models_, options_.registration);
  } else {
    update_clouds(*state_, models_, segmented, options_.registration);
  }
  state_->frame = index;
  last_index_ = index;
  return snapshot(index, timestamp);
}

FrameResult RegistrationPipeline::snapshot(int index, double timestamp) const {
  FrameResult out;
  out.frame = index;
  out.timestamp = timestamp;
  for (const VertebraState& v : state_->vertebrae) {
    VertebraResult r;
    r.id = v.id;
    r.pose = options_.mode == AblationMode::general ? state_->general : v.pose;
    r.valid = true;
    r.updated = v.updated;
    r.frozen = v.frozen;
    r.inliers = v.last_inliers;
    r.baseline = v.baseline_inliers;
    out.vertebrae.push_back(r);
  }
  return out;
}

std::vector<FrameResult> run_pipeline(const FrameSource& source, std::span<const VertebraModel> models,
                                      const PipelineOptions& options) {
  RegistrationPipeline pipeline({models.begin(), models.end()}, source.intrinsics(), options);
  OracleSegmenter segmenter;
  std::vector<FrameResult> out;
  out.reserve(static_cast<std::size_t>(source.frame_count()));
  for (int f = 1; f <= source.frame_count(); ++f) out.push_back(pipeline.process(source.frame(f), segmenter));
  return out;
}

std::vector<double> frame_tre(std::span<const VertebraModel> models, const FrameResult& result,
                              std::span<const RigidTransform> gt) {
  if (result.vertebrae.size() != models.size() || gt.size() != models.size()) {
    throw Error(Errc::dimension_mismatch, "frame_tre: vertebra counts differ");
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < models.size(); ++i) {
    out.push_back(tre(gt[i], result.vertebrae[i].pose, models[i].landmarks));
  }
  return out;
}

std::vector<double> run_ablation(const FrameSource& source, std::span<const VertebraModel> models, AblationMode mode,
                                 const RegistrationConfig& config) {
  PipelineOptions options;
  options.registration = config;
  options.mode = mode;
  RegistrationPipeline pipeline({models.begin(), models.end()}, source.intrinsics(), options);
  OracleSegmenter segmenter;
  std::vector<double> series;
  for (int f = 1; f <= source.frame_count(); ++f) {
    const Frame frame = source.frame(f);
    if (!frame.oracle) throw Error(Errc::invalid_argument, "frame " + std::to_string(f) + " has no ground truth");
    const FrameResult r = pipeline.process(frame, segmenter);
    const std::vector<double> t = frame_tre(models, r, frame.oracle->gt_poses);
    double sum = 0.0;
    for (double v : t) sum += v;
    series.push_back(sum / static_cast<double>(t.size()));
  }
  return series;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  if (v.size() % 2 == 1) return v[mid];
  const double upper = v[mid];
  return 0.5 * (upper + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

}  // namespace

RecordingMetrics evaluate_recording(std::span<const VertebraModel> models, const std::vector<FrameResult>& estimates,
                                    const std::vector<std::vector<RigidTransform>>& gt, int target_vertebra,
                                    Side target_side, int first_tre_frame,
                                    const PerforationOptions& perforation_options) {
  if (estimates.size() != gt.size()) throw Error(Errc::dimension_mismatch, "estimate and ground-truth frame counts differ");
  if (target_vertebra < 1 || target_vertebra > static_cast<int>(models.size())) {
    throw Error(Errc::invalid_argument, "target vertebra out of range");
  }
  RecordingMetrics out;
  out.target_vertebra = target_vertebra;
  out.target_side = target_side;
  std::vector<bool> success;
  std::vector<double> frame_means, trajectories, entries;
  std::array<double, kVertebraCount> vsum{};
  std::array<std::size_t, kVertebraCount> vcount{};

  for (std::size_t f = 0; f < estimates.size(); ++f) {
    const FrameResult& est = estimates[f];
    if (gt[f].size() != models.size()) throw Error(Errc::dimension_mismatch, "ground truth lacks vertebrae");
    FrameMetrics fm;
    fm.frame = est.frame;
    bool frame_ok = false;
    bool all_valid = !est.vertebrae.empty();
    double frame_sum = 0.0;
    for (std::size_t i = 0; i < models.size(); ++i) {
      const bool valid = i < est.vertebrae.size() && est.vertebrae[i].valid;
      all_valid = all_valid && valid;
      if (!valid) continue;
      const RigidTransform& pose = est.vertebrae[i].pose;
      VertebraMetrics vm;
      vm.id = models[i].id;
      vm.tre = tre(gt[f][i], pose, models[i].landmarks);
      for (int s = 0; s < 2; ++s) {
        const ScrewPlan& plan = models[i].screws[s];
        ScrewMetrics& sm = vm.screws[s];
        sm.trajectory_deg = trajectory_error(plan.direction, gt[f][i], pose);
        sm.entry_mm = entry_point_error(plan.entry, gt[f][i], pose);
        sm.perforation_mm = screw_perforation(models[i], plan.side, gt[f][i], pose, perforation_options);
        sm.safe = is_safe(sm.perforation_mm);
        if (est.frame >= first_tre_frame) {
          trajectories.push_back(sm.trajectory_deg);
          entries.push_back(sm.entry_mm);
        }
      }
      if (models[i].id == target_vertebra) frame_ok = vm.screws[static_cast<int>(target_side)].safe;
      frame_sum += vm.tre;
      if (est.frame >= first_tre_frame && i < kVertebraCount) {
        vsum[i] += vm.tre;
        ++vcount[i];
      }
      fm.vertebrae.push_back(vm);
    }
    success.push_back(frame_ok);
    if (all_valid && est.frame >= first_tre_frame) frame_means.push_back(frame_sum / static_cast<double>(models.size()));
    out.frames.push_back(std::move(fm));
  }
  const auto flags = std::make_unique<bool[]>(success.size());
  std::copy(success.begin(), success.end(), flags.get());
  out.success_rate = success_rate(std::span<const bool>(flags.get(), success.size()));
  out.tre = frame_means.empty() ? std::numeric_limits<double>::quiet_NaN() : recording_mean(frame_means, 1);
  for (std::size_t i = 0; i < kVertebraCount; ++i) {
    out.vertebra_tre[i] = vcount[i] ? vsum[i] / static_cast<double>(vcount[i]) : std::numeric_limits<double>::quiet_NaN();
  }
  out.median_trajectory_deg = median(trajectories);
  out.median_entry_mm = median(entries);
  return out;
}

DrillTracker::DrillTracker(StereoRig rig, MarkerReference reference, KalmanConfig config)
    : rig_(std::move(rig)), reference_(std::move(reference)), config_(config) {
  rig_.validate();
  reference_.validate();
}

std::optional<RigidTransform> DrillTracker::process(std::span<const MarkerObservation> observations, double timestamp) {
  const std::optional<RigidTransform> measured = estimate_sleeve_pose(observations, rig_, reference_);
  if (!measured) return std::nullopt;
  const double dt = last_time_ ? timestamp - *last_time_ : 1.0;
  const RigidTransform smoothed = kalman_step(state_, *measured, dt, config_);
  last_time_ = timestamp;
  return smoothed;
}

}  // namespace vertereg
