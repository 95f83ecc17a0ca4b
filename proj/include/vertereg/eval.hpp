#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vertereg/frame.hpp"
#include "vertereg/geom.hpp"
#include "vertereg/model.hpp"
#include "vertereg/register.hpp"
#include "vertereg/track.hpp"

namespace vertereg {

/// Mean landmark distance between the two poses (mm).
/// Throws Errc::empty_input without landmarks.
double tre(const RigidTransform& gt, const RigidTransform& est, std::span<const Vec3> landmarks);

/// Mean of per-frame values over frames >= first_frame (1-based indices
/// into `series`). Throws Errc::empty_input when no frame qualifies.
double recording_mean(std::span<const double> series, int first_frame = 61);

/// Angle in degrees between the planned direction under both poses.
double trajectory_error(const Vec3& planned_dir, const RigidTransform& gt, const RigidTransform& est);

/// Distance in mm between the planned entry point under both poses.
double entry_point_error(const Vec3& planned_entry, const RigidTransform& gt, const RigidTransform& est);

struct PerforationOptions {
  /// Measure only the distance to the lateral wall, ignoring the end caps.
  bool lateral_only = false;
};

inline constexpr double kSafePerforationMm = 2.0;

/// Deepest intrusion of `points` into the finite screw cylinder, or nullopt
/// when no point lies inside. Points and screw share one frame.
/// Throws Errc::invalid_argument for a non-positive radius or length.
std::optional<double> perforation(std::span<const Vec3> points, const ScrewPlan& screw,
                                  const PerforationOptions& options = {});

/// Pedicle points placed by `gt`, screw placed by `est`.
std::optional<double> screw_perforation(const VertebraModel& model, Side side, const RigidTransform& gt,
                                        const RigidTransform& est, const PerforationOptions& options = {});

inline bool is_safe(const std::optional<double>& depth) { return !depth || *depth < kSafePerforationMm; }

/// Fraction of successful frames. Throws Errc::empty_input when empty.
double success_rate(std::span<const bool> frame_success);

/// Degrees between the sensor's forward axis and the coronal normal; the
/// sign of either vector does not matter.
double viewpoint_angle(const Vec3& sensor_forward, const Vec3& coronal_normal);
/// Strictly below 30 degrees.
bool viewpoint_acceptable(double angle_deg);

enum class AblationMode { general, refinement, first60, full };

const char* to_string(AblationMode mode) noexcept;
/// Accepts "general", "refinement", "first-60" (or "first60") and "full",
/// case-insensitive. Throws Errc::unknown_mode otherwise.
AblationMode parse_ablation_mode(const std::string& text);
inline constexpr std::array<AblationMode, 4> kAblationModes{AblationMode::general, AblationMode::refinement,
                                                            AblationMode::first60, AblationMode::full};

struct PipelineOptions {
  RegistrationConfig registration;
  AblationMode mode = AblationMode::full;
  int update_frames = 60;  // interaction frames updated in first60 mode
};

struct VertebraResult {
  int id = 1;
  RigidTransform pose;
  bool valid = false;
  bool updated = false;
  bool frozen = false;
  std::size_t inliers = 0;
  std::size_t baseline = 0;
};

struct FrameResult {
  int frame = 1;
  double timestamp = 0.0;
  std::vector<VertebraResult> vertebrae;
};

/// Frame-by-frame registration: the first frame registers from scratch,
/// later frames update according to the ablation mode. Every mode runs the
/// same stages and only masks the pose updates.
class RegistrationPipeline {
 public:
  RegistrationPipeline(std::vector<VertebraModel> models, CameraIntrinsics intrinsics, PipelineOptions options);

  /// Frames must arrive in increasing index order.
  /// Throws whatever initial registration throws on the first frame.
  FrameResult process(const Frame& frame, Segmenter& segmenter);

  /// Same as process() on already segmented clouds. `component` and
  /// `prior` are only read for the first frame.
  FrameResult process_clouds(int index, double timestamp, std::span<const Vec3> segmented,
                             std::span<const Vec3> component, const Quaternion& prior);

  bool initialized() const { return state_.has_value(); }
  const std::optional<RegistrationState>& state() const { return state_; }
  const std::vector<VertebraModel>& models() const { return models_; }

 private:
  /// Advances the frame bookkeeping; true when this frame gets updates.
  bool begin_frame(int index);
  FrameResult snapshot(int index, double timestamp) const;

  std::vector<VertebraModel> models_;
  CameraIntrinsics intrinsics_;
  PipelineOptions options_;
  std::optional<RegistrationState> state_;
  int interaction_frames_ = 0;
  int last_index_ = 0;
};

/// Runs the pipeline over a whole recording with the frames' oracle segmentation.
std::vector<FrameResult> run_pipeline(const FrameSource& source, std::span<const VertebraModel> models,
                                      const PipelineOptions& options);

/// Per-vertebra TRE of one frame against ground truth poses.
std::vector<double> frame_tre(std::span<const VertebraModel> models, const FrameResult& result,
                              std::span<const RigidTransform> gt);

/// Per-frame TRE averaged over the vertebrae, for one ablation mode.
/// Throws Errc::invalid_argument when a frame lacks ground truth.
std::vector<double> run_ablation(const FrameSource& source, std::span<const VertebraModel> models, AblationMode mode,
                                 const RegistrationConfig& config = {});

struct ScrewMetrics {
  double trajectory_deg = 0.0;
  double entry_mm = 0.0;
  std::optional<double> perforation_mm;
  bool safe = true;
};

struct VertebraMetrics {
  int id = 1;
  double tre = 0.0;
  std::array<ScrewMetrics, 2> screws;  // left, right
};

struct FrameMetrics {
  int frame = 1;
  std::vector<VertebraMetrics> vertebrae;
};

struct RecordingMetrics {
  std::vector<FrameMetrics> frames;
  double tre = 0.0;                        // frames >= first_tre_frame, all vertebrae
  std::array<double, kVertebraCount> vertebra_tre{};  // frames >= first_tre_frame
  double success_rate = 0.0;               // target screw, all frames
  double median_trajectory_deg = 0.0;
  double median_entry_mm = 0.0;
  int target_vertebra = 3;
  Side target_side = Side::left;
};

/// Scores estimated poses against ground truth. `estimates[f][i]` and
/// `gt[f][i]` are frame f, vertebra i. A frame whose estimate is invalid
/// counts as unsuccessful and is skipped for TRE.
RecordingMetrics evaluate_recording(std::span<const VertebraModel> models,
                                    const std::vector<FrameResult>& estimates,
                                    const std::vector<std::vector<RigidTransform>>& gt, int target_vertebra,
                                    Side target_side, int first_tre_frame = 61,
                                    const PerforationOptions& perforation_options = {});

/// Sleeve tracking: triangulation, marker pose and smoothing.
class DrillTracker {
 public:
  DrillTracker(StereoRig rig, MarkerReference reference, KalmanConfig config = {});

  /// Smoothed sleeve pose, or nullopt when fewer than two markers are
  /// usable (the filter state is left untouched in that case).
  std::optional<RigidTransform> process(std::span<const MarkerObservation> observations, double timestamp);

 private:
  StereoRig rig_;
  MarkerReference reference_;
  KalmanConfig config_;
  KalmanState state_;
  std::optional<double> last_time_;
};

}  // namespace vertereg
