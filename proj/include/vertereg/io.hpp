#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vertereg/cloud.hpp"
#include "vertereg/error.hpp"
#include "vertereg/eval.hpp"
#include "vertereg/frame.hpp"
#include "vertereg/model.hpp"
#include "vertereg/sim.hpp"
#include "vertereg/track.hpp"

namespace vertereg {

namespace fs = std::filesystem;

// Malformed input raises Error(Errc::parse_error) carrying the byte offset
// of the fault; missing or unwritable files raise Errc::io_error.

std::string read_file(const fs::path& path);
/// Writes through a temporary file and renames it into place.
void write_file(const fs::path& path, std::string_view bytes);

/// Reads `path` and hands its bytes to `parse`. Parse errors keep their
/// offset and gain the file name.
template <typename Parse>
auto parse_file(const fs::path& path, Parse&& parse) {
  const std::string bytes = read_file(path);
  try {
    return parse(std::string_view(bytes));
  } catch (const Error& e) {
    if (e.code() != Errc::parse_error) throw;
    throw Error(Errc::parse_error, path.string() + ": " + e.what(), e.byte_offset());
  }
}

/// "DPTH", u32 width, u32 height, f32 mm per unit, then u16 samples,
/// row-major, little-endian; 0 marks an invalid pixel. Depths round to
/// the nearest unit. Throws Errc::invalid_argument for depths beyond range.
std::string encode_depth(const DepthMap& depth, float mm_per_unit = kDepthUnitMm);
DepthMap decode_depth(std::string_view bytes);

/// "MSK1", u32 width, u32 height, then rows of bits, most significant bit
/// first, each row padded to a whole byte with zero bits.
std::string encode_mask(const BinaryMask& mask);
BinaryMask decode_mask(std::string_view bytes);

/// ASCII PLY with double x y z nx ny nz vertex properties.
struct PlyCloud {
  PointList points;
  PointList normals;  // empty when the file has no normals
};
std::string encode_ply(const PlyCloud& cloud);
PlyCloud decode_ply(std::string_view text);

/// Model on disk: `<stem>.ply` holds the surface rows followed by any
/// extra registration and pedicle rows; `<stem>.json` indexes them and
/// carries the landmarks and screw plans.
void write_model(const fs::path& stem, const VertebraModel& model);
VertebraModel read_model(const fs::path& stem);
/// Reads L1..L5 from a directory.
std::vector<VertebraModel> read_models(const fs::path& dir);
void write_models(const fs::path& dir, std::span<const VertebraModel> models);

/// One row of a poses file. Vertebrae are 1..5, the drill sleeve is 6.
struct PoseRow {
  int frame = 1;
  int vertebra = 1;
  bool valid = false;
  bool updated = false;
  RigidTransform pose;

  bool operator==(const PoseRow&) const = default;
};
inline constexpr int kDrillSlot = 6;
inline constexpr const char* kPoseHeader = "frame,vertebra,valid,updated,qw,qx,qy,qz,tx,ty,tz";

std::string encode_poses(std::span<const PoseRow> rows);
std::vector<PoseRow> decode_poses(std::string_view text);
std::vector<PoseRow> pose_rows(const FrameResult& result);

/// Shortest text that parses back to the same double.
std::string format_double(double value);

/// Recording directory:
///   recording.json        metadata, intrinsics, stereo rig, sleeve markers
///   depth/NNNNNN.dpth     sensor depth
///   mask/NNNNNN.msk       oracle segmentation
///   prior.csv             frame,qw,qx,qy,qz
///   markers.csv           frame,marker,corner,ul,vl,ur,vr
///   gt_poses.csv          ground truth in the poses format
///   models/L1.ply ...     preoperative models
struct RecordingInfo {
  int frame_count = 0;
  double fps = 30.0;
  CameraIntrinsics intrinsics;
  std::optional<StereoRig> rig;
  MarkerReference sleeve;
  int target_vertebra = 3;
  Side target_side = Side::left;
  std::uint64_t seed = 0;
};

void write_recording(const fs::path& dir, const SimulatedRecording& recording);

class DiskRecording final : public FrameSource {
 public:
  /// Reads the metadata and the CSV side files; frames load lazily.
  explicit DiskRecording(fs::path dir);

  int frame_count() const override { return info_.frame_count; }
  Frame frame(int index) const override;
  const CameraIntrinsics& intrinsics() const override { return info_.intrinsics; }
  double fps() const override { return info_.fps; }

  const RecordingInfo& info() const { return info_; }
  const fs::path& dir() const { return dir_; }
  /// Ground truth per frame (empty when the recording has none).
  const std::vector<std::vector<RigidTransform>>& gt_poses() const { return gt_; }
  const std::vector<std::optional<RigidTransform>>& gt_drill() const { return gt_drill_; }
  std::vector<MarkerObservation> markers(int index) const;

 private:
  fs::path dir_;
  RecordingInfo info_;
  std::vector<Quaternion> priors_;
  std::map<int, std::vector<MarkerObservation>> markers_;
  std::vector<std::vector<RigidTransform>> gt_;
  std::vector<std::optional<RigidTransform>> gt_drill_;
};

std::string frame_file_name(int index, const char* extension);

std::string encode_markers(const std::map<int, std::vector<MarkerObservation>>& markers);
std::map<int, std::vector<MarkerObservation>> decode_markers(std::string_view text);

}  // namespace vertereg
