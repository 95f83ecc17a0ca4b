#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "vertereg/config.hpp"
#include "vertereg/eval.hpp"
#include "vertereg/frame.hpp"
#include "vertereg/geom.hpp"

namespace vertereg {

inline constexpr std::size_t kPoseSlots = 6;  // L1..L5, drill sleeve
inline constexpr std::size_t kPosePacketSize = 4 + 8 + 8 + kPoseSlots * (2 + 56);

struct PoseSlot {
  bool valid = false;
  bool updated = false;
  RigidTransform pose;

  bool operator==(const PoseSlot&) const = default;
};

/// "VRP1", u64 frame id, u64 timestamp (us), six slots of
/// (u8 valid, u8 updated, f64 qw qx qy qz tx ty tz), little-endian.
/// Invalid slots are all zeros on the wire.
struct PosePacket {
  std::uint64_t frame_id = 0;
  std::uint64_t timestamp_us = 0;
  std::array<PoseSlot, kPoseSlots> slots;

  bool operator==(const PosePacket&) const = default;
};

/// Throws Errc::invalid_argument when a valid slot has a non-unit quaternion
/// or non-finite values.
std::string encode_packet(const PosePacket& packet);
/// Throws Errc::parse_error with the byte offset of the first bad field.
PosePacket decode_packet(std::string_view bytes);

/// Packet for one pipeline result; the drill slot is filled when given.
PosePacket make_packet(std::uint64_t frame_id, double fps, const FrameResult& result,
                       const std::optional<RigidTransform>& drill);

/// Single-slot latest-value mailbox. publish() overwrites, wait_newer()
/// blocks until a value newer than `seen` exists or close() was called.
class PoseMailbox {
 public:
  void publish(PosePacket packet);
  std::optional<PosePacket> latest() const;
  /// Returns the latest packet and its version, or nullopt once closed
  /// with nothing newer.
  std::optional<std::pair<PosePacket, std::uint64_t>> wait_newer(std::uint64_t seen);
  void close();
  std::uint64_t version() const;

 private:
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::optional<PosePacket> packet_;
  std::uint64_t version_ = 0;
  bool closed_ = false;
};

/// Fire-and-forget datagram socket. Resolution and send failures are
/// reported once on stderr and never thrown.
class UdpSender {
 public:
  explicit UdpSender(const StreamTarget& target);
  ~UdpSender();
  UdpSender(const UdpSender&) = delete;
  UdpSender& operator=(const UdpSender&) = delete;

  bool send(std::string_view bytes);
  bool ready() const { return fd_ >= 0; }
  std::size_t failures() const { return failures_; }

 private:
  int fd_ = -1;
  std::string label_;
  std::size_t failures_ = 0;
  bool warned_ = false;
};

struct ServeOptions {
  PipelineOptions pipeline;
  KalmanConfig kalman;
  std::optional<StreamTarget> target;
  std::optional<std::filesystem::path> dump;  // every sent packet, concatenated
  int frames = 0;                             // 0 = one pass over the recording
  bool loop = false;                          // wrap around the recording
  std::optional<StereoRig> rig;
  MarkerReference sleeve;
};

struct ServeStats {
  std::uint64_t packets = 0;
  std::uint64_t send_failures = 0;
  double period_s = 0.0;
  double mean_interval_s = 0.0;
  double jitter = 0.0;        // RMS interval deviation / period
  double max_late_s = 0.0;    // worst send delay past its deadline
};

/// Replays a recording through registration and tracking at its frame
/// rate and streams one packet per frame. The ingest loop publishes into
/// a mailbox; a sender thread emits the latest packet at its deadline.
/// Throws Errc::invalid_argument when `frames` exceeds the recording
/// without `loop`.
ServeStats serve(const FrameSource& source, std::span<const VertebraModel> models, const ServeOptions& options);

}  // namespace vertereg
