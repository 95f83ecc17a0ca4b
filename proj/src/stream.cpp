#include "vertereg/stream.hpp"

#include <netdb.h>
#include <pthread.h>
#include <sched.h>
#include <sys/socket.h>
#include <unistd.h>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <deque>
#include <exception>
#include <iostream>
#include <thread>

#include "vertereg/error.hpp"
#include "vertereg/io.hpp"

namespace vertereg {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view b, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[at + i])) << (8 * i);
  return v;
}

std::array<double, 7> slot_values(const RigidTransform& p) {
  const Quaternion& q = p.rotation;
  const Vec3& t = p.translation;
  return {q.w, q.x, q.y, q.z, t.x(), t.y(), t.z()};
}

constexpr std::size_t kHeaderSize = 20;
constexpr std::size_t kSlotSize = 58;
constexpr double kUnitTolerance = 1e-6;

}  // namespace

std::string encode_packet(const PosePacket& packet) {
  std::string out = "VRP1";
  out.reserve(kPosePacketSize);
  put_u64(out, packet.frame_id);
  put_u64(out, packet.timestamp_us);
  for (const PoseSlot& slot : packet.slots) {
    if (!slot.valid) {
      out.append(kSlotSize, '\0');
      continue;
    }
    const auto values = slot_values(slot.pose);
    for (double v : values) {
      if (!std::isfinite(v)) throw Error(Errc::invalid_argument, "pose packet: non-finite value");
    }
    const double norm = std::sqrt(values[0] * values[0] + values[1] * values[1] + values[2] * values[2] +
                                  values[3] * values[3]);
    if (std::abs(norm - 1.0) > kUnitTolerance) throw Error(Errc::invalid_argument, "pose packet: non-unit quaternion");
    out.push_back('\1');
    out.push_back(slot.updated ? '\1' : '\0');
    for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

PosePacket decode_packet(std::string_view bytes) {
  if (bytes.size() < kPosePacketSize) throw Error(Errc::parse_error, "pose packet is truncated", bytes.size());
  if (bytes.size() > kPosePacketSize) throw Error(Errc::parse_error, "pose packet is too long", kPosePacketSize);
  if (bytes.substr(0, 4) != "VRP1") throw Error(Errc::parse_error, "bad magic, expected VRP1", 0);
  PosePacket p;
  p.frame_id = get_u64(bytes, 4);
  p.timestamp_us = get_u64(bytes, 12);
  for (std::size_t s = 0; s < kPoseSlots; ++s) {
    const std::size_t at = kHeaderSize + s * kSlotSize;
    const auto valid = static_cast<unsigned char>(bytes[at]);
    const auto updated = static_cast<unsigned char>(bytes[at + 1]);
    if (valid > 1) throw Error(Errc::parse_error, "valid flag must be 0 or 1", at);
    if (updated > 1) throw Error(Errc::parse_error, "updated flag must be 0 or 1", at + 1);
    if (!valid) {
      for (std::size_t i = at + 1; i < at + kSlotSize; ++i) {
        if (bytes[i] != '\0') throw Error(Errc::parse_error, "invalid slot must be zero", i);
      }
      continue;
    }
    std::array<double, 7> v;
    for (std::size_t i = 0; i < 7; ++i) {
      v[i] = std::bit_cast<double>(get_u64(bytes, at + 2 + 8 * i));
      if (!std::isfinite(v[i])) throw Error(Errc::parse_error, "non-finite pose value", at + 2 + 8 * i);
    }
    const double norm = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[3] * v[3]);
    if (std::abs(norm - 1.0) > kUnitTolerance) throw Error(Errc::parse_error, "non-unit quaternion", at + 2);
    PoseSlot& slot = p.slots[s];
    slot.valid = true;
    slot.updated = updated != 0;
    slot.pose.rotation = {v[0], v[1], v[2], v[3]};
    slot.pose.translation = {v[4], v[5], v[6]};
  }
  return p;
}

PosePacket make_packet(std::uint64_t frame_id, double fps, const FrameResult& result,
                       const std::optional<RigidTransform>& drill) {
  PosePacket p;
  p.frame_id = frame_id;
  p.timestamp_us = static_cast<std::uint64_t>(std::llround(static_cast<double>(frame_id - 1) * 1e6 / fps));
  for (const VertebraResult& v : result.vertebrae) {
    if (v.id < 1 || v.id > kVertebraCount || !v.valid) continue;
    p.slots[v.id - 1] = {true, v.updated, v.pose};
  }
  if (drill) p.slots[kPoseSlots - 1] = {true, true, *drill};
  return p;
}

void PoseMailbox::publish(PosePacket packet) {
  {
    std::lock_guard lock(mutex_);
    packet_ = std::move(packet);
    ++version_;
  }
  cv_.notify_all();
}

std::optional<PosePacket> PoseMailbox::latest() const {
  std::lock_guard lock(mutex_);
  return packet_;
}

std::optional<std::pair<PosePacket, std::uint64_t>> PoseMailbox::wait_newer(std::uint64_t seen) {
  std::unique_lock lock(mutex_);
  cv_.wait(lock, [&] { return version_ > seen || closed_; });
  if (version_ <= seen) return std::nullopt;
  return std::make_pair(*packet_, version_);
}

void PoseMailbox::close() {
  {
    std::lock_guard lock(mutex_);
    closed_ = true;
  }
  cv_.notify_all();
}

std::uint64_t PoseMailbox::version() const {
  std::lock_guard lock(mutex_);
  return version_;
}

UdpSender::UdpSender(const StreamTarget& target) : label_(to_string(target)) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_DGRAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(target.port);
  const int rc = getaddrinfo(target.host.c_str(), port.c_str(), &hints, &res);
  if (rc != 0) {
    std::cerr << "warning: cannot resolve stream destination " << label_ << ": " << gai_strerror(rc) << "\n";
    warned_ = true;
    return;
  }
  for (addrinfo* a = res; a; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype, a->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) {
      fd_ = fd;
      break;
    }
    ::close(fd);
  }
  freeaddrinfo(res);
  if (fd_ < 0) {
    std::cerr << "warning: cannot open a socket to " << label_ << "\n";
    warned_ = true;
  }
}

UdpSender::~UdpSender() {
  if (fd_ >= 0) ::close(fd_);
}

bool UdpSender::send(std::string_view bytes) {
  if (fd_ < 0) {
    ++failures_;
    return false;
  }
  const ssize_t n = ::send(fd_, bytes.data(), bytes.size(), MSG_DONTWAIT | MSG_NOSIGNAL);
  if (n == static_cast<ssize_t>(bytes.size())) return true;
  ++failures_;
  if (!warned_) {
    std::cerr << "warning: datagram to " << label_ << " failed: " << std::strerror(errno) << "\n";
    warned_ = true;
  }
  return false;
}

namespace {

/// Best effort: real-time priority for the calling thread so that a busy
/// ingest thread cannot delay a send. Without the privilege it stays as is.
void raise_priority() {
  sched_param param{};
  param.sched_priority = sched_get_priority_min(SCHED_FIFO);
  pthread_setschedparam(pthread_self(), SCHED_FIFO, &param);
}

}  // namespace

ServeStats serve(const FrameSource& source, std::span<const VertebraModel> models, const ServeOptions& options) {
  using Clock = std::chrono::steady_clock;
  const int count = source.frame_count();
  const int total = options.frames > 0 ? options.frames : count;
  if (!options.loop && total > count) {
    throw Error(Errc::invalid_argument, "requested " + std::to_string(total) + " frames from a recording of " +
                                            std::to_string(count) + "; enable looping");
  }
  const double fps = source.fps();
  const auto period = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / fps));
  const auto spin_window = std::chrono::microseconds(1500);

  RegistrationPipeline pipeline(std::vector<VertebraModel>(models.begin(), models.end()), source.intrinsics(),
                                options.pipeline);
  std::optional<DrillTracker> tracker;
  if (options.rig && !options.sleeve.corners.empty()) tracker.emplace(*options.rig, options.sleeve, options.kalman);
  OracleSegmenter segmenter;
  std::optional<UdpSender> sender;
  if (options.target) sender.emplace(*options.target);

  // Frames are read ahead on their own thread, so a slow read overlaps the
  // wait for the previous send.
  constexpr std::size_t kReadAhead = 4;
  std::mutex queue_mutex;
  std::condition_variable queue_cv;
  std::deque<Frame> queue;
  bool reader_stop = false;
  bool reader_done = false;
  std::exception_ptr reader_error;
  std::thread reader([&] {
    try {
      for (int n = 1; n <= total; ++n) {
        Frame frame = source.frame((n - 1) % count + 1);
        std::unique_lock lock(queue_mutex);
        queue_cv.wait(lock, [&] { return queue.size() < kReadAhead || reader_stop; });
        if (reader_stop) break;
        queue.push_back(std::move(frame));
        queue_cv.notify_all();
      }
    } catch (...) {
      reader_error = std::current_exception();
    }
    {
      std::lock_guard lock(queue_mutex);
      reader_done = true;
    }
    queue_cv.notify_all();
  });
  auto stop_reader = [&] {
    {
      std::lock_guard lock(queue_mutex);
      reader_stop = true;
    }
    queue_cv.notify_all();
    reader.join();
  };
  auto next_frame = [&] {
    std::unique_lock lock(queue_mutex);
    queue_cv.wait(lock, [&] { return !queue.empty() || reader_done; });
    if (queue.empty()) {
      if (reader_error) std::rethrow_exception(reader_error);
      throw Error(Errc::io_error, "frame reader stopped early");
    }
    Frame frame = std::move(queue.front());
    queue.pop_front();
    queue_cv.notify_all();
    return frame;
  };

  auto ingest = [&](int n) {
    Frame frame = next_frame();
    frame.index = n;
    frame.timestamp = (n - 1) / fps;
    const FrameResult result = pipeline.process(frame, segmenter);
    std::optional<RigidTransform> drill;
    if (tracker) drill = tracker->process(frame.markers, frame.timestamp);
    return make_packet(static_cast<std::uint64_t>(n), fps, result, drill);
  };

  PoseMailbox mailbox;
  std::mutex sent_mutex;
  std::condition_variable sent_cv;
  std::uint64_t sent = 0;
  bool sender_done = false;
  std::exception_ptr sender_error;
  std::vector<Clock::time_point> send_times;
  send_times.reserve(static_cast<std::size_t>(total));
  std::string dump;
  Clock::duration max_late{0};

  // Frame 1 carries the full registration; the clock starts once it is done.
  PosePacket first;
  try {
    first = ingest(1);
  } catch (...) {
    stop_reader();
    throw;
  }
  const Clock::time_point t0 = Clock::now();
  mailbox.publish(std::move(first));

  std::thread streamer([&] {
    raise_priority();
    try {
      std::uint64_t seen = 0;
      while (auto item = mailbox.wait_newer(seen)) {
        seen = item->second;
        const PosePacket& packet = item->first;
        const Clock::time_point deadline = t0 + period * static_cast<Clock::rep>(packet.frame_id);
        std::this_thread::sleep_until(deadline - spin_window);
        while (Clock::now() < deadline) {
        }
        const std::string bytes = encode_packet(packet);
        if (sender) sender->send(bytes);
        const Clock::time_point now = Clock::now();
        send_times.push_back(now);
        max_late = std::max(max_late, now - deadline);
        if (options.dump) dump += bytes;
        {
          std::lock_guard lock(sent_mutex);
          sent = packet.frame_id;
        }
        sent_cv.notify_all();
      }
    } catch (...) {
      sender_error = std::current_exception();
    }
    {
      std::lock_guard lock(sent_mutex);
      sender_done = true;
    }
    sent_cv.notify_all();
  });

  std::exception_ptr ingest_error;
  try {
    for (int n = 2; n <= total; ++n) {
      {
        // Frame n arrives once frame n-1 is out, one period after the last.
        std::unique_lock lock(sent_mutex);
        sent_cv.wait(lock, [&] { return sent >= static_cast<std::uint64_t>(n - 1) || sender_done; });
        if (sender_done) break;
      }
      mailbox.publish(ingest(n));
    }
  } catch (...) {
    ingest_error = std::current_exception();
  }
  mailbox.close();
  streamer.join();
  stop_reader();
  if (ingest_error) std::rethrow_exception(ingest_error);
  if (sender_error) std::rethrow_exception(sender_error);

  if (options.dump) write_file(*options.dump, dump);

  ServeStats stats;
  stats.packets = send_times.size();
  stats.send_failures = sender ? sender->failures() : 0;
  stats.period_s = 1.0 / fps;
  stats.max_late_s = std::chrono::duration<double>(max_late).count();
  if (send_times.size() >= 2) {
    double sum = 0.0;
    double sq = 0.0;
    for (std::size_t i = 1; i < send_times.size(); ++i) {
      const double dt = std::chrono::duration<double>(send_times[i] - send_times[i - 1]).count();
      sum += dt;
      sq += (dt - stats.period_s) * (dt - stats.period_s);
    }
    const double n = static_cast<double>(send_times.size() - 1);
    stats.mean_interval_s = sum / n;
    stats.jitter = std::sqrt(sq / n) / stats.period_s;
  }
  return stats;
}

}  // namespace vertereg
