#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <random>
#include <thread>

#include "oracles.hpp"
#include "vertereg/error.hpp"
#include "vertereg/io.hpp"
#include "vertereg/sim.hpp"
#include "vertereg/stream.hpp"

using namespace vertereg;

namespace {

PosePacket sample_packet(std::mt19937_64& rng) {
  PosePacket p;
  p.frame_id = rng();
  p.timestamp_us = rng();
  for (std::size_t i = 0; i < kPoseSlots; ++i) {
    if (i == 3) continue;
    p.slots[i].valid = true;
    p.slots[i].updated = i % 2 == 0;
    p.slots[i].pose = oracle::random_transform(rng);
  }
  return p;
}

std::optional<std::uint64_t> packet_offset(std::string_view bytes) {
  try {
    decode_packet(bytes);
  } catch (const Error& e) {
    if (e.code() == Errc::parse_error) return e.byte_offset().value_or(~0ull);
  }
  return std::nullopt;
}

/// Loopback UDP socket on an ephemeral port.
struct Receiver {
  int fd = -1;
  std::uint16_t port = 0;
  Receiver() {
    fd = ::socket(AF_INET, SOCK_DGRAM, 0);
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ::bind(fd, reinterpret_cast<sockaddr*>(&a), sizeof a);
    socklen_t len = sizeof a;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&a), &len);
    port = ntohs(a.sin_port);
    int buf = 8 << 20;
    ::setsockopt(fd, SOL_SOCKET, SO_RCVBUF, &buf, sizeof buf);
    timeval tv{0, 200000};
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  }
  ~Receiver() { ::close(fd); }
  std::vector<std::string> drain() {
    std::vector<std::string> out;
    char buf[2048];
    for (;;) {
      const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
      if (n < 0) break;
      out.emplace_back(buf, static_cast<std::size_t>(n));
    }
    return out;
  }
};

}  // namespace

TEST_SUITE("stream") {
  TEST_CASE("packet layout") {
    CHECK(kPosePacketSize == 368);
    PosePacket p;
    p.frame_id = 0x0102030405060708ull;
    p.timestamp_us = 33333;
    p.slots[0].valid = true;
    p.slots[0].updated = true;
    p.slots[0].pose = RigidTransform::from_translation({1.5, -2.0, 400.0});
    const std::string b = encode_packet(p);
    REQUIRE(b.size() == 368);
    CHECK(b.substr(0, 4) == "VRP1");
    CHECK(static_cast<unsigned char>(b[4]) == 0x08);
    CHECK(static_cast<unsigned char>(b[11]) == 0x01);
    std::uint64_t ts = 0;
    std::memcpy(&ts, b.data() + 12, 8);
    CHECK(ts == 33333u);
    CHECK(b[20] == 1);
    CHECK(b[21] == 1);
    double v[7];
    std::memcpy(v, b.data() + 22, sizeof v);
    CHECK(v[0] == 1.0);
    CHECK(v[4] == 1.5);
    CHECK(v[6] == 400.0);
    for (std::size_t i = 20 + 58; i < b.size(); ++i) CHECK(b[i] == 0);
  }

  TEST_CASE("packet round trip") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
      const PosePacket p = sample_packet(rng);
      const std::string b = encode_packet(p);
      CHECK(decode_packet(b) == p);
      CHECK(encode_packet(decode_packet(b)) == b);
    }
  }

  TEST_CASE("invalid packets") {
    std::mt19937_64 rng(2);
    const PosePacket p = sample_packet(rng);
    const std::string b = encode_packet(p);
    CHECK(packet_offset(b.substr(0, 367)) == 367u);
    CHECK(packet_offset(b + "x") == 368u);
    CHECK(packet_offset("VRP2" + b.substr(4)) == 0u);
    std::string flag = b;
    flag[20] = 2;
    CHECK(packet_offset(flag) == 20u);
    std::string dirty = b;
    const std::size_t slot3 = 20 + 3 * 58;
    dirty[slot3 + 10] = 1;
    CHECK(packet_offset(dirty) == slot3 + 10);
    std::string nonunit = b;
    const double two = 2.0;
    std::memcpy(nonunit.data() + 22, &two, 8);
    CHECK(packet_offset(nonunit) == 22u);
    std::string nan = b;
    const double q = std::numeric_limits<double>::quiet_NaN();
    std::memcpy(nan.data() + 22 + 40, &q, 8);
    CHECK(packet_offset(nan) == 62u);

    PosePacket bad = p;
    bad.slots[0].pose.rotation = Quaternion{2, 0, 0, 0};
    CHECK_THROWS_AS(encode_packet(bad), Error);
    bad = p;
    bad.slots[1].pose.translation.x() = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(encode_packet(bad), Error);
  }

  TEST_CASE("packets from pipeline results") {
    FrameResult r;
    r.frame = 31;
    for (int i = 1; i <= 5; ++i) {
      VertebraResult v;
      v.id = i;
      v.valid = i != 2;
      v.updated = i == 5;
      v.pose = RigidTransform::from_translation({double(i), 0, 0});
      r.vertebrae.push_back(v);
    }
    const PosePacket p = make_packet(31, 30.0, r, RigidTransform::from_translation({0, 0, 9}));
    CHECK(p.frame_id == 31u);
    CHECK(p.timestamp_us == 1000000u);
    CHECK(p.slots[0].valid);
    CHECK(!p.slots[1].valid);
    CHECK(p.slots[4].updated);
    CHECK(p.slots[4].pose.translation.x() == 5.0);
    CHECK(p.slots[5].valid);
    CHECK(p.slots[5].pose.translation.z() == 9.0);
    CHECK(!make_packet(31, 30.0, r, std::nullopt).slots[5].valid);
  }

  TEST_CASE("mailbox keeps only the latest value") {
    PoseMailbox box;
    CHECK(!box.latest());
    PosePacket p;
    for (std::uint64_t i = 1; i <= 5; ++i) {
      p.frame_id = i;
      box.publish(p);
    }
    CHECK(box.version() == 5u);
    auto got = box.wait_newer(0);
    REQUIRE(got);
    CHECK(got->first.frame_id == 5u);
    CHECK(got->second == 5u);

    std::thread producer([&] {
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
      PosePacket q;
      q.frame_id = 6;
      box.publish(q);
    });
    got = box.wait_newer(5);
    producer.join();
    REQUIRE(got);
    CHECK(got->first.frame_id == 6u);
    std::thread closer([&] { box.close(); });
    CHECK(!box.wait_newer(6));
    closer.join();
  }

  TEST_CASE("serve streams one packet per frame") {
    const Scene scene = make_scene(1, 1.0, 1.5);
    RecordingSpec spec;
    spec.frame_count = 12;
    spec.fps = 60.0;
    const SimulatedRecording rec(scene, spec, 1);
    Receiver rx;
    const fs::path dump = fs::temp_directory_path() / ("vertereg_dump_" + std::to_string(::getpid()));
    ServeOptions o;
    o.target = StreamTarget{"127.0.0.1", rx.port};
    o.dump = dump;
    o.rig = scene.rig;
    o.sleeve = scene.sleeve;
    const ServeStats st = serve(rec, scene.vertebrae, o);
    const auto packets = rx.drain();
    CHECK(st.packets == 12u);
    CHECK(st.send_failures == 0u);
    CHECK(st.period_s == doctest::Approx(1.0 / 60.0));
    REQUIRE(packets.size() == 12);
    std::string concat;
    for (std::size_t i = 0; i < packets.size(); ++i) {
      CHECK(packets[i].size() == 368);
      const PosePacket p = decode_packet(packets[i]);
      CHECK(p.frame_id == i + 1);
      CHECK(p.timestamp_us == static_cast<std::uint64_t>(std::llround(i * 1e6 / 60.0)));
      CHECK(p.slots[5].valid);
      concat += packets[i];
    }
    CHECK(read_file(dump) == concat);
    fs::remove(dump);

    ServeOptions too_many = o;
    too_many.frames = 20;
    CHECK_THROWS_AS(serve(rec, scene.vertebrae, too_many), Error);
  }

  TEST_CASE("unreachable destination only warns") {
    const Scene scene = make_scene(1, 1.0, 2.0);
    RecordingSpec spec;
    spec.frame_count = 3;
    spec.fps = 60.0;
    const SimulatedRecording rec(scene, spec, 1);
    ServeOptions o;
    o.target = StreamTarget{"no-such-host.invalid", 9};
    const ServeStats st = serve(rec, scene.vertebrae, o);
    CHECK(st.packets == 3u);
    CHECK(st.send_failures == 3u);
  }
}
