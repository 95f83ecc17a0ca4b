#include <doctest.h>

#include <unistd.h>

#include <cstring>
#include <random>

#include "oracles.hpp"
#include "vertereg/error.hpp"
#include "vertereg/io.hpp"
#include "vertereg/sim.hpp"

using namespace vertereg;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("vertereg_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::optional<std::uint64_t> offset_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    if (e.code() == Errc::parse_error) return e.byte_offset().value_or(~0ull);
  }
  return std::nullopt;
}

const Scene& scene() {
  static const Scene s = make_scene(1, 1.0, 2.0);
  return s;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("depth round trip and layout") {
    DepthMap d(3, 2);
    d.at(0, 0) = 500.0f;
    d.at(1, 0) = 0.1f;
    d.at(2, 1) = 6553.5f;
    const std::string bytes = encode_depth(d);
    REQUIRE(bytes.size() == 16 + 2 * 6);
    CHECK(bytes.substr(0, 4) == "DPTH");
    CHECK(static_cast<unsigned char>(bytes[4]) == 3);
    CHECK(static_cast<unsigned char>(bytes[8]) == 2);
    float unit = 0.0f;
    std::memcpy(&unit, bytes.data() + 12, 4);
    CHECK(unit == kDepthUnitMm);
    // 500 mm = 5000 units = 0x1388, little-endian.
    CHECK(static_cast<unsigned char>(bytes[16]) == 0x88);
    CHECK(static_cast<unsigned char>(bytes[17]) == 0x13);
    const DepthMap back = decode_depth(bytes);
    CHECK(back.width == 3);
    CHECK(back.height == 2);
    CHECK(encode_depth(back) == bytes);
    CHECK(back.at(0, 0) == 500.0f);
    CHECK(back.at(0, 1) == 0.0f);

    DepthMap big(1, 1, 7000.0f);
    CHECK_THROWS_AS(encode_depth(big), Error);
  }

  TEST_CASE("simulated depth survives the file format exactly") {
    RecordingSpec spec;
    spec.frame_count = 1;
    spec.depth_noise_mm = 0.5;
    spec.dropout = 0.05;
    const Frame f = SimulatedRecording(scene(), spec, 3).frame(1);
    CHECK(decode_depth(encode_depth(f.depth)) == f.depth);
  }

  TEST_CASE("malformed depth files") {
    const std::string good = encode_depth(DepthMap(4, 3, 100.0f));
    CHECK(offset_of([&] { decode_depth(good.substr(0, 10)); }) == 10u);
    CHECK(offset_of([&] { decode_depth("XPTH" + good.substr(4)); }) == 0u);
    CHECK(offset_of([&] { decode_depth(good.substr(0, good.size() - 1)); }) == good.size() - 1);
    CHECK(offset_of([&] { decode_depth(good + "x"); }) == good.size());
    std::string zero_w = good;
    zero_w[4] = 0;
    CHECK(offset_of([&] { decode_depth(zero_w); }) == 4u);
    std::string bad_unit = good;
    const float neg = -1.0f;
    std::memcpy(bad_unit.data() + 12, &neg, 4);
    CHECK(offset_of([&] { decode_depth(bad_unit); }) == 12u);
  }

  TEST_CASE("mask round trip and bit layout") {
    BinaryMask m(10, 2);
    m.at(0, 0) = 1;
    m.at(9, 0) = 1;
    m.at(1, 1) = 1;
    const std::string bytes = encode_mask(m);
    REQUIRE(bytes.size() == 12 + 2 * 2);
    CHECK(bytes.substr(0, 4) == "MSK1");
    CHECK(static_cast<unsigned char>(bytes[12]) == 0x80);
    CHECK(static_cast<unsigned char>(bytes[13]) == 0x40);
    CHECK(static_cast<unsigned char>(bytes[14]) == 0x40);
    CHECK(static_cast<unsigned char>(bytes[15]) == 0x00);
    CHECK(decode_mask(bytes) == m);

    std::mt19937_64 rng(1);
    std::bernoulli_distribution on(0.4);
    for (int w : {1, 7, 8, 9, 31, 640}) {
      BinaryMask r(w, 5);
      for (auto& b : r.data) b = on(rng);
      const std::string e = encode_mask(r);
      CHECK(decode_mask(e) == r);
      CHECK(encode_mask(decode_mask(e)) == e);
    }
    std::string padded = bytes;
    padded[13] = static_cast<char>(0x41);
    CHECK(offset_of([&] { decode_mask(padded); }) == 13u);
    CHECK(offset_of([&] { decode_mask(bytes.substr(0, 14)); }) == 14u);
  }

  TEST_CASE("ply round trip") {
    std::mt19937_64 rng(2);
    PlyCloud c;
    c.points = oracle::random_points(rng, 50);
    for (int i = 0; i < 50; ++i) c.normals.push_back(oracle::random_unit(rng));
    c.points.push_back(Vec3(0.1, 1e-300, -123456789.125));
    c.normals.push_back(Vec3::UnitZ());
    const std::string text = encode_ply(c);
    const PlyCloud back = decode_ply(text);
    REQUIRE(back.points.size() == c.points.size());
    for (std::size_t i = 0; i < c.points.size(); ++i) {
      CHECK(back.points[i] == c.points[i]);
      CHECK(back.normals[i] == c.normals[i]);
    }
    CHECK(encode_ply(back) == text);

    PlyCloud bare;
    bare.points = {Vec3(1, 2, 3)};
    CHECK(decode_ply(encode_ply(bare)).normals.empty());

    const std::string hand =
        "ply\r\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty float y\n"
        "property float z\nend_header\n1 2 3\n4 5 6\n";
    CHECK(decode_ply(hand).points.size() == 2);
  }

  TEST_CASE("malformed ply") {
    const std::string head = "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\n"
                             "property double z\nend_header\n";
    CHECK(offset_of([&] { decode_ply("plx\n"); }) == 0u);
    CHECK(offset_of([&] { decode_ply(head + "1 2 q\n"); }) == head.size() + 4);
    CHECK(offset_of([&] { decode_ply(head + "1 2\n"); }) == head.size());
    CHECK(offset_of([&] { decode_ply(head + "1 2 3\n4 5 6\n"); }) == head.size() + 6);
    CHECK(offset_of([&] { decode_ply(head); }).has_value());
    std::string binary = head;
    binary.replace(binary.find("ascii"), 5, "binary_little_endian");
    CHECK(offset_of([&] { decode_ply(binary + "1 2 3\n"); }) == 4u);
  }

  TEST_CASE("model round trip") {
    TempDir tmp;
    for (const auto& m : scene().vertebrae) write_model(tmp.path / level_name(m.id), m);
    const std::vector<VertebraModel> back = read_models(tmp.path);
    REQUIRE(back.size() == 5);
    for (int i = 0; i < 5; ++i) {
      const auto& a = scene().vertebrae[i];
      const auto& b = back[i];
      CHECK(b.id == a.id);
      CHECK(b.surface_points == a.surface_points);
      CHECK(b.surface_normals == a.surface_normals);
      CHECK(b.reg_points == a.reg_points);
      CHECK(b.pedicle_points == a.pedicle_points);
      CHECK(b.landmarks == a.landmarks);
      for (int s = 0; s < 2; ++s) {
        CHECK(b.screws[s].side == a.screws[s].side);
        CHECK(b.screws[s].entry == a.screws[s].entry);
        CHECK(b.screws[s].direction == a.screws[s].direction);
        CHECK(b.screws[s].radius == a.screws[s].radius);
        CHECK(b.screws[s].length == a.screws[s].length);
      }
    }
    const std::string ply = read_file(tmp.path / "L2.ply");
    const std::string json = read_file(tmp.path / "L2.json");
    write_model(tmp.path / "again", back[1]);
    CHECK(read_file(tmp.path / "again.ply") == ply);
    CHECK(read_file(tmp.path / "again.json").size() == json.size());

    fs::rename(tmp.path / "L4.json", tmp.path / "L4.bak");
    CHECK_THROWS_AS(read_models(tmp.path), Error);
  }

  TEST_CASE("poses csv") {
    std::mt19937_64 rng(3);
    std::vector<PoseRow> rows;
    for (int f = 1; f <= 3; ++f)
      for (int v = 1; v <= 6; ++v) rows.push_back({f, v, v != 4, v % 2 == 0, oracle::random_transform(rng)});
    const std::string text = encode_poses(rows);
    CHECK(text.rfind(std::string(kPoseHeader) + "\n", 0) == 0);
    CHECK(decode_poses(text) == rows);
    CHECK(encode_poses(decode_poses(text)) == text);

    const std::string header = std::string(kPoseHeader) + "\n";
    CHECK(offset_of([&] { decode_poses("frame,vertebra\n"); }) == 0u);
    CHECK(offset_of([&] { decode_poses(header + "1,7,1,1,1,0,0,0,0,0,0\n"); }) == header.size() + 2);
    CHECK(offset_of([&] { decode_poses(header + "0,1,1,1,1,0,0,0,0,0,0\n"); }) == header.size());
    CHECK(offset_of([&] { decode_poses(header + "1,1,2,1,1,0,0,0,0,0,0\n"); }) == header.size() + 4);
    CHECK(offset_of([&] { decode_poses(header + "1,1,1,1,1,0,0,0,0,0\n"); }) == header.size());
    CHECK(offset_of([&] { decode_poses(header + "1,1,1,1,x,0,0,0,0,0,0\n"); }) == header.size() + 8);
  }

  TEST_CASE("shortest double formatting round-trips") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 10000; ++i) {
      const double x = u(rng);
      CHECK(std::stod(format_double(x)) == x);
    }
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(1.0) == "1");
  }

  TEST_CASE("markers csv") {
    std::map<int, std::vector<MarkerObservation>> m;
    MarkerObservation o;
    o.id = 2;
    for (int c = 0; c < 4; ++c) {
      o.left[c] = Pixel(100.25 + c, 200.5);
      o.right[c] = Pixel(80.125 + c, 200.5);
    }
    m[1] = {o};
    o.id = 0;
    m[3] = {o, o};
    m[3][1].id = 1;
    const std::string text = encode_markers(m);
    const auto back = decode_markers(text);
    CHECK(encode_markers(back) == text);
    REQUIRE(back.at(3).size() == 2);
    CHECK(back.at(3)[1].id == 1);
    CHECK(back.at(1)[0].right[3] == Pixel(83.125, 200.5));
    const std::string header = "frame,marker,corner,ul,vl,ur,vr\n";
    CHECK(offset_of([&] { decode_markers(header + "1,0,1,1,1,1,1\n"); }) == header.size() + 4);
  }

  TEST_CASE("recording round trip") {
    TempDir tmp;
    RecordingSpec spec;
    spec.frame_count = 3;
    spec.depth_noise_mm = 0.5;
    spec.prior_error_deg = 15.0;
    const SimulatedRecording sim(scene(), spec, 9);
    write_recording(tmp.path, sim);
    const DiskRecording disk(tmp.path);
    CHECK(disk.frame_count() == 3);
    CHECK(disk.fps() == 30.0);
    CHECK(disk.intrinsics() == sim.intrinsics());
    REQUIRE(disk.info().rig);
    CHECK(disk.info().rig->left == sim.scene().rig.left);
    CHECK(disk.info().sleeve.corners == sim.scene().sleeve.corners);
    CHECK(disk.info().target_vertebra == 3);
    for (int k = 1; k <= 3; ++k) {
      const Frame a = sim.frame(k);
      const Frame b = disk.frame(k);
      CHECK(b.index == k);
      CHECK(b.timestamp == a.timestamp);
      CHECK(b.depth == a.depth);
      REQUIRE(b.oracle);
      CHECK(b.oracle->mask == a.oracle->mask);
      CHECK(b.oracle->prior == a.oracle->prior);
      REQUIRE(disk.gt_poses().size() == 3);
      for (int i = 0; i < 5; ++i) {
        CHECK(disk.gt_poses()[k - 1][i].rotation == a.oracle->gt_poses[i].rotation);
        CHECK(disk.gt_poses()[k - 1][i].translation == a.oracle->gt_poses[i].translation);
      }
      REQUIRE(b.markers.size() == a.markers.size());
      for (std::size_t j = 0; j < a.markers.size(); ++j) {
        CHECK(b.markers[j].id == a.markers[j].id);
        CHECK(b.markers[j].left == a.markers[j].left);
        CHECK(b.markers[j].right == a.markers[j].right);
      }
    }
    const auto models = read_models(tmp.path / "models");
    CHECK(models[0].reg_points == sim.scene().vertebrae[0].reg_points);
    CHECK_THROWS_AS(disk.frame(4), Error);
    CHECK_THROWS_AS(DiskRecording(tmp.path / "missing"), Error);
  }

  TEST_CASE("frame file names") {
    CHECK(frame_file_name(7, "dpth") == "000007.dpth");
    CHECK(frame_file_name(123456, "msk") == "123456.msk");
  }
}
