#include <doctest.h>

#include <algorithm>
#include <random>

#include "oracles.hpp"
#include "vertereg/error.hpp"
#include "vertereg/eval.hpp"
#include "vertereg/maskgen.hpp"
#include "vertereg/register.hpp"
#include "vertereg/sim.hpp"

using namespace vertereg;

namespace {

const Scene& scene() {
  static const Scene s = make_scene(1, 1.0, 1.0);
  return s;
}

bool same_points(const PointList& a, const PointList& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

/// Pixels where vertebra `id` is the nearest rendered surface.
BinaryMask vertebra_pixels(const SimulatedRecording& rec, int index, int id) {
  const auto poses = rec.gt_poses(index);
  const std::vector<PointList> alone{transform_points(poses[id - 1], rec.scene().vertebrae[id - 1].surface_points)};
  const DepthMap mine = render_depth(alone, rec.intrinsics());
  const DepthMap all = rec.render(index);
  BinaryMask out(all.width, all.height);
  for (std::size_t i = 0; i < all.size(); ++i) out.data[i] = mine.data[i] > 0.0f && mine.data[i] == all.data[i];
  return out;
}

std::size_t overlap(const BinaryMask& a, const BinaryMask& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a.data[i] && b.data[i];
  return n;
}

/// Oracle segmentation with a block of the mask erased.
class ErasingSegmenter final : public Segmenter {
 public:
  explicit ErasingSegmenter(std::uint64_t seed) : seed_(seed) {}
  Segmentation segment(const Frame& frame) override {
    Segmentation s{frame.oracle->mask, frame.oracle->prior};
    int v0 = s.mask.height, v1 = -1;
    for (int v = 0; v < s.mask.height; ++v)
      for (int u = 0; u < s.mask.width; ++u)
        if (s.mask.at(u, v)) {
          v0 = std::min(v0, v);
          v1 = std::max(v1, v);
        }
    std::mt19937_64 rng(seed_);
    const int span = (v1 - v0) / 3;
    const int start = v0 + std::uniform_int_distribution<int>(0, v1 - v0 - span)(rng);
    for (int v = start; v <= start + span; ++v)
      for (int u = 0; u < s.mask.width; ++u) s.mask.at(u, v) = 0;
    return s;
  }

 private:
  std::uint64_t seed_;
};

double initial_tre(const SimulatedRecording& rec, Segmenter& seg) {
  const Frame f = rec.frame(1);
  const RegistrationState st = register_initial_frame(f, rec.scene().vertebrae, seg, rec.intrinsics(), {});
  const auto gt = rec.gt_poses(1);
  double sum = 0.0;
  for (int i = 0; i < kVertebraCount; ++i) sum += tre(gt[i], st.vertebrae[i].pose, rec.scene().vertebrae[i].landmarks);
  return sum / kVertebraCount;
}

}  // namespace

TEST_SUITE("sim") {
  TEST_CASE("scene construction") {
    const Scene& s = scene();
    REQUIRE(s.vertebrae.size() == 5);
    std::size_t screws = 0, landmarks = 0;
    for (const auto& m : s.vertebrae) {
      CHECK_NOTHROW(m.validate());
      screws += m.screws.size();
      landmarks += m.landmarks.size();
      CHECK(!m.pedicle_points.empty());
      CHECK(m.reg_points.size() < m.surface_points.size());
    }
    CHECK(screws == 10);
    CHECK(landmarks == 15);
    for (int id = 2; id <= 5; ++id) CHECK(s.vertebra_center(id).y() > s.vertebra_center(id - 1).y());
    CHECK_THROWS_AS(s.vertebra_center(6), Error);
    CHECK_THROWS_AS(make_scene(1, 0.0), Error);
    CHECK_THROWS_AS(make_scene(1, 1.0, -1.0), Error);
  }

  TEST_CASE("every model point projects inside the image") {
    const Scene& s = scene();
    for (const auto& m : s.vertebrae) {
      for (const Vec3& p : m.surface_points) {
        const Vec3 c = apply(s.spine_pose, p);
        REQUIRE(c.z() > 0.0);
        const auto px = s.intrinsics.project(c);
        CHECK((px.x() >= 0.0 && px.y() >= 0.0 && px.x() <= s.intrinsics.width - 1 && px.y() <= s.intrinsics.height - 1));
      }
    }
  }

  TEST_CASE("scenes are deterministic") {
    const Scene a = make_scene(7, 1.0, 1.5);
    const Scene b = make_scene(7, 1.0, 1.5);
    for (int i = 0; i < 5; ++i) {
      CHECK(same_points(a.vertebrae[i].surface_points, b.vertebrae[i].surface_points));
      CHECK(same_points(a.vertebrae[i].reg_points, b.vertebrae[i].reg_points));
      CHECK(same_points(a.vertebrae[i].pedicle_points, b.vertebrae[i].pedicle_points));
      CHECK(a.vertebrae[i].landmarks == b.vertebrae[i].landmarks);
    }
    const Scene c = make_scene(8, 1.0, 1.5);
    CHECK(!same_points(a.vertebrae[0].surface_points, c.vertebrae[0].surface_points));
  }

  TEST_CASE("anatomy scale is a similarity") {
    const Scene a = make_scene(3, 1.0, 1.5);
    const Scene b = make_scene(3, 0.8, 1.5);
    std::vector<Vec3> la, lb;
    for (int i = 0; i < 5; ++i) {
      la.insert(la.end(), a.vertebrae[i].landmarks.begin(), a.vertebrae[i].landmarks.end());
      lb.insert(lb.end(), b.vertebrae[i].landmarks.begin(), b.vertebrae[i].landmarks.end());
    }
    for (std::size_t i = 0; i < la.size(); ++i)
      for (std::size_t j = i + 1; j < la.size(); ++j)
        CHECK(std::abs((lb[i] - lb[j]).norm() - 0.8 * (la[i] - la[j]).norm()) < 1e-9);
  }

  TEST_CASE("spec validation") {
    RecordingSpec s;
    CHECK_NOTHROW(s.validate());
    s.fps = 0.0;
    CHECK_THROWS_AS(s.validate(), Error);
    s = {};
    s.dropout = 1.0;
    CHECK_THROWS_AS(s.validate(), Error);
    s = {};
    s.depth_noise_mm = -0.1;
    CHECK_THROWS_AS(s.validate(), Error);
    s = {};
    s.frame_count = 0;
    CHECK_THROWS_AS(s.validate(), Error);
  }

  TEST_CASE("static noise-free recording repeats itself") {
    RecordingSpec spec;
    spec.frame_count = 4;
    spec.markers = false;
    const SimulatedRecording rec(scene(), spec, 11);
    const Frame f1 = rec.frame(1);
    for (int k = 2; k <= 4; ++k) {
      const Frame f = rec.frame(k);
      CHECK(f.depth == f1.depth);
      CHECK(f.oracle->mask == f1.oracle->mask);
      CHECK(f.timestamp == doctest::Approx((k - 1) / 30.0));
    }
    CHECK_THROWS_AS(rec.frame(0), Error);
    CHECK_THROWS_AS(rec.frame(5), Error);
    const Frame again = SimulatedRecording(scene(), spec, 11).frame(3);
    CHECK(again.depth == rec.frame(3).depth);
  }

  TEST_CASE("sensor depth is the quantized render where the spine is nearest") {
    RecordingSpec spec;
    spec.frame_count = 1;
    const SimulatedRecording rec(scene(), spec, 2);
    const DepthMap r = rec.render(1);
    const DepthMap d = rec.frame(1).depth;
    std::size_t checked = 0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (r.data[i] > 0.0f) {
        CHECK(std::abs(d.data[i] - r.data[i]) <= 0.5f * kDepthUnitMm + 1e-3f);
        ++checked;
      }
    }
    CHECK(checked > 1000);
  }

  TEST_CASE("occluder removes a vertebra from the mask on its frames only") {
    RecordingSpec spec;
    spec.frame_count = 22;
    spec.markers = false;
    const SimulatedRecording plain(scene(), spec, 5);
    spec.occluders.push_back(occluder_over_vertebra(scene(), plain.gt_poses(1)[2], 3, 1.0, 10, 20));
    const SimulatedRecording rec(scene(), spec, 5);
    const BinaryMask l3 = vertebra_pixels(rec, 1, 3);
    const BinaryMask l1 = vertebra_pixels(rec, 1, 1);
    const BinaryMask base = rec.frame(1).oracle->mask;
    const std::size_t l3_base = overlap(base, l3);
    REQUIRE(l3_base > 500);
    for (int k : {9, 21}) CHECK(rec.frame(k).oracle->mask == base);
    for (int k : {10, 15, 20}) {
      const BinaryMask m = rec.frame(k).oracle->mask;
      CHECK(overlap(m, l3) < l3_base / 20);
      CHECK(overlap(m, l1) == overlap(base, l1));
    }
  }

  TEST_CASE("whole-image occluder in the initial frame is rejected") {
    RecordingSpec spec;
    spec.frame_count = 3;
    Occluder wall;
    wall.min = Vec3(-1e4, -1e4, 10.0);
    wall.max = Vec3(1e4, 1e4, 11.0);
    spec.occluders.push_back(wall);
    try {
      SimulatedRecording(scene(), spec, 1);
      FAIL("expected rejected_spec");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::rejected_spec);
    }
  }

  TEST_CASE("prior corruption angle") {
    RecordingSpec spec;
    spec.frame_count = 31;
    spec.prior_error_deg = 15.0;
    spec.markers = false;
    const SimulatedRecording rec(scene(), spec, 9);
    std::vector<double> errs;
    for (int k = 1; k <= spec.frame_count; ++k) {
      errs.push_back(geodesic_angle(rec.frame(k).oracle->prior, rec.gt_poses(k)[2].rotation) * 180.0 / oracle::kPi);
    }
    std::nth_element(errs.begin(), errs.begin() + 15, errs.end());
    CHECK(errs[15] == doctest::Approx(15.0).epsilon(1e-6));
    for (double a : {0.1, 0.5, 1.0, 2.5}) {
      std::mt19937_64 rng(17);
      const Quaternion q = oracle::random_rotation(rng);
      CHECK(geodesic_angle(q, corrupt_rotation(q, a, 42)) == doctest::Approx(a).epsilon(1e-9));
    }
  }

  TEST_CASE("motion script") {
    Motion m;
    m.translation = Vec3(1, 0, 0);
    m.frequency_hz = 0.25;
    const Vec3 c(0, 0, 0);
    CHECK(m.at(1, 30.0, c).translation.norm() < 1e-12);
    CHECK((m.at(31, 30.0, c).translation - Vec3(1, 0, 0)).norm() < 1e-12);
    Motion lin;
    lin.kind = MotionKind::linear;
    lin.translation = Vec3(0, 0.1, 0);
    lin.first_frame = 5;
    CHECK((lin.at(15, 30.0, c).translation - Vec3(0, 1.0, 0)).norm() < 1e-12);
  }

  TEST_CASE("a vertebra missing from the cloud is frozen, the rest register") {
    RecordingSpec spec;
    spec.frame_count = 1;
    spec.markers = false;
    const SimulatedRecording plain(scene(), spec, 4);
    spec.occluders.push_back(occluder_over_vertebra(scene(), plain.gt_poses(1)[4], 5, 1.0, 1, 1));
    const SimulatedRecording rec(scene(), spec, 4);
    const Frame hidden = rec.frame(1);
    // The centroid comes from the unoccluded view: hiding a whole vertebra
    // moves the largest-component centroid beyond the general ICP gate.
    const SegmentedClouds full = segment_clouds(plain.frame(1).depth, plain.frame(1).oracle->mask, rec.intrinsics());
    const SegmentedClouds part = segment_clouds(hidden.depth, hidden.oracle->mask, rec.intrinsics());
    const RegistrationState st =
        register_clouds(part.segmented, full.component, hidden.oracle->prior, scene().vertebrae, {});
    const auto gt = rec.gt_poses(1);
    for (int i = 0; i < 5; ++i) {
      CHECK(st.vertebrae[i].frozen == (i == 4));
      if (i < 4) CHECK(tre(gt[i], st.vertebrae[i].pose, scene().vertebrae[i].landmarks) < 1.0);
    }
  }

  TEST_CASE("corrupted masks degrade registration") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      RecordingSpec spec;
      spec.frame_count = 1;
      spec.markers = false;
      const SimulatedRecording rec(scene(), spec, seed);
      OracleSegmenter clean;
      ErasingSegmenter erased(seed);
      CHECK(initial_tre(rec, clean) < initial_tre(rec, erased));
    }
  }
}
