#include <doctest.h>

#include <memory>
#include <random>

#include "oracles.hpp"
#include "vertereg/error.hpp"
#include "vertereg/eval.hpp"
#include "vertereg/sim.hpp"

using namespace vertereg;
using oracle::kPi;

namespace {

constexpr double kDeg = kPi / 180.0;

const Scene& scene() {
  static const Scene s = make_scene(1, 1.0, 1.0);
  return s;
}

FrameResult result_from(const std::vector<RigidTransform>& poses, int frame) {
  FrameResult r;
  r.frame = frame;
  for (int i = 0; i < static_cast<int>(poses.size()); ++i) {
    VertebraResult v;
    v.id = i + 1;
    v.pose = poses[i];
    v.valid = true;
    r.vertebrae.push_back(v);
  }
  return r;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("target registration error") {
    const std::array<Vec3, 3> lm{Vec3(30, 0, 0), Vec3(-15, 25.98076211353316, 0), Vec3(-15, -25.98076211353316, 0)};
    const RigidTransform gt{Quaternion::from_axis_angle(Vec3(1, 2, 0).normalized(), 0.3), Vec3(5, 6, 400)};
    CHECK(tre(gt, gt, lm) == 0.0);
    const Vec3 t(1, -2, 2);
    CHECK(tre(gt, compose(RigidTransform::from_translation(t), gt), lm) == doctest::Approx(3.0).epsilon(1e-12));
    // Landmarks 30 mm from their centroid, 2 degrees about the centroid.
    const RigidTransform rot = compose(gt, RigidTransform::from_rotation(Quaternion::from_axis_angle(Vec3::UnitZ(), 2 * kDeg)));
    CHECK(tre(gt, rot, lm) == doctest::Approx(2.0 * 30.0 * std::sin(kDeg)).epsilon(1e-12));
    CHECK(std::abs(tre(gt, rot, lm) - 1.047) < 1e-3);
    CHECK_THROWS_AS(tre(gt, gt, std::span<const Vec3>{}), Error);

    std::mt19937_64 rng(1);
    for (int i = 0; i < 100; ++i) {
      const RigidTransform a = oracle::random_transform(rng), b = oracle::random_transform(rng);
      const RigidTransform g = oracle::random_transform(rng);
      CHECK(tre(compose(g, a), compose(g, b), lm) == doctest::Approx(tre(a, b, lm)).epsilon(1e-9));
      double direct = 0.0;
      for (const Vec3& p : lm) direct += (oracle::apply(a, p) - oracle::apply(b, p)).norm();
      CHECK(tre(a, b, lm) == doctest::Approx(direct / 3.0).epsilon(1e-9));
    }
  }

  TEST_CASE("recording mean") {
    std::vector<double> s(100);
    for (int i = 0; i < 100; ++i) s[i] = i + 1;
    CHECK(recording_mean(s) == doctest::Approx((61 + 100) / 2.0));
    CHECK(recording_mean(s, 1) == doctest::Approx(50.5));
    CHECK_THROWS_AS(recording_mean(std::span(s).first(60)), Error);
  }

  TEST_CASE("trajectory and entry point errors") {
    const Vec3 dir = Vec3(0.2, 0.1, 1).normalized();
    const RigidTransform gt{Quaternion::from_axis_angle(Vec3::UnitY(), 0.2), Vec3(0, 0, 400)};
    CHECK(trajectory_error(dir, gt, gt) == 0.0);
    const Vec3 perp = dir.cross(Vec3::UnitX()).normalized();
    const RigidTransform tilted = compose(gt, RigidTransform::from_rotation(Quaternion::from_axis_angle(perp, 2 * kDeg)));
    CHECK(trajectory_error(dir, gt, tilted) == doctest::Approx(2.0).epsilon(1e-9));
    const RigidTransform spun = compose(gt, RigidTransform::from_rotation(Quaternion::from_axis_angle(dir, 1.0)));
    CHECK(trajectory_error(dir, gt, spun) < 1e-6);

    const Vec3 entry(10, -4, 7);
    CHECK(entry_point_error(entry, gt, gt) == 0.0);
    CHECK(entry_point_error(entry, gt, compose(RigidTransform::from_translation({3, 4, 0}), gt)) ==
          doctest::Approx(5.0).epsilon(1e-12));
    std::mt19937_64 rng(2);
    for (int i = 0; i < 100; ++i) {
      const RigidTransform a = oracle::random_transform(rng), b = oracle::random_transform(rng);
      CHECK(std::abs(entry_point_error(entry, a, b) - (oracle::apply(a, entry) - oracle::apply(b, entry)).norm()) <
            1e-12 * 400);
    }
  }

  TEST_CASE("perforation analytic cases") {
    ScrewPlan s;
    s.entry = Vec3::Zero();
    s.direction = Vec3::UnitZ();
    s.radius = 2.5;
    s.length = 45.0;
    const PointList outside{{3, 0, 10}, {0, 0, -1}, {0, 0, 46}};
    CHECK(!perforation(outside, s));
    const PointList mid{{1, 0, 22.5}};
    REQUIRE(perforation(mid, s));
    CHECK(*perforation(mid, s) == doctest::Approx(1.5).epsilon(1e-12));
    const PointList near_cap{{0, 0, 0.5}};
    CHECK(*perforation(near_cap, s) == doctest::Approx(0.5));
    PerforationOptions lateral;
    lateral.lateral_only = true;
    CHECK(*perforation(near_cap, s, lateral) == doctest::Approx(2.5));
    const PointList rim{{2.5, 0, 10}};
    CHECK(!perforation(rim, s));  // radial < radius is strict
    s.radius = 0.0;
    CHECK_THROWS_AS(perforation(mid, s), Error);
    CHECK(is_safe(std::nullopt));
    CHECK(is_safe(1.99));
    CHECK(!is_safe(2.0));
  }

  TEST_CASE("perforation agrees with a Monte-Carlo surface scan") {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 5; ++t) {
      ScrewPlan s;
      s.entry = oracle::random_points(rng, 1, 20.0)[0];
      s.direction = oracle::random_unit(rng);
      s.radius = 2.5;
      s.length = 20.0 + 10.0 * t;
      PointList pts;
      std::uniform_real_distribution<double> u(-1.0, 1.0), along(-2.0, s.length + 2.0);
      const Vec3 e1 = s.direction.unitOrthogonal(), e2 = s.direction.cross(e1);
      for (int i = 0; i < 60; ++i) {
        pts.push_back(s.entry + along(rng) * s.direction + 3.0 * u(rng) * e1 + 3.0 * u(rng) * e2);
      }
      for (bool lateral : {false, true}) {
        PerforationOptions o;
        o.lateral_only = lateral;
        const auto got = perforation(pts, s, o);
        const auto mc = oracle::monte_carlo_perforation(pts, s, lateral, 1000000, rng);
        REQUIRE(got.has_value() == mc.has_value());
        if (got) {
          CHECK(*got <= *mc + 1e-12);
          CHECK(std::abs(*got - *mc) <= 0.05);
        }
      }
    }
  }

  TEST_CASE("perforation depth is bounded by the radius") {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 50; ++t) {
      ScrewPlan s;
      s.direction = oracle::random_unit(rng);
      s.radius = 1.0 + t * 0.1;
      s.length = 30.0;
      const PointList pts = oracle::random_points(rng, 2000, 20.0);
      const auto d = perforation(pts, s);
      if (d) CHECK(*d <= s.radius);
      PerforationOptions lateral;
      lateral.lateral_only = true;
      const auto dl = perforation(pts, s, lateral);
      if (dl) CHECK(*dl <= s.radius);
      if (d) CHECK(*dl >= *d);
    }
  }

  TEST_CASE("perforation grows as the screw moves into a blob") {
    // Densely filled ellipsoid; the screw runs along z and slides in along x.
    const double h = 0.25;
    PointList blob;
    for (double x = -12; x <= 12; x += h)
      for (double y = -8; y <= 8; y += h)
        for (double z = -20; z <= 20; z += h)
          if (x * x / 144 + y * y / 64 + z * z / 400 <= 1.0) blob.emplace_back(x, y, z);
    ScrewPlan s;
    s.direction = Vec3::UnitZ();
    s.radius = 2.5;
    s.length = 10.0;
    double prev = 0.0;
    for (double x = 16.0; x >= 0.0; x -= 0.5) {
      s.entry = Vec3(x, 0.0, -5.0);
      const double d = perforation(blob, s).value_or(0.0);
      CHECK(d >= prev - h * std::sqrt(3.0) / 2.0);
      prev = std::max(prev, d);
    }
    CHECK(prev > 2.0);
  }

  TEST_CASE("screw perforation uses ground-truth pedicles against the estimated screw") {
    const auto& m = scene().vertebrae[2];
    const RigidTransform gt = scene().spine_pose;
    for (Side side : {Side::left, Side::right}) CHECK(is_safe(screw_perforation(m, side, gt, gt)));
    const Vec3 axis = m.screw(Side::left).direction.unitOrthogonal();
    const RigidTransform off = compose(gt, RigidTransform::from_translation(3.75 * axis));
    const auto d = screw_perforation(m, Side::left, gt, off);
    REQUIRE(d);
    CHECK(!is_safe(d));
  }

  TEST_CASE("success rate") {
    const bool all[4] = {true, true, true, true};
    CHECK(success_rate(all) == 1.0);
    const bool three[4] = {true, false, true, true};
    CHECK(success_rate(three) == 0.75);
    const bool none[3] = {false, false, false};
    CHECK(success_rate(none) == 0.0);
    CHECK_THROWS_AS(success_rate(std::span<const bool>{}), Error);
    std::mt19937_64 rng(5);
    std::bernoulli_distribution b(0.7);
    for (int t = 0; t < 20; ++t) {
      std::vector<char> x(1 + t * 3), y(2 + t);
      for (auto& v : x) v = b(rng);
      for (auto& v : y) v = b(rng);
      auto rate = [](const std::vector<char>& v) {
        auto p = std::make_unique<bool[]>(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) p[i] = v[i];
        return success_rate(std::span<const bool>(p.get(), v.size()));
      };
      std::vector<char> xy = x;
      xy.insert(xy.end(), y.begin(), y.end());
      const double expect = (rate(x) * x.size() + rate(y) * y.size()) / xy.size();
      CHECK(rate(xy) == doctest::Approx(expect).epsilon(1e-12));
      CHECK(rate(xy) >= 0.0);
      CHECK(rate(xy) <= 1.0);
    }
  }

  TEST_CASE("viewpoint angle") {
    const Vec3 n = Vec3::UnitZ();
    CHECK(viewpoint_angle(n, n) == 0.0);
    CHECK(viewpoint_acceptable(viewpoint_angle(n, n)));
    CHECK(viewpoint_angle(-n, n) == 0.0);
    const Vec3 at30(std::sin(30 * kDeg), 0, std::cos(30 * kDeg));
    CHECK(viewpoint_angle(at30, n) == doctest::Approx(30.0));
    CHECK(!viewpoint_acceptable(viewpoint_angle(at30, n)));
    CHECK(!viewpoint_acceptable(30.0));
    CHECK(viewpoint_acceptable(29.9));
    const Vec3 at45(std::sin(45 * kDeg), 0, std::cos(45 * kDeg));
    CHECK(viewpoint_angle(at45, -n) == doctest::Approx(45.0));
    CHECK(!viewpoint_acceptable(viewpoint_angle(at45, n)));
  }

  TEST_CASE("ablation modes") {
    CHECK(parse_ablation_mode("general") == AblationMode::general);
    CHECK(parse_ablation_mode("Refinement") == AblationMode::refinement);
    CHECK(parse_ablation_mode("first-60") == AblationMode::first60);
    CHECK(parse_ablation_mode("first60") == AblationMode::first60);
    CHECK(parse_ablation_mode("FULL") == AblationMode::full);
    for (AblationMode m : kAblationModes) CHECK(parse_ablation_mode(to_string(m)) == m);
    try {
      parse_ablation_mode("partial");
      FAIL("expected unknown_mode");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::unknown_mode);
    }
  }

  TEST_CASE("pipeline modes gate the updates") {
    PointList cloud;
    for (const auto& m : scene().vertebrae) {
      const PointList p = transform_points(scene().spine_pose, m.reg_points);
      cloud.insert(cloud.end(), p.begin(), p.end());
    }
    // A slow drift of the whole spine after the first frame.
    auto shifted = [&](int frame) {
      PointList out;
      const Vec3 d(0.02 * (frame - 1), 0.0, 0.0);
      for (const Vec3& p : cloud) out.push_back(p + d);
      return out;
    };
    std::array<std::vector<FrameResult>, 4> runs;
    for (AblationMode mode : kAblationModes) {
      PipelineOptions o;
      o.mode = mode;
      o.update_frames = 5;
      RegistrationPipeline p(scene().vertebrae, scene().intrinsics, o);
      for (int f = 1; f <= 12; ++f) {
        const PointList c = shifted(f);
        runs[static_cast<int>(mode)].push_back(p.process_clouds(f, (f - 1) / 30.0, c, c, scene().spine_pose.rotation));
      }
    }
    auto x_of = [](const FrameResult& r) { return r.vertebrae[2].pose.translation.x(); };
    const auto& gen = runs[0];
    const auto& ref = runs[1];
    const auto& f60 = runs[2];
    const auto& full = runs[3];
    for (int f = 1; f < 12; ++f) {
      CHECK(x_of(gen[f]) == x_of(gen[0]));
      CHECK(x_of(ref[f]) == x_of(ref[0]));
      CHECK(!ref[f].vertebrae[2].updated);
      CHECK(full[f].vertebrae[2].updated);
    }
    CHECK(x_of(f60[5]) == x_of(full[5]));
    for (int f = 6; f < 12; ++f) CHECK(x_of(f60[f]) == x_of(f60[5]));
    CHECK(x_of(full[11]) > x_of(f60[11]));
    CHECK_THROWS_AS(
        [&] {
          RegistrationPipeline p(scene().vertebrae, scene().intrinsics, {});
          p.process_clouds(1, 0.0, cloud, cloud, Quaternion{});
          p.process_clouds(1, 0.0, cloud, cloud, Quaternion{});
        }(),
        Error);
  }

  TEST_CASE("evaluating ground truth against itself") {
    RecordingSpec spec;
    spec.frame_count = 3;
    const SimulatedRecording rec(scene(), spec, 1);
    std::vector<FrameResult> est;
    std::vector<std::vector<RigidTransform>> gt;
    for (int f = 1; f <= 3; ++f) {
      gt.push_back(rec.gt_poses(f));
      est.push_back(result_from(gt.back(), f));
    }
    const RecordingMetrics m = evaluate_recording(scene().vertebrae, est, gt, 3, Side::left, 1);
    CHECK(m.tre == 0.0);
    CHECK(m.success_rate == 1.0);
    CHECK(m.median_trajectory_deg == 0.0);
    CHECK(m.median_entry_mm == 0.0);
    est[1].vertebrae[2].valid = false;
    CHECK(evaluate_recording(scene().vertebrae, est, gt, 3, Side::left, 1).success_rate == doctest::Approx(2.0 / 3.0));
  }

  TEST_CASE("drill tracker follows the sleeve") {
    RecordingSpec spec;
    spec.frame_count = 60;
    spec.marker_noise_px = 0.0;
    const SimulatedRecording rec(scene(), spec, 2);
    DrillTracker tracker(scene().rig, scene().sleeve);
    for (int f = 1; f <= spec.frame_count; ++f) {
      const Frame fr = rec.frame(f);
      const auto pose = tracker.process(fr.markers, fr.timestamp);
      REQUIRE(pose);
      CHECK(translation_distance(*pose, *fr.oracle->drill_pose) < 1.0);
      CHECK(std::abs(pose->rotation.norm() - 1.0) < 1e-12);
    }
    CHECK(!tracker.process({}, 10.0));
  }
}
