#include "vertereg/sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "vertereg/error.hpp"
#include "vertereg/maskgen.hpp"

namespace vertereg {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

enum Stream : std::uint64_t { depth_noise = 0, prior_noise = 1, marker_noise = 2, recording_setup = 3, scene_shape = 4 };

std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t frame, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(frame), static_cast<std::uint32_t>(frame >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

Vec3 random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const Vec3 v(n(rng), n(rng), n(rng));
    const double len = v.norm();
    if (len > 1e-9) return v / len;
  }
}

struct Lobe {
  Vec3 center;
  Vec3 semi;

  double level(const Vec3& p) const { return (p - center).cwiseQuotient(semi).squaredNorm(); }
};

// Knud Thomsen's approximation, within about 1 % for any ellipsoid.
double ellipsoid_area(const Vec3& s) {
  constexpr double p = 1.6075;
  const double ab = std::pow(s.x() * s.y(), p);
  const double ac = std::pow(s.x() * s.z(), p);
  const double bc = std::pow(s.y() * s.z(), p);
  return 4.0 * std::numbers::pi * std::pow((ab + ac + bc) / 3.0, 1.0 / p);
}

/// Near-uniform surface sample: a Fibonacci sphere oversampled by the
/// largest area stretch and thinned by a low-discrepancy acceptance test.
void sample_ellipsoid(const Lobe& lobe, double spacing, PointList& points, PointList& normals) {
  const Vec3& s = lobe.semi;
  const double area = ellipsoid_area(s);
  const double target = std::ceil(area / (0.8660254037844386 * spacing * spacing));
  const double abc = s.x() * s.y() * s.z();
  const double max_jac = abc / s.minCoeff();
  const double mean_jac = area / (4.0 * std::numbers::pi);
  const auto n = static_cast<std::size_t>(std::ceil(target * max_jac / mean_jac));
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t j = 0; j < n; ++j) {
    const double z = 1.0 - (2.0 * static_cast<double>(j) + 1.0) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = golden * static_cast<double>(j);
    const Vec3 u(r * std::cos(phi), r * std::sin(phi), z);
    const double jac = abc * u.cwiseQuotient(s).norm();
    const double gate = std::fmod(static_cast<double>(j) * 0.7548776662466927 + 0.5, 1.0);
    if (gate >= jac / max_jac) continue;
    points.push_back(lobe.center + u.cwiseProduct(s));
    normals.push_back(u.cwiseQuotient(s).normalized());
  }
}

struct VertebraShape {
  Lobe body, arch, spinous;
  std::array<Lobe, 2> pedicle, transverse, superior, inferior;  // [left, right]

  std::vector<Lobe> lobes() const {
    return {body,          arch,          spinous,     pedicle[0], pedicle[1], transverse[0],
            transverse[1], superior[0],   superior[1], inferior[0], inferior[1]};
  }
};

VertebraShape make_shape(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> jitter(0.96, 1.04);
  auto lobe = [&](Vec3 c, Vec3 s) { return Lobe{scale * c, scale * jitter(rng) * s}; };
  VertebraShape v;
  v.body = lobe({0, 0, 0}, {21, 12, 16});
  v.arch = lobe({0, 2, -30}, {12, 10, 5});
  v.spinous = lobe({0, 5, -45}, {4, 10, 14});
  for (int side = 0; side < 2; ++side) {
    const double sx = side == 0 ? -1.0 : 1.0;  // left is -x
    v.pedicle[side] = lobe({sx * 10, 0, -21}, {4, 5, 9});
    v.transverse[side] = lobe({sx * 30, 0, -24}, {13, 5, 5});
    v.superior[side] = lobe({sx * 13, -13, -30}, {5, 6, 6});
    v.inferior[side] = lobe({sx * 11, 16, -33}, {5, 7, 6});
  }
  return v;
}

void sample_pedicle(const ScrewPlan& screw, double radius, double length, double spacing, PointList& out) {
  const Vec3& d = screw.direction;
  const Vec3 e1 = d.cross(Vec3::UnitY()).normalized();
  const Vec3 e2 = d.cross(e1);
  const int rings = static_cast<int>(std::ceil(length / spacing));
  const int around = static_cast<int>(std::ceil(2.0 * std::numbers::pi * radius / spacing));
  for (int i = 0; i <= rings; ++i) {
    const Vec3 c = screw.entry + d * (length * i / rings);
    for (int j = 0; j < around; ++j) {
      const double a = 2.0 * std::numbers::pi * j / around;
      out.push_back(c + radius * (std::cos(a) * e1 + std::sin(a) * e2));
    }
  }
}

VertebraModel build_vertebra(int id, const VertebraShape& shape, const RigidTransform& place, double scale,
                             double spacing) {
  VertebraModel m;
  m.id = id;
  const std::vector<Lobe> lobes = shape.lobes();
  PointList pts, nrm;
  for (std::size_t a = 0; a < lobes.size(); ++a) {
    PointList lp, ln;
    sample_ellipsoid(lobes[a], spacing, lp, ln);
    for (std::size_t i = 0; i < lp.size(); ++i) {
      bool buried = false;
      for (std::size_t b = 0; b < lobes.size() && !buried; ++b) {
        buried = b != a && lobes[b].level(lp[i]) < 1.0;
      }
      if (buried) continue;
      pts.push_back(lp[i]);
      nrm.push_back(ln[i]);
    }
  }
  const Mat3 r = place.rotation_matrix();
  m.surface_points = transform_points(place, pts);
  m.surface_normals.reserve(nrm.size());
  for (const Vec3& n : nrm) m.surface_normals.push_back(r * n);

  m.landmarks[static_cast<int>(Landmark::spinous_process)] =
      apply(place, shape.spinous.center - Vec3(0, 0, shape.spinous.semi.z()));
  m.landmarks[static_cast<int>(Landmark::left_transverse)] =
      apply(place, shape.transverse[0].center - Vec3(shape.transverse[0].semi.x(), 0, 0));
  m.landmarks[static_cast<int>(Landmark::right_transverse)] =
      apply(place, shape.transverse[1].center + Vec3(shape.transverse[1].semi.x(), 0, 0));

  const double convergence = 10.0 * kDeg;
  for (int side = 0; side < 2; ++side) {
    const double medial = side == 0 ? 1.0 : -1.0;
    const Vec3 d(medial * std::sin(convergence), 0.0, std::cos(convergence));
    const Lobe& ped = shape.pedicle[side];
    ScrewPlan local;
    local.side = static_cast<Side>(side);
    local.direction = d;
    local.entry = ped.center - ped.semi.z() * d;
    local.length = 45.0 * scale;
    sample_pedicle(local, 3.75 * scale, 30.0 * scale, spacing, m.pedicle_points);
    ScrewPlan& s = m.screws[side];
    s = local;
    s.entry = apply(place, local.entry);
    s.direction = r * d;
  }
  for (Vec3& p : m.pedicle_points) p = apply(place, p);

  for (std::size_t i : posterior_visible_indices(m.surface_points, m.surface_normals, Vec3::UnitZ())) {
    m.reg_points.push_back(m.surface_points[i]);
  }
  return m;
}

void shift_model(VertebraModel& m, const Vec3& offset) {
  for (Vec3& p : m.surface_points) p += offset;
  for (Vec3& p : m.reg_points) p += offset;
  for (Vec3& p : m.pedicle_points) p += offset;
  for (Vec3& p : m.landmarks) p += offset;
  for (ScrewPlan& s : m.screws) s.entry += offset;
}

}  // namespace

Vec3 Scene::vertebra_center(int id) const {
  for (const VertebraModel& m : vertebrae) {
    if (m.id == id) return centroid(m.reg_points);
  }
  throw Error(Errc::invalid_argument, "no vertebra with id " + std::to_string(id));
}

Scene make_scene(std::uint64_t seed, double scale, double spacing_mm) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw Error(Errc::invalid_argument, "scene scale must be positive");
  if (!(spacing_mm > 0.0)) throw Error(Errc::invalid_argument, "sampling spacing must be positive");
  auto rng = make_rng(seed, 0, scene_shape);
  std::uniform_real_distribution<double> tilt(-1.0, 1.0);
  constexpr std::array<double, kVertebraCount> lordosis{-8.0, -4.0, 0.0, 4.0, 8.0};

  Scene scene;
  for (int i = 0; i < kVertebraCount; ++i) {
    const VertebraShape shape = make_shape(rng, scale);
    const double angle = (lordosis[i] + tilt(rng)) * kDeg;
    const RigidTransform place{Quaternion::from_axis_angle(Vec3::UnitX(), angle),
                               Vec3(0.0, (i - 2) * 36.0 * scale, 0.0)};
    scene.vertebrae.push_back(build_vertebra(i + 1, shape, place, scale, spacing_mm));
  }
  PointList all;
  for (const VertebraModel& m : scene.vertebrae) all.insert(all.end(), m.reg_points.begin(), m.reg_points.end());
  const Vec3 offset = -centroid(all);
  for (VertebraModel& m : scene.vertebrae) shift_model(m, offset);

  scene.intrinsics = {600.0, 600.0, 319.5, 239.5, 640, 480};
  scene.spine_pose = RigidTransform::from_translation({0.0, 0.0, 450.0});

  const CameraIntrinsics stereo{1400.0, 1400.0, 959.5, 539.5, 1920, 1080};
  scene.rig = {stereo, stereo, RigidTransform::from_translation({63.0, 0.0, 0.0})};
  const std::array<Vec3, 4> square{Vec3(-10, -10, 0), Vec3(10, -10, 0), Vec3(10, 10, 0), Vec3(-10, 10, 0)};
  const std::array<std::pair<Vec3, double>, 3> faces{
      std::pair{Vec3(0, 0, 0), 0.0}, std::pair{Vec3(25, 0, 5), 40.0}, std::pair{Vec3(-25, 0, 5), -40.0}};
  for (int id = 0; id < 3; ++id) {
    const Quaternion q = Quaternion::from_axis_angle(Vec3::UnitY(), faces[id].second * kDeg);
    std::array<Vec3, 4> corners;
    for (int c = 0; c < 4; ++c) corners[c] = q.rotate(square[c]) + faces[id].first;
    scene.sleeve.corners[id] = corners;
  }
  scene.sleeve_pose = RigidTransform::from_translation({0.0, 30.0, 400.0});
  return scene;
}

std::optional<double> Occluder::ray_depth(const CameraIntrinsics& k, int u, int v) const {
  const Vec3 d((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (d[a] == 0.0) {
      if (0.0 < min[a] || 0.0 > max[a]) return std::nullopt;
      continue;
    }
    double lo = min[a] / d[a];
    double hi = max[a] / d[a];
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
  }
  if (t0 > t1 || !(t0 > 0.0)) return std::nullopt;
  return t0;  // d.z == 1, so the ray parameter is the depth
}

RigidTransform Motion::at(int frame, double fps, const Vec3& center) const {
  double s = 0.0;
  if (kind == MotionKind::sinusoid) {
    if (!(frame >= first_frame && frame <= last_frame)) return {};
    const double t = (frame - 1) / fps;
    s = std::sin(2.0 * std::numbers::pi * frequency_hz * t + phase);
  } else {
    s = static_cast<double>(std::clamp(frame, first_frame, last_frame) - first_frame);
  }
  const RigidTransform rot =
      angle_deg == 0.0 ? RigidTransform{}
                       : RigidTransform::rotation_about(Quaternion::from_axis_angle(axis, angle_deg * s * kDeg), center);
  return compose(RigidTransform::from_translation(translation * s), rot);
}

void RecordingSpec::validate() const {
  if (frame_count < 1) throw Error(Errc::invalid_argument, "frame count must be at least 1");
  if (!(fps > 0.0)) throw Error(Errc::invalid_argument, "fps must be positive");
  if (!(depth_noise_mm >= 0.0)) throw Error(Errc::invalid_argument, "depth noise must be non-negative");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw Error(Errc::invalid_argument, "dropout must lie in [0, 1)");
  if (!(marker_noise_px >= 0.0)) throw Error(Errc::invalid_argument, "marker noise must be non-negative");
  if (target_vertebra < 1 || target_vertebra > kVertebraCount) {
    throw Error(Errc::invalid_argument, "target vertebra must be 1..5");
  }
  for (const Occluder& o : occluders) {
    if (!(o.min.array() <= o.max.array()).all()) throw Error(Errc::invalid_argument, "occluder box is inverted");
  }
  for (const Motion& m : motions) {
    if (m.vertebra < 0 || m.vertebra > kVertebraCount) throw Error(Errc::invalid_argument, "motion vertebra must be 0..5");
    if (m.angle_deg != 0.0 && !(m.axis.norm() > 0.0)) throw Error(Errc::invalid_argument, "motion axis is zero");
  }
}

SimulatedRecording::SimulatedRecording(Scene scene, RecordingSpec spec, std::uint64_t seed)
    : scene_(std::move(scene)), spec_(std::move(spec)), seed_(seed) {
  spec_.validate();
  if (scene_.vertebrae.size() != kVertebraCount) throw Error(Errc::invalid_argument, "scene needs five vertebrae");

  const CameraIntrinsics& k = scene_.intrinsics;
  bool covered = true;
  for (int v = 0; v < k.height && covered; ++v) {
    for (int u = 0; u < k.width && covered; ++u) {
      bool hit = false;
      for (const Occluder& o : spec_.occluders) hit = hit || (o.active(1) && o.ray_depth(k, u, v).has_value());
      covered = hit;
    }
  }
  if (covered) throw Error(Errc::rejected_spec, "an occluder hides the whole initial frame");

  for (const VertebraModel& m : scene_.vertebrae) centers_.push_back(centroid(m.reg_points));

  auto rng = make_rng(seed_, 0, recording_setup);
  const Vec3 spine_center = scene_.spine_pose.translation;
  RigidTransform jitter;
  {
    const Vec3 axis = random_unit(rng);
    const Vec3 dir = random_unit(rng);
    jitter = compose(RigidTransform::from_translation(dir * spec_.placement_jitter_mm),
                     RigidTransform::rotation_about(
                         Quaternion::from_axis_angle(axis, spec_.placement_jitter_deg * kDeg), spine_center));
  }
  const RigidTransform tilt =
      RigidTransform::rotation_about(Quaternion::from_axis_angle(Vec3::UnitX(), spec_.tilt_deg * kDeg), spine_center);
  placement_ = compose(tilt, compose(jitter, scene_.spine_pose));

  for (int i = 0; i < kVertebraCount; ++i) {
    const Vec3 axis = random_unit(rng);
    const Vec3 dir = random_unit(rng);
    deformations_.push_back(compose(
        RigidTransform::from_translation(dir * spec_.deformation_mm),
        RigidTransform::rotation_about(Quaternion::from_axis_angle(axis, spec_.deformation_deg * kDeg), centers_[i])));
  }
}

void SimulatedRecording::check_index(int index) const {
  if (index < 1 || index > spec_.frame_count) {
    throw Error(Errc::invalid_argument, "frame " + std::to_string(index) + " is outside the recording");
  }
}

std::vector<RigidTransform> SimulatedRecording::gt_poses(int index) const {
  check_index(index);
  std::vector<RigidTransform> out;
  for (int i = 0; i < kVertebraCount; ++i) {
    RigidTransform pose = compose(placement_, deformations_[i]);
    for (const Motion& m : spec_.motions) {
      if (m.vertebra == 0 || m.vertebra == i + 1) pose = compose(pose, m.at(index, spec_.fps, centers_[i]));
    }
    out.push_back(pose);
  }
  return out;
}

RigidTransform SimulatedRecording::drill_pose(int index) const {
  check_index(index);
  const double t = (index - 1) / spec_.fps;
  const double a = spec_.drill_motion_mm;
  const Vec3 offset(a * std::sin(2.0 * std::numbers::pi * 0.25 * t), 0.5 * a * std::sin(2.0 * std::numbers::pi * 0.15 * t),
                    0.0);
  const Quaternion wobble = Quaternion::from_axis_angle(Vec3::UnitY(), a * kDeg * std::sin(2.0 * std::numbers::pi * 0.2 * t));
  return compose(RigidTransform::from_translation(offset), compose(scene_.sleeve_pose, RigidTransform::from_rotation(wobble)));
}

DepthMap SimulatedRecording::render(int index) const {
  const std::vector<RigidTransform> poses = gt_poses(index);
  std::vector<PointList> posed;
  for (int i = 0; i < kVertebraCount; ++i) posed.push_back(transform_points(poses[i], scene_.vertebrae[i].surface_points));
  return render_depth(posed, scene_.intrinsics);
}

DepthMap SimulatedRecording::clean_depth(int index, const DepthMap& render) const {
  const CameraIntrinsics& k = scene_.intrinsics;
  const auto table = static_cast<float>(placement_.translation.z() + scene_.background_offset_mm);
  DepthMap out(k.width, k.height);
  std::vector<const Occluder*> active;
  for (const Occluder& o : spec_.occluders) {
    if (o.active(index)) active.push_back(&o);
  }
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      float d = render.valid(u, v) ? std::min(render.at(u, v), table) : table;
      for (const Occluder* o : active) {
        if (const auto z = o->ray_depth(k, u, v)) d = std::min(d, static_cast<float>(*z));
      }
      out.at(u, v) = d;
    }
  }
  return out;
}

Frame SimulatedRecording::frame(int index) const {
  check_index(index);
  Frame f;
  f.index = index;
  f.timestamp = (index - 1) / spec_.fps;

  const DepthMap rendered = render(index);
  DepthMap sensor = clean_depth(index, rendered);
  FrameOracle oracle;
  oracle.mask = smooth_mask(synth_mask(rendered, sensor));
  oracle.gt_poses = gt_poses(index);

  auto noise_rng = make_rng(seed_, static_cast<std::uint64_t>(index), depth_noise);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (float& d : sensor.data) {
    if (!(d > 0.0f)) continue;
    const double noisy = d + spec_.depth_noise_mm * gauss(noise_rng);
    const bool drop = unit(noise_rng) < spec_.dropout;
    const double units = drop ? 0.0 : std::clamp(std::round(noisy / kDepthUnitMm), 0.0, 65535.0);
    d = static_cast<float>(units) * kDepthUnitMm;
  }
  f.depth = std::move(sensor);

  const Quaternion truth = oracle.gt_poses[kVertebraCount / 2].rotation;
  const std::uint64_t prior_seed = make_rng(seed_, static_cast<std::uint64_t>(index), prior_noise)();
  oracle.prior = corrupt_rotation(truth, spec_.prior_error_deg * kDeg, prior_seed);

  if (spec_.markers) {
    const RigidTransform sleeve = drill_pose(index);
    oracle.drill_pose = sleeve;
    auto rng = make_rng(seed_, static_cast<std::uint64_t>(index), marker_noise);
    std::normal_distribution<double> px(0.0, 1.0);
    for (const auto& [id, corners] : scene_.sleeve.corners) {
      MarkerObservation obs;
      obs.id = id;
      bool inside = true;
      for (int c = 0; c < 4; ++c) {
        const Vec3 p = apply(sleeve, corners[c]);
        obs.left[c] = scene_.rig.project_left(p);
        obs.right[c] = scene_.rig.project_right(p);
        for (Pixel* q : {&obs.left[c], &obs.right[c]}) {
          q->x() += spec_.marker_noise_px * px(rng);
          q->y() += spec_.marker_noise_px * px(rng);
          inside = inside && q->x() >= 0.0 && q->y() >= 0.0 && q->x() <= scene_.rig.left.width - 1 &&
                   q->y() <= scene_.rig.left.height - 1;
        }
      }
      if (inside) f.markers.push_back(obs);
    }
  }
  f.oracle = std::move(oracle);
  return f;
}

Occluder occluder_over_vertebra(const Scene& scene, const RigidTransform& pose, int id, double fraction,
                                int first_frame, int last_frame) {
  if (id < 1 || id > static_cast<int>(scene.vertebrae.size())) throw Error(Errc::invalid_argument, "bad vertebra id");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw Error(Errc::invalid_argument, "fraction must lie in (0, 1]");
  const PointList posed = transform_points(pose, scene.vertebrae[id - 1].reg_points);
  std::vector<double> rx, ry;
  double zmin = std::numeric_limits<double>::infinity();
  for (const Vec3& p : posed) {
    rx.push_back(p.x() / p.z());
    ry.push_back(p.y() / p.z());
    zmin = std::min(zmin, p.z());
  }
  std::sort(rx.begin(), rx.end());
  const auto cut = static_cast<std::size_t>(std::min<double>(rx.size() - 1, fraction * rx.size()));
  const double zb = zmin - 25.0;
  const double margin = 2.0;
  Occluder o;
  o.min = Vec3(rx.front() * zb - margin, *std::min_element(ry.begin(), ry.end()) * zb - margin, zb);
  o.max = Vec3(fraction >= 1.0 ? rx.back() * zb + margin : rx[cut] * zb,
               *std::max_element(ry.begin(), ry.end()) * zb + margin, zb + 1.0);
  o.first_frame = first_frame;
  o.last_frame = last_frame;
  return o;
}

Quaternion corrupt_rotation(const Quaternion& q, double angle_rad, std::uint64_t rng_seed) {
  if (angle_rad == 0.0) return q;
  std::mt19937_64 rng(rng_seed);
  const Vec3 axis = random_unit(rng);
  return (Quaternion::from_axis_angle(axis, angle_rad) * q).normalized();
}

}  // namespace vertereg
