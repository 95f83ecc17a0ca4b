#include "vertereg/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "vertereg/error.hpp"

namespace vertereg {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error(Errc::invalid_argument, "focal lengths must be positive");
  if (width <= 0 || height <= 0) throw Error(Errc::invalid_argument, "image size must be positive");
  if (cx < 0.0 || cx >= width || cy < 0.0 || cy >= height) {
    throw Error(Errc::invalid_argument, "principal point outside the image");
  }
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](std::uint8_t b) { return b != 0; }));
}

PointCloud depth_to_cloud(const DepthMap& depth, const CameraIntrinsics& k, const BinaryMask* mask) {
  if (depth.width != k.width || depth.height != k.height) {
    throw Error(Errc::dimension_mismatch, "depth map does not match the camera intrinsics");
  }
  if (depth.data.size() != static_cast<std::size_t>(depth.width) * depth.height) {
    throw Error(Errc::dimension_mismatch, "depth map data length does not match its dimensions");
  }
  if (mask != nullptr && !mask->same_shape(depth)) {
    throw Error(Errc::dimension_mismatch, "mask does not match the depth map");
  }
  PointCloud cloud;
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const float d = depth.at(u, v);
      if (!(d > 0.0f)) continue;
      if (mask != nullptr && mask->at(u, v) == 0) continue;
      cloud.push_back(k.back_project(u, v, d));
    }
  }
  return cloud;
}

Vec3 centroid(std::span<const Vec3> points) {
  if (points.empty()) throw Error(Errc::empty_input, "centroid of an empty point set");
  Vec3 sum = Vec3::Zero();
  for (const Vec3& p : points) sum += p;
  return sum / static_cast<double>(points.size());
}

BinaryMask largest_component(const BinaryMask& mask) {
  const int w = mask.width;
  const int h = mask.height;
  std::vector<std::int32_t> label(mask.size(), -1);
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (mask.data[start] == 0 || label[start] >= 0) continue;
    const auto id = static_cast<std::int32_t>(sizes.size());
    std::size_t count = 0;
    label[start] = id;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t idx = stack.back();
      stack.pop_back();
      ++count;
      const int u = static_cast<int>(idx % w);
      const int v = static_cast<int>(idx / w);
      for (int dv = -1; dv <= 1; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          const int nu = u + du;
          const int nv = v + dv;
          if ((du == 0 && dv == 0) || nu < 0 || nv < 0 || nu >= w || nv >= h) continue;
          const std::size_t n = static_cast<std::size_t>(nv) * w + nu;
          if (mask.data[n] != 0 && label[n] < 0) {
            label[n] = id;
            stack.push_back(n);
          }
        }
      }
    }
    sizes.push_back(count);
  }

  BinaryMask out(w, h, 0);
  if (sizes.empty()) return out;
  // max_element returns the first maximum, i.e. the earliest-starting region.
  const auto best = static_cast<std::int32_t>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < label.size(); ++i) out.data[i] = label[i] == best ? 1 : 0;
  return out;
}

namespace {

struct CellKey {
  std::int64_t a;
  std::int64_t b;
  bool operator==(const CellKey&) const = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    return std::hash<std::int64_t>()(k.a * 73856093LL ^ k.b * 19349663LL);
  }
};

}  // namespace

std::vector<std::size_t> posterior_visible_indices(std::span<const Vec3> points, std::span<const Vec3> normals,
                                                   const Vec3& view_dir, double cell_mm, double tolerance_mm) {
  if (points.size() != normals.size()) {
    throw Error(Errc::dimension_mismatch, "points and normals differ in length");
  }
  if (!(cell_mm > 0.0)) throw Error(Errc::invalid_argument, "grid cell must be positive");
  const Vec3 dir = view_dir.normalized();
  // Any orthonormal basis of the image plane works; the grid origin is fixed
  // at zero so the result does not depend on point order.
  const Vec3 helper = std::abs(dir.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  const Vec3 e1 = dir.cross(helper).normalized();
  const Vec3 e2 = dir.cross(e1);

  std::vector<CellKey> keys(points.size());
  std::unordered_map<CellKey, double, CellKeyHash> nearest;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(normals[i].dot(dir) < 0.0)) continue;
    const CellKey key{static_cast<std::int64_t>(std::floor(points[i].dot(e1) / cell_mm)),
                      static_cast<std::int64_t>(std::floor(points[i].dot(e2) / cell_mm))};
    keys[i] = key;
    const double depth = points[i].dot(dir);
    auto [it, inserted] = nearest.try_emplace(key, depth);
    if (!inserted) it->second = std::min(it->second, depth);
  }

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(normals[i].dot(dir) < 0.0)) continue;
    if (points[i].dot(dir) <= nearest.at(keys[i]) + tolerance_mm) kept.push_back(i);
  }
  return kept;
}

PointList select_posterior_visible(std::span<const Vec3> points, std::span<const Vec3> normals,
                                   const Vec3& view_dir, double cell_mm, double tolerance_mm) {
  PointList out;
  for (std::size_t i : posterior_visible_indices(points, normals, view_dir, cell_mm, tolerance_mm)) {
    out.push_back(points[i]);
  }
  return out;
}

}  // namespace vertereg
