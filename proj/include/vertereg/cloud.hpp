#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vertereg/geom.hpp"

namespace vertereg {

/// Pinhole model in pixels. Pixel (u, v) has its center at integer
/// coordinates; u grows to the right, v grows downward, z is forward.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Throws Errc::invalid_argument unless fx, fy > 0 and the principal
  /// point lies inside the image.
  void validate() const;
  Eigen::Vector2d project(const Vec3& p) const { return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy}; }
  Vec3 back_project(double u, double v, double depth) const {
    return {depth * (u - cx) / fx, depth * (v - cy) / fy, depth};
  }

  bool operator==(const CameraIntrinsics&) const = default;
};

/// Row-major image storage shared by depth maps and masks.
template <typename T>
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<std::size_t>(w) * h, fill) {}

  std::size_t size() const { return data.size(); }
  T& at(int u, int v) { return data[static_cast<std::size_t>(v) * width + u]; }
  const T& at(int u, int v) const { return data[static_cast<std::size_t>(v) * width + u]; }
  bool contains(int u, int v) const { return u >= 0 && v >= 0 && u < width && v < height; }
  template <typename U>
  bool same_shape(const Raster<U>& other) const { return width == other.width && height == other.height; }

  bool operator==(const Raster&) const = default;
};

/// Depth in mm; 0 marks an invalid pixel.
struct DepthMap : Raster<float> {
  using Raster<float>::Raster;
  bool valid(int u, int v) const { return at(u, v) > 0.0f; }
};

struct BinaryMask : Raster<std::uint8_t> {
  using Raster<std::uint8_t>::Raster;
  std::size_t count() const;
};

/// Soft mask with values in [0, 1], e.g. a sigmoid network output.
struct RealMask : Raster<double> {
  using Raster<double>::Raster;
};

using PointCloud = std::vector<Vec3>;

/// Back-projects every valid pixel (and mask-true pixel when a mask is given).
/// Throws Errc::dimension_mismatch when the mask or intrinsics disagree with
/// the depth map.
PointCloud depth_to_cloud(const DepthMap& depth, const CameraIntrinsics& k, const BinaryMask* mask = nullptr);

/// Arithmetic mean. Throws Errc::empty_input on an empty cloud.
Vec3 centroid(std::span<const Vec3> points);

/// Keeps the largest 8-connected true region. Ties go to the region whose
/// first pixel comes first in row-major order.
BinaryMask largest_component(const BinaryMask& mask);

/// Orthographic visibility along `view_dir` (the direction the viewer looks
/// in). A point survives if it faces the viewer (n . view_dir < 0) and its
/// depth along view_dir is within the z-buffer tolerance of the nearest
/// depth in its 0.5 mm grid cell.
PointList select_posterior_visible(std::span<const Vec3> points, std::span<const Vec3> normals,
                                   const Vec3& view_dir, double cell_mm = 0.5, double tolerance_mm = 0.5);
/// Index form of select_posterior_visible().
std::vector<std::size_t> posterior_visible_indices(std::span<const Vec3> points, std::span<const Vec3> normals,
                                                   const Vec3& view_dir, double cell_mm = 0.5,
                                                   double tolerance_mm = 0.5);

}  // namespace vertereg
