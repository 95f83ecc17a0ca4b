#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "vertereg/geom.hpp"

namespace vertereg {

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
};

struct Correspondence {
  std::size_t query = 0;
  std::size_t reference = 0;
  double distance = 0.0;
};

// Both indices are exact: they return the same neighbor as an exhaustive
// scan, with equal distances resolved toward the lower reference index.

/// Static k-d tree for unbounded nearest-neighbor queries.
class KdTree {
 public:
  explicit KdTree(std::span<const Vec3> points);

  /// Nearest point with distance <= max_dist, if any.
  std::optional<Neighbor> nearest(const Vec3& query,
                                  double max_dist = std::numeric_limits<double>::infinity()) const;
  std::size_t size() const { return points_.size(); }

 private:
  struct Node {
    double split = 0.0;
    std::int32_t axis = -1;  // -1 marks a leaf
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::uint32_t node, const Vec3& q, double& best_d2, std::size_t& best_idx) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// Dense uniform grid for radius-bounded queries. Built once per frame in
/// the registration loop; queries touch at most the 27 cells around the
/// query and skip cells farther than the current best.
class VoxelGrid {
 public:
  /// `cell` must be at least the largest max_dist that will be queried.
  VoxelGrid(std::span<const Vec3> points, double cell);

  /// Throws Errc::invalid_argument if max_dist exceeds the cell size.
  std::optional<Neighbor> nearest(const Vec3& query, double max_dist) const;
  std::size_t size() const { return count_; }
  double cell() const { return cell_; }

 private:
  Vec3 origin_ = Vec3::Zero();
  double cell_ = 1.0;
  std::int64_t nx_ = 0, ny_ = 0, nz_ = 0;
  std::size_t count_ = 0;
  std::vector<std::uint32_t> cell_start_;
  std::vector<Vec3> sorted_points_;
  std::vector<std::uint32_t> sorted_index_;
};

/// A cloud bundled with the grid that searches it.
class IndexedCloud {
 public:
  IndexedCloud(PointList points, double radius) : points_(std::move(points)), grid_(points_, radius) {}

  std::optional<Neighbor> nearest(const Vec3& query, double max_dist) const { return grid_.nearest(query, max_dist); }
  const Vec3& operator[](std::size_t i) const { return points_[i]; }
  std::span<const Vec3> points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

 private:
  PointList points_;
  VoxelGrid grid_;
};

/// For each query, the nearest reference point within max_dist (inclusive).
/// Queries without a neighbor in range are omitted. Throws
/// Errc::empty_input for an empty reference.
std::vector<Correspondence> nearest_neighbors(std::span<const Vec3> reference, std::span<const Vec3> queries,
                                              double max_dist = std::numeric_limits<double>::infinity());

}  // namespace vertereg
