#include "vertereg/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vertereg/error.hpp"

namespace vertereg {

namespace {

constexpr std::uint32_t kLeafSize = 12;
constexpr std::int64_t kMaxCells = std::int64_t{1} << 25;

inline bool better(double d2, std::size_t idx, double best_d2, std::size_t best_idx) {
  return d2 < best_d2 || (d2 == best_d2 && idx < best_idx);
}

}  // namespace

KdTree::KdTree(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
  if (points_.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw Error(Errc::invalid_argument, "k-d tree: too many points");
  }
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / kLeafSize + 1);
    build(0, static_cast<std::uint32_t>(points_.size()));
  }
}

std::uint32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back({});
  if (end - begin <= kLeafSize) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }
  // Split on the axis of largest extent.
  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (std::uint32_t i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];
  const std::uint32_t left = build(begin, mid);
  const std::uint32_t right = build(mid, end);
  nodes_[id].axis = axis;
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

void KdTree::search(std::uint32_t node_id, const Vec3& q, double& best_d2, std::size_t& best_idx) const {
  const Node& node = nodes_[node_id];
  if (node.axis < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t idx = order_[i];
      const double d2 = (points_[idx] - q).squaredNorm();
      if (better(d2, idx, best_d2, best_idx)) {
        best_d2 = d2;
        best_idx = idx;
      }
    }
    return;
  }
  // Left subtree holds coordinates <= split, right holds >= split.
  const double diff = q[node.axis] - node.split;
  const std::uint32_t near = diff <= 0.0 ? node.left : node.right;
  const std::uint32_t far = diff <= 0.0 ? node.right : node.left;
  search(near, q, best_d2, best_idx);
  if (diff * diff <= best_d2) search(far, q, best_d2, best_idx);
}

std::optional<Neighbor> KdTree::nearest(const Vec3& query, double max_dist) const {
  if (points_.empty()) return std::nullopt;
  double best_d2 = std::isinf(max_dist) ? std::numeric_limits<double>::infinity() : max_dist * max_dist;
  std::size_t best_idx = std::numeric_limits<std::size_t>::max();
  search(0, query, best_d2, best_idx);
  if (best_idx == std::numeric_limits<std::size_t>::max()) return std::nullopt;
  return Neighbor{best_idx, std::sqrt(best_d2)};
}

VoxelGrid::VoxelGrid(std::span<const Vec3> points, double cell) : count_(points.size()) {
  if (!(cell > 0.0) || !std::isfinite(cell)) throw Error(Errc::invalid_argument, "voxel grid: cell must be positive");
  if (points.empty()) return;
  Vec3 lo = points[0];
  Vec3 hi = lo;
  for (const Vec3& p : points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  // Grow the cell until the dense grid fits the budget; larger cells stay exact.
  for (;;) {
    nx_ = static_cast<std::int64_t>(std::floor((hi.x() - lo.x()) / cell)) + 1;
    ny_ = static_cast<std::int64_t>(std::floor((hi.y() - lo.y()) / cell)) + 1;
    nz_ = static_cast<std::int64_t>(std::floor((hi.z() - lo.z()) / cell)) + 1;
    if (nx_ * ny_ * nz_ <= kMaxCells) break;
    cell *= 2.0;
  }
  cell_ = cell;
  origin_ = lo;

  const auto n_cells = static_cast<std::size_t>(nx_ * ny_ * nz_);
  std::vector<std::uint32_t> cell_of(points.size());
  cell_start_.assign(n_cells + 1, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 r = (points[i] - origin_) / cell_;
    const auto ix = std::min<std::int64_t>(static_cast<std::int64_t>(r.x()), nx_ - 1);
    const auto iy = std::min<std::int64_t>(static_cast<std::int64_t>(r.y()), ny_ - 1);
    const auto iz = std::min<std::int64_t>(static_cast<std::int64_t>(r.z()), nz_ - 1);
    cell_of[i] = static_cast<std::uint32_t>((iz * ny_ + iy) * nx_ + ix);
    ++cell_start_[cell_of[i] + 1];
  }
  std::partial_sum(cell_start_.begin(), cell_start_.end(), cell_start_.begin());
  std::vector<std::uint32_t> fill(cell_start_.begin(), cell_start_.end() - 1);
  sorted_points_.resize(points.size());
  sorted_index_.resize(points.size());
  // Counting sort is stable, so each cell lists its points by ascending index.
  for (std::size_t i = 0; i < points.size(); ++i) {
    const std::uint32_t slot = fill[cell_of[i]]++;
    sorted_points_[slot] = points[i];
    sorted_index_[slot] = static_cast<std::uint32_t>(i);
  }
}

std::optional<Neighbor> VoxelGrid::nearest(const Vec3& query, double max_dist) const {
  if (max_dist > cell_) throw Error(Errc::invalid_argument, "voxel grid: query radius exceeds cell size");
  if (count_ == 0 || !(max_dist >= 0.0)) return std::nullopt;
  const Vec3 r = (query - origin_) / cell_;
  const std::int64_t cx = static_cast<std::int64_t>(std::floor(r.x()));
  const std::int64_t cy = static_cast<std::int64_t>(std::floor(r.y()));
  const std::int64_t cz = static_cast<std::int64_t>(std::floor(r.z()));
  if (cx < -1 || cy < -1 || cz < -1 || cx > nx_ || cy > ny_ || cz > nz_) return std::nullopt;

  double best_d2 = max_dist * max_dist;
  std::size_t best_idx = std::numeric_limits<std::size_t>::max();

  auto axis_gap = [&](int a, std::int64_t c) {
    const double lo = origin_[a] + static_cast<double>(c) * cell_;
    const double hi = lo + cell_;
    const double d = query[a] < lo ? lo - query[a] : (query[a] > hi ? query[a] - hi : 0.0);
    return d * d;
  };
  // Cells of one x-row are contiguous, so the up to three cells around cx
  // are scanned as one range; rows are visited center first.
  const std::int64_t x_lo = std::max<std::int64_t>(cx - 1, 0);
  const std::int64_t x_hi = std::min<std::int64_t>(cx + 1, nx_ - 1);
  if (x_lo > x_hi) return std::nullopt;
  static constexpr std::int64_t kOrder[3] = {0, -1, 1};
  for (std::int64_t dz : kOrder) {
    const std::int64_t iz = cz + dz;
    if (iz < 0 || iz >= nz_) continue;
    const double gz = axis_gap(2, iz);
    if (gz > best_d2) continue;
    for (std::int64_t dy : kOrder) {
      const std::int64_t iy = cy + dy;
      if (iy < 0 || iy >= ny_) continue;
      const double gyz = gz + axis_gap(1, iy);
      if (gyz > best_d2) continue;
      const auto row = static_cast<std::size_t>((iz * ny_ + iy) * nx_);
      const std::uint32_t end = cell_start_[row + static_cast<std::size_t>(x_hi) + 1];
      for (std::uint32_t s = cell_start_[row + static_cast<std::size_t>(x_lo)]; s < end; ++s) {
        const double d2 = (sorted_points_[s] - query).squaredNorm();
        if (better(d2, sorted_index_[s], best_d2, best_idx)) {
          best_d2 = d2;
          best_idx = sorted_index_[s];
        }
      }
    }
  }
  if (best_idx == std::numeric_limits<std::size_t>::max()) return std::nullopt;
  return Neighbor{best_idx, std::sqrt(best_d2)};
}

std::vector<Correspondence> nearest_neighbors(std::span<const Vec3> reference, std::span<const Vec3> queries,
                                              double max_dist) {
  if (reference.empty()) throw Error(Errc::empty_input, "nearest_neighbors: empty reference cloud");
  if (max_dist < 0.0) throw Error(Errc::invalid_argument, "nearest_neighbors: negative max_dist");
  std::vector<Correspondence> out;
  out.reserve(queries.size());
  auto emit = [&](std::size_t q, const std::optional<Neighbor>& nb) {
    if (nb) out.push_back({q, nb->index, nb->distance});
  };
  if (std::isfinite(max_dist)) {
    const VoxelGrid grid(reference, std::max(max_dist, 1e-3));
    for (std::size_t q = 0; q < queries.size(); ++q) emit(q, grid.nearest(queries[q], max_dist));
  } else {
    const KdTree tree(reference);
    for (std::size_t q = 0; q < queries.size(); ++q) emit(q, tree.nearest(queries[q]));
  }
  return out;
}

}  // namespace vertereg
