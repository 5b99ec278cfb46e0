#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "nucreg/core.hpp"

namespace nucreg {

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;
};

/// Exact 2D kd-tree (median split, alternating axes). Immutable after
/// construction; queries are const and thread-safe. Ties are broken by the
/// lower original index.
class KdTree2D {
 public:
  explicit KdTree2D(std::span<const Point2D> points);
  explicit KdTree2D(const PointSet2D& ps) : KdTree2D(ps.points()) {}

  [[nodiscard]] std::size_t size() const { return points_.size(); }
  [[nodiscard]] const Point2D& point(std::size_t i) const { return points_[i]; }

  [[nodiscard]] Neighbor nearest(Point2D q) const;
  /// Ascending distance; k larger than size() returns every point.
  [[nodiscard]] std::vector<Neighbor> k_nearest(Point2D q, std::size_t k) const;
  /// Every point with distance <= r, ascending distance.
  [[nodiscard]] std::vector<Neighbor> within_radius(Point2D q, double r) const;

 private:
  struct Node {
    std::uint32_t begin;  // range into order_
    std::uint32_t end;
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint8_t axis = 0;
    double split = 0.0;
  };

  static constexpr std::uint32_t kLeafSize = 8;

  std::int32_t build(std::uint32_t begin, std::uint32_t end, int depth);
  template <typename Visit>
  void search(std::int32_t node, Point2D q, double& bound2, Visit&& visit) const;

  std::vector<Point2D> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace nucreg
