#include "nucreg/kdtree.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>

namespace nucreg {

namespace {

struct Candidate {
  double d2;
  std::size_t index;
};

// Strict (distance, index) ordering gives deterministic ties.
bool closer(const Candidate& a, const Candidate& b) {
  return a.d2 < b.d2 || (a.d2 == b.d2 && a.index < b.index);
}

double coord(Point2D p, int axis) { return axis == 0 ? p.x : p.y; }

}  // namespace

KdTree2D::KdTree2D(std::span<const Point2D> points) : points_(points.begin(), points.end()) {
  if (points_.empty()) throw std::invalid_argument("cannot build a kd-tree over an empty point set");
  if (points_.size() > std::numeric_limits<std::uint32_t>::max() / 2) {
    throw std::invalid_argument("point set too large for kd-tree");
  }
  order_.resize(points_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * points_.size() / kLeafSize + 1);
  build(0, static_cast<std::uint32_t>(points_.size()), 0);
}

std::int32_t KdTree2D::build(std::uint32_t begin, std::uint32_t end, int depth) {
  const auto id = static_cast<std::int32_t>(nodes_.size());
  nodes_.push_back({begin, end});
  if (end - begin <= kLeafSize) return id;
  const int axis = depth % 2;
  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return coord(points_[a], axis) < coord(points_[b], axis);
                   });
  const double split = coord(points_[order_[mid]], axis);
  const std::int32_t left = build(begin, mid, depth + 1);
  const std::int32_t right = build(mid, end, depth + 1);
  nodes_[id].axis = static_cast<std::uint8_t>(axis);
  nodes_[id].split = split;
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

// Points left of a split are <= split, right ones >= split. A subtree is
// pruned only when it is strictly farther than the bound, so equal-distance
// candidates are always visited and the index tie-break stays exact.
template <typename Visit>
void KdTree2D::search(std::int32_t node_id, Point2D q, double& bound2, Visit&& visit) const {
  const Node& node = nodes_[node_id];
  if (node.left < 0) {
    for (std::uint32_t i = node.begin; i < node.end; ++i) {
      const std::uint32_t idx = order_[i];
      visit(Candidate{squared_distance(points_[idx], q), idx});
    }
    return;
  }
  const double diff = coord(q, node.axis) - node.split;
  const std::int32_t near = diff <= 0 ? node.left : node.right;
  const std::int32_t far = diff <= 0 ? node.right : node.left;
  search(near, q, bound2, visit);
  if (diff * diff <= bound2) search(far, q, bound2, visit);
}

Neighbor KdTree2D::nearest(Point2D q) const {
  Candidate best{std::numeric_limits<double>::infinity(), std::numeric_limits<std::size_t>::max()};
  double bound2 = best.d2;
  search(0, q, bound2, [&](const Candidate& c) {
    if (closer(c, best)) {
      best = c;
      bound2 = c.d2;
    }
  });
  return {best.index, std::sqrt(best.d2)};
}

std::vector<Neighbor> KdTree2D::k_nearest(Point2D q, std::size_t k) const {
  if (k == 0) throw std::invalid_argument("k_nearest requires k >= 1");
  k = std::min(k, points_.size());
  auto worse_on_top = [](const Candidate& a, const Candidate& b) { return closer(a, b); };
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(worse_on_top)> heap(worse_on_top);
  double bound2 = std::numeric_limits<double>::infinity();
  search(0, q, bound2, [&](const Candidate& c) {
    if (heap.size() < k) {
      heap.push(c);
    } else if (closer(c, heap.top())) {
      heap.pop();
      heap.push(c);
    }
    if (heap.size() == k) bound2 = heap.top().d2;
  });
  std::vector<Neighbor> out(heap.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = {heap.top().index, std::sqrt(heap.top().d2)};
    heap.pop();
  }
  return out;
}

std::vector<Neighbor> KdTree2D::within_radius(Point2D q, double r) const {
  if (!(r >= 0)) throw std::invalid_argument("within_radius requires r >= 0");
  const double r2 = r * r;
  double bound2 = r2;
  std::vector<Candidate> hits;
  search(0, q, bound2, [&](const Candidate& c) {
    if (c.d2 <= r2) hits.push_back(c);
  });
  std::sort(hits.begin(), hits.end(), closer);
  std::vector<Neighbor> out;
  out.reserve(hits.size());
  for (const auto& c : hits) out.push_back({c.index, std::sqrt(c.d2)});
  return out;
}

}  // namespace nucreg
