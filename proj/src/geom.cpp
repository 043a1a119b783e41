#include "streamseg/geom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

namespace streamseg::geom {

RigidTransform RigidTransform::from_parts(const Eigen::Matrix3d& r,
                                          const Eigen::Vector3d& t) {
  RigidTransform out{r, t};
  if (!out.is_valid())
    throw InvalidConfigError("rotation is not orthonormal with det +1");
  return out;
}

RigidTransform RigidTransform::rotation_about_z(double angle_rad) {
  RigidTransform out;
  out.rotation = Eigen::AngleAxisd(angle_rad, Eigen::Vector3d::UnitZ()).toRotationMatrix();
  return out;
}

bool RigidTransform::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  const double ortho = (rotation.transpose() * rotation - Eigen::Matrix3d::Identity())
                           .cwiseAbs()
                           .maxCoeff();
  return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

RigidTransform RigidTransform::inverse() const {
  Eigen::Matrix3d rt = rotation.transpose();
  return {rt, -(rt * translation)};
}

Frame apply_transform(const RigidTransform& t, const Frame& f) {
  Frame out = f;
  out.points = (f.points * t.rotation.transpose()).rowwise() + t.translation.transpose();
  out.pose = f.pose.compose(t.inverse());
  return out;
}

KnnIndex::KnnIndex(const Eigen::MatrixXd& vectors) {
  if (vectors.rows() == 0) throw EmptySetError("cannot index an empty point set");
  if (!vectors.allFinite())
    throw DimensionMismatchError("indexed vectors must be finite");
  points_ = vectors;
  order_.resize(static_cast<std::size_t>(vectors.rows()));
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.reserve(order_.size() / 8 + 4);
  root_ = build(0, static_cast<int>(order_.size()));
}

int KnnIndex::build(int begin, int end) {
  constexpr int kLeafSize = 16;
  Node node;
  if (end - begin <= kLeafSize) {
    node.begin = begin;
    node.end = end;
    // Sorted leaves keep tie-breaking by index deterministic.
    std::sort(order_.begin() + begin, order_.begin() + end);
    nodes_.push_back(node);
    return static_cast<int>(nodes_.size()) - 1;
  }
  // Split along the axis of maximum spread.
  int axis = 0;
  double best_spread = -1.0;
  for (int d = 0; d < points_.cols(); ++d) {
    double lo = points_(order_[begin], d), hi = lo;
    for (int i = begin; i < end; ++i) {
      const double v = points_(order_[i], d);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo > best_spread) {
      best_spread = hi - lo;
      axis = d;
    }
  }
  const int mid = (begin + end) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int a, int b) {
                     const double va = points_(a, axis), vb = points_(b, axis);
                     return va < vb || (va == vb && a < b);
                   });
  node.axis = axis;
  node.split = points_(order_[mid], axis);
  const int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  const int left = build(begin, mid);
  const int right = build(mid, end);
  nodes_[self].left = left;
  nodes_[self].right = right;
  return self;
}

namespace {

struct Candidate {
  double d2;
  int index;
  // "Better" = closer, then lower index.
  bool operator<(const Candidate& o) const {
    return d2 < o.d2 || (d2 == o.d2 && index < o.index);
  }
};

}  // namespace

template <typename Visitor>
void KnnIndex::search(int node_id, const Eigen::VectorXd& q, double& bound,
                      Visitor&& visit) const {
  const Node& node = nodes_[static_cast<std::size_t>(node_id)];
  if (node.axis < 0) {
    for (int i = node.begin; i < node.end; ++i) {
      const int idx = order_[static_cast<std::size_t>(i)];
      const double d2 = (points_.row(idx).transpose() - q).squaredNorm();
      visit(Candidate{d2, idx}, bound);
    }
    return;
  }
  const double delta = q[node.axis] - node.split;
  const int near = delta < 0.0 ? node.left : node.right;
  const int far = delta < 0.0 ? node.right : node.left;
  search(near, q, bound, visit);
  // Equality must still descend: a tied point with a lower index may win.
  if (delta * delta <= bound) search(far, q, bound, visit);
}

std::vector<std::pair<int, double>> KnnIndex::query(const Eigen::VectorXd& q,
                                                    int k) const {
  if (q.size() != points_.cols())
    throw DimensionMismatchError("query dimension does not match index");
  if (k <= 0) throw InvalidConfigError("k must be positive");
  const int want = std::min<int>(k, static_cast<int>(points_.rows()));

  // Heap of the current best `want` candidates; operator< orders by quality,
  // so the default max-heap keeps the worst retained candidate on top.
  std::vector<Candidate> heap;
  heap.reserve(static_cast<std::size_t>(want));
  double bound = std::numeric_limits<double>::infinity();
  auto visit = [&](const Candidate& c, double& bnd) {
    if (static_cast<int>(heap.size()) < want) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end());
    } else if (c < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end());
    }
    if (static_cast<int>(heap.size()) == want) bnd = heap.front().d2;
  };
  search(root_, q, bound, visit);

  std::sort(heap.begin(), heap.end());
  std::vector<std::pair<int, double>> out;
  out.reserve(heap.size());
  for (const Candidate& c : heap) out.emplace_back(c.index, std::sqrt(c.d2));
  return out;
}

std::vector<std::pair<int, double>> KnnIndex::radius_query(const Eigen::VectorXd& q,
                                                           double radius) const {
  if (q.size() != points_.cols())
    throw DimensionMismatchError("query dimension does not match index");
  std::vector<Candidate> hits;
  double bound = radius * radius;
  auto visit = [&](const Candidate& c, double& bnd) {
    if (c.d2 < bnd) hits.push_back(c);
  };
  // The radius bound never shrinks, so the generic search visits every cell
  // whose slab distance is within it.
  search(root_, q, bound, visit);
  std::sort(hits.begin(), hits.end());
  std::vector<std::pair<int, double>> out;
  out.reserve(hits.size());
  for (const Candidate& c : hits) out.emplace_back(c.index, std::sqrt(c.d2));
  return out;
}

}  // namespace streamseg::geom
