#pragma once

#include <Eigen/Dense>
#include <memory>
#include <utility>
#include <vector>

#include "streamseg/common.hpp"

namespace streamseg::geom {

using Point3 = Eigen::Vector3d;
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

inline bool is_finite_point(const Point3& p) { return p.allFinite(); }

// Class id 0 is the UNLABELLED sentinel; semantic classes are 1..kClassCount.
inline constexpr int kUnlabelled = 0;
inline constexpr int kClassCount = 7;

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static RigidTransform identity() { return {}; }
  // Validates orthonormality and det(+1) to 1e-9.
  static RigidTransform from_parts(const Eigen::Matrix3d& r, const Eigen::Vector3d& t);
  static RigidTransform rotation_about_z(double angle_rad);

  bool is_valid(double tol = 1e-9) const;

  Point3 apply(const Point3& p) const { return rotation * p + translation; }
  RigidTransform compose(const RigidTransform& other) const;
  RigidTransform inverse() const;
};

inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return a.compose(b);
}

struct Frame {
  PointMatrix points;       // N x 3, sensor-frame coordinates
  std::vector<int> labels;  // empty when absent; ids in [0, kClassCount]
  long frame_id = 0;
  RigidTransform pose;      // sensor-to-world

  Eigen::Index size() const { return points.rows(); }
  bool has_labels() const { return !labels.empty(); }
};

// Maps every point p to R*p + t. Labels and frame_id are preserved; the pose
// is right-composed with T^-1 so sensor-to-world semantics stay consistent.
Frame apply_transform(const RigidTransform& t, const Frame& f);

// Exact k-nearest-neighbour index over a fixed set of d-dimensional vectors.
// Queries return min(k, N) results sorted by non-decreasing distance, ties
// broken by lower point index; results always match a brute-force scan.
// Immutable after construction, safe for concurrent queries.
class KnnIndex {
 public:
  explicit KnnIndex(const Eigen::MatrixXd& vectors);

  Eigen::Index size() const { return points_.rows(); }
  Eigen::Index dim() const { return points_.cols(); }

  // (point index, euclidean distance) pairs.
  std::vector<std::pair<int, double>> query(const Eigen::VectorXd& q, int k) const;
  // All points with distance < radius, same ordering contract.
  std::vector<std::pair<int, double>> radius_query(const Eigen::VectorXd& q,
                                                   double radius) const;

 private:
  struct Node {
    int axis = -1;          // -1 marks a leaf
    double split = 0.0;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into order_
  };

  int build(int begin, int end);
  template <typename Visitor>
  void search(int node, const Eigen::VectorXd& q, double& bound, Visitor&& visit) const;

  Eigen::MatrixXd points_;  // row-major copy of the input set
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

inline KnnIndex build_knn_index(const Eigen::MatrixXd& vectors) {
  return KnnIndex(vectors);
}

inline std::vector<std::pair<int, double>> knn_query(const KnnIndex& index,
                                                     const Eigen::VectorXd& q, int k) {
  return index.query(q, k);
}

}  // namespace streamseg::geom
