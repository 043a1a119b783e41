#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "streamseg/geom.hpp"

namespace streamseg::descriptor {

// Per-point geometric descriptors. Rows align with the frame's points; points
// with no neighbour inside the support radius carry a zero row and a flag and
// are excluded from being propagation targets.
struct DescriptorField {
  Eigen::MatrixXd descriptors;       // N x dim
  std::vector<std::uint8_t> zero_flag;
  long source_frame_id = 0;

  Eigen::Index size() const { return descriptors.rows(); }
  Eigen::Index dim() const { return descriptors.cols(); }
};

struct DescriptorConfig {
  int normal_k = 15;
  double radius = 1.0;       // metres
  int bins_per_feature = 11; // 3 angular features -> 33 dims
  int max_neighbors = 60;    // nearest-first cap inside the radius
};

inline int descriptor_dim(const DescriptorConfig& cfg) { return 3 * cfg.bins_per_feature; }

// Unit normal per point from the best-fit plane of its k nearest neighbours
// (smallest eigenvector of the local covariance), sign flipped toward the
// viewpoint. Throws TooFewPoints when the frame has fewer than k points.
std::vector<Eigen::Vector3d> estimate_normals(
    const geom::Frame& f, int k,
    const Eigen::Vector3d& viewpoint = Eigen::Vector3d::Zero());

// FPFH-style histogram of the three Darboux angles between normal pairs in
// the support radius, 11 bins each, distance-weighted neighbour merge. The
// result depends only on local geometry relative to the normals, hence is
// approximately invariant to rigid motion.
DescriptorField compute_descriptors(const geom::Frame& f,
                                    const std::vector<Eigen::Vector3d>& normals,
                                    double radius,
                                    const DescriptorConfig& cfg = {});

// Pluggable descriptor interface so a learned encoder can replace the
// handcrafted one without touching propagation.
using DescriptorFn = std::function<DescriptorField(const geom::Frame&)>;

DescriptorFn make_default_descriptor(const DescriptorConfig& cfg = {});

}  // namespace streamseg::descriptor
