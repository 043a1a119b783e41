#include "streamseg/descriptor.hpp"

#include <algorithm>
#include <cmath>

namespace streamseg::descriptor {

std::vector<Eigen::Vector3d> estimate_normals(const geom::Frame& f, int k,
                                              const Eigen::Vector3d& viewpoint) {
  const Eigen::Index n = f.size();
  if (n < k) throw TooFewPointsError("fewer points than normal_k");
  geom::KnnIndex index(f.points);
  std::vector<Eigen::Vector3d> normals(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto nn = index.query(f.points.row(i).transpose(), k);
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (const auto& [j, d] : nn) mean += f.points.row(j).transpose();
    mean /= static_cast<double>(nn.size());
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (const auto& [j, d] : nn) {
      const Eigen::Vector3d c = f.points.row(j).transpose() - mean;
      cov += c * c.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
    Eigen::Vector3d normal = solver.eigenvectors().col(0);  // smallest eigenvalue
    if (normal.dot(viewpoint - f.points.row(i).transpose()) < 0.0) normal = -normal;
    normals[static_cast<std::size_t>(i)] = normal.normalized();
  }
  return normals;
}

namespace {

// Darboux-frame angles between the source normal and a neighbour pair:
// alpha = v.n_q, phi = u.d_hat, theta = atan2(w.n_q, u.n_q).
struct PairAngles {
  double alpha, phi, theta;
};

bool pair_angles(const Eigen::Vector3d& p, const Eigen::Vector3d& np,
                 const Eigen::Vector3d& q, const Eigen::Vector3d& nq,
                 PairAngles& out) {
  Eigen::Vector3d d = q - p;
  const double dist = d.norm();
  if (dist < 1e-12) return false;
  d /= dist;
  Eigen::Vector3d v = np.cross(d);
  const double vn = v.norm();
  if (vn < 1e-12) return false;
  v /= vn;
  const Eigen::Vector3d w = np.cross(v);
  out.alpha = v.dot(nq);
  out.phi = np.dot(d);
  out.theta = std::atan2(w.dot(nq), np.dot(nq));
  return true;
}

int bin_of(double value, double lo, double hi, int bins) {
  int b = static_cast<int>((value - lo) / (hi - lo) * bins);
  return std::clamp(b, 0, bins - 1);
}

}  // namespace

DescriptorField compute_descriptors(const geom::Frame& f,
                                    const std::vector<Eigen::Vector3d>& normals,
                                    double radius, const DescriptorConfig& cfg) {
  const Eigen::Index n = f.size();
  if (static_cast<Eigen::Index>(normals.size()) != n)
    throw FrameDescriptorMismatchError("normals count does not match frame");
  if (radius <= 0.0) throw InvalidConfigError("descriptor radius must be positive");
  const int bins = cfg.bins_per_feature;
  const int dim = 3 * bins;
  constexpr double kPi = 3.14159265358979323846;

  geom::KnnIndex index(f.points);
  std::vector<std::vector<std::pair<int, double>>> neighborhoods(
      static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    auto hits = index.radius_query(f.points.row(i).transpose(), radius);
    std::erase_if(hits, [&](const auto& h) { return h.first == static_cast<int>(i); });
    if (static_cast<int>(hits.size()) > cfg.max_neighbors)
      hits.resize(static_cast<std::size_t>(cfg.max_neighbors));
    neighborhoods[static_cast<std::size_t>(i)] = std::move(hits);
  }

  // Pass 1: per-point simplified histogram over its own neighbourhood.
  Eigen::MatrixXd spfh = Eigen::MatrixXd::Zero(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& hood = neighborhoods[static_cast<std::size_t>(i)];
    if (hood.empty()) continue;
    const Eigen::Vector3d p = f.points.row(i).transpose();
    int counted = 0;
    for (const auto& [j, d] : hood) {
      PairAngles a{};
      if (!pair_angles(p, normals[static_cast<std::size_t>(i)],
                       f.points.row(j).transpose(), normals[static_cast<std::size_t>(j)],
                       a))
        continue;
      spfh(i, bin_of(a.alpha, -1.0, 1.0, bins)) += 1.0;
      spfh(i, bins + bin_of(a.phi, -1.0, 1.0, bins)) += 1.0;
      spfh(i, 2 * bins + bin_of(a.theta, -kPi, kPi, bins)) += 1.0;
      ++counted;
    }
    if (counted > 0) spfh.row(i) /= static_cast<double>(counted);
  }

  // Pass 2: distance-weighted merge of neighbour histograms.
  DescriptorField field;
  field.descriptors = Eigen::MatrixXd::Zero(n, dim);
  field.zero_flag.assign(static_cast<std::size_t>(n), 0);
  field.source_frame_id = f.frame_id;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& hood = neighborhoods[static_cast<std::size_t>(i)];
    if (hood.empty()) {
      field.zero_flag[static_cast<std::size_t>(i)] = 1;
      continue;
    }
    Eigen::RowVectorXd acc = spfh.row(i);
    double wsum = 0.0;
    Eigen::RowVectorXd merge = Eigen::RowVectorXd::Zero(dim);
    for (const auto& [j, d] : hood) {
      const double w = 1.0 / std::max(d, 1e-6);
      merge += w * spfh.row(j);
      wsum += w;
    }
    if (wsum > 0.0) acc += merge / wsum;
    const double total = acc.sum();
    if (total > 0.0) acc /= total;
    field.descriptors.row(i) = acc;
  }
  return field;
}

DescriptorFn make_default_descriptor(const DescriptorConfig& cfg) {
  return [cfg](const geom::Frame& f) {
    auto normals = estimate_normals(f, cfg.normal_k);
    return compute_descriptors(f, normals, cfg.radius, cfg);
  };
}

}  // namespace streamseg::descriptor
