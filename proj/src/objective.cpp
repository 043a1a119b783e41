#include "streamseg/objective.hpp"

#include <algorithm>
#include <cmath>

namespace streamseg::objective {

CorrespondenceSet find_correspondences(const geom::Frame& curr,
                                       const geom::Frame& prev,
                                       const geom::RigidTransform& prev_to_curr,
                                       double tau) {
  if (curr.size() == 0 || prev.size() == 0)
    throw EmptyFrameError("find_correspondences: empty frame");
  if (tau <= 0.0) throw InvalidConfigError("find_correspondences: tau must be > 0");
  geom::KnnIndex index(curr.points);
  CorrespondenceSet out;
  out.tau = tau;
  out.frame_gap = static_cast<int>(curr.frame_id - prev.frame_id);
  for (Eigen::Index i = 0; i < prev.size(); ++i) {
    geom::Point3 mapped = prev_to_curr.apply(prev.points.row(i).transpose());
    auto hit = index.query(mapped, 1);
    if (hit.front().second < tau) {
      out.prev.push_back(static_cast<int>(i));
      out.curr.push_back(hit.front().first);
      out.distance.push_back(hit.front().second);
    }
  }
  return out;
}

Tensor neg_cosine(const Tensor& q, const Tensor& z) {
  if (q.rows() != z.rows() || q.cols() != z.cols())
    throw ShapeMismatchError("neg_cosine: shapes differ");
  Tensor qn = autodiff::l2_normalize_rows(q);
  Tensor zn = autodiff::l2_normalize_rows(z);
  Tensor dots = autodiff::row_sum(autodiff::mul(qn, zn));
  return autodiff::mul_scalar(autodiff::mean(dots), -1.0);
}

Tensor temporal_loss(const Tensor& q_t, const Tensor& z_t, const Tensor& q_tw,
                     const Tensor& z_tw, const CorrespondenceSet& pairs) {
  if (pairs.empty()) {
    warn("temporal_loss: no correspondences, contributing 0");
    return q_t.tape()->constant(autodiff::Matrix::Zero(1, 1));
  }
  Tensor d1 = neg_cosine(autodiff::gather_rows(q_t, pairs.curr),
                         autodiff::stop_gradient(autodiff::gather_rows(z_tw, pairs.prev)));
  Tensor d2 = neg_cosine(autodiff::gather_rows(q_tw, pairs.prev),
                         autodiff::stop_gradient(autodiff::gather_rows(z_t, pairs.curr)));
  return autodiff::add(autodiff::mul_scalar(d1, 0.5), autodiff::mul_scalar(d2, 0.5));
}

Tensor soft_dice_loss(const Tensor& logits,
                      const selection::PseudoLabelSet& pseudo, double epsilon) {
  if (pseudo.empty()) throw EmptyPseudoLabelsError("soft_dice_loss: no pseudo-labels");
  const int class_count = static_cast<int>(logits.cols());
  std::vector<int> rows;
  rows.reserve(pseudo.size());
  autodiff::Matrix onehot =
      autodiff::Matrix::Zero(static_cast<Eigen::Index>(pseudo.size()), class_count);
  autodiff::Matrix present = autodiff::Matrix::Zero(1, class_count);
  for (std::size_t i = 0; i < pseudo.entries.size(); ++i) {
    const auto& e = pseudo.entries[i];
    if (e.label < 1 || e.label > class_count)
      throw InvalidConfigError("soft_dice_loss: label outside class range");
    rows.push_back(e.point);
    onehot(static_cast<Eigen::Index>(i), e.label - 1) = 1.0;
    present(0, e.label - 1) = 1.0;
  }
  const double n_present = present.sum();

  Tensor s = autodiff::softmax_rows(autodiff::gather_rows(logits, rows));
  Tensor y = logits.tape()->constant(onehot);
  Tensor inter = autodiff::col_sum(autodiff::mul(s, y));
  Tensor numer = autodiff::add_scalar(autodiff::mul_scalar(inter, 2.0), epsilon);
  Tensor denom = autodiff::add_scalar(
      autodiff::add(autodiff::col_sum(s), logits.tape()->constant(onehot.colwise().sum())),
      epsilon);
  Tensor dice = autodiff::div(numer, denom);
  Tensor mask = logits.tape()->constant(present);
  Tensor mean_present =
      autodiff::mul_scalar(autodiff::sum(autodiff::mul(dice, mask)), 1.0 / n_present);
  return autodiff::add_scalar(autodiff::mul_scalar(mean_present, -1.0), 1.0);
}

Tensor total_loss(const Tensor& dice, const Tensor& reg) {
  return autodiff::add(dice, reg);
}

}  // namespace streamseg::objective
