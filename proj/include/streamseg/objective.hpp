#pragma once

#include <vector>

#include "streamseg/autodiff.hpp"
#include "streamseg/geom.hpp"
#include "streamseg/selection.hpp"

namespace streamseg::objective {

using autodiff::Tensor;

struct CorrespondenceSet {
  std::vector<int> curr;  // indices into frame t
  std::vector<int> prev;  // indices into frame t-w; each appears once
  std::vector<double> distance;
  double tau = 0.3;
  int frame_gap = 0;

  std::size_t size() const { return curr.size(); }
  bool empty() const { return curr.empty(); }
};

// For every point of `prev`, map by prev_to_curr and find the nearest
// neighbor among `curr`'s points; keep pairs closer than tau (strict, in the
// transformed space).
CorrespondenceSet find_correspondences(const geom::Frame& curr,
                                       const geom::Frame& prev,
                                       const geom::RigidTransform& prev_to_curr,
                                       double tau);

// Mean over rows of the negative cosine similarity between matching rows.
Tensor neg_cosine(const Tensor& q, const Tensor& z);

// Symmetric stop-gradient consistency: rows are gathered by the pair lists,
// the z side is detached. Empty pair set contributes 0 (logged).
Tensor temporal_loss(const Tensor& q_t, const Tensor& z_t, const Tensor& q_tw,
                     const Tensor& z_tw, const CorrespondenceSet& pairs);

// Soft Dice over the pseudo-labelled rows of the logits; smooth epsilon in
// numerator and denominator, class mean over classes present in the labels.
Tensor soft_dice_loss(const Tensor& logits,
                      const selection::PseudoLabelSet& pseudo,
                      double epsilon = 1.0);

// L_tot: plain unweighted sum.
Tensor total_loss(const Tensor& dice, const Tensor& reg);

}  // namespace streamseg::objective
