#pragma once

#include <Eigen/Dense>

#include "streamseg/descriptor.hpp"
#include "streamseg/selection.hpp"

namespace streamseg::propagation {

struct PropagationConfig {
  int k = 10;  // neighbors labelled per seed
  bool exclude_seeds_as_targets = true;
  bool normalize_descriptors = false;  // experimentation flag, off by default
};

// L2 distances from one seed's descriptor to every other point's descriptor,
// seed excluded (length N-1, original point order with the seed skipped).
Eigen::VectorXd geometric_similarities(int seed_index,
                                       const descriptor::DescriptorField& desc);

// Each seed labels its k nearest descriptor-space neighbors. A point claimed
// by several seeds keeps the closest claim (ties: lower seed point index);
// zero-descriptor points and (by default) other seeds are never targets.
// Output contains the seeds plus propagated entries, ascending point index.
selection::PseudoLabelSet propagate(const selection::PseudoLabelSet& seeds,
                                    const descriptor::DescriptorField& desc,
                                    const PropagationConfig& cfg);

}  // namespace streamseg::propagation
