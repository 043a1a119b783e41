#pragma once

#include <Eigen/Dense>
#include <vector>

#include "streamseg/autodiff.hpp"
#include "streamseg/geom.hpp"
#include "streamseg/segnet.hpp"

namespace streamseg::selection {

using autodiff::Matrix;

enum class UncertaintyMode {
  kDropoutVariance,  // mean over classes of the cross-pass variance (default)
  kClassVariance,    // variance across the C entries of the averaged row
};

enum class Provenance { kSeed, kPropagated };

struct PseudoLabelEntry {
  int point = -1;
  int label = geom::kUnlabelled;  // 1..C, never 0
  Provenance provenance = Provenance::kSeed;
  int seed_point = -1;  // originating seed's point index (itself for a seed)
  int rank = 1;         // 1 = the seed, r = (r-1)-th nearest neighbor of it
};

struct PseudoLabelSet {
  std::vector<PseudoLabelEntry> entries;  // unique points, ascending index

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::vector<int> points() const;
  std::vector<int> labels() const;
  long count(Provenance p) const;
};

struct McResult {
  Matrix mean;                 // N x C, row-stochastic average of the passes
  std::vector<Matrix> passes;  // J softmax outputs, kept for the variance
};

// J dropout-enabled forward passes, averaged. The model is not mutated.
McResult mc_mean_distribution(segnet::SegModel& model, const Matrix& input,
                              int passes, Rng& rng);

// Per-point uncertainty; dropout-variance on a single pass degenerates to an
// all-zero field with a warning.
Eigen::VectorXd uncertainty_index(const McResult& mc,
                                  UncertaintyMode mode = UncertaintyMode::kDropoutVariance);

// argmax class per row, ties to the lower column; returns ids 1..C.
std::vector<int> predicted_classes(const Matrix& mean);

// lambda[c-1] = nearest-rank a-th percentile of nu over class-c points, or
// -inf when the class has fewer than min_class_count members.
Eigen::VectorXd per_class_thresholds(const Eigen::VectorXd& nu,
                                     const std::vector<int>& predicted,
                                     double percentile, int class_count,
                                     int min_class_count = 5);

// Seeds: points with nu <= lambda_c, trimmed per class to the exact
// ceil(a/100 * n_c) budget by (nu, index).
PseudoLabelSet select_seeds(const Matrix& mean, const Eigen::VectorXd& nu,
                            const Eigen::VectorXd& lambda, double percentile);

// Baseline selectors for the selector study; both enforce the same per-class
// budget. Confidence ranks by max-softmax descending; centroid ranks by
// distance to the predicted class's mean backbone feature, ascending.
PseudoLabelSet confidence_select(const Matrix& mean, double percentile,
                                 int min_class_count = 5);
PseudoLabelSet centroid_select(const Matrix& backbone_feats, const Matrix& mean,
                               double percentile, int min_class_count = 5);

}  // namespace streamseg::selection
