#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "streamseg/geom.hpp"
#include "streamseg/selection.hpp"

namespace streamseg::evalkit {

// Rows index ground truth, columns index predictions, both as class id - 1.
// Ground-truth id 0 never enters the matrix.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int class_count = geom::kClassCount);

  void add(const std::vector<int>& ground_truth, const std::vector<int>& predicted);
  void add_single(int ground_truth, int predicted);
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);

  const Eigen::MatrixXd& counts() const { return counts_; }
  int class_count() const { return static_cast<int>(counts_.rows()); }
  double total() const { return counts_.sum(); }

 private:
  Eigen::MatrixXd counts_;
};

struct IouReport {
  Eigen::VectorXd per_class;  // percent; NaN where TP+FP+FN == 0
  double miou = 0.0;          // percent, averaged over defined classes only
  int defined_classes = 0;
};

// Throws AllEmpty when no class has any support at all.
IouReport iou(const ConfusionMatrix& cm);

inline double improvement_over_source(double adapted_miou, double frozen_miou) {
  return adapted_miou - frozen_miou;
}

// Davies-Bouldin index over per-class feature clusters; scatter is the mean
// distance to the class centroid. Label 0 is ignored. Coincident centroids
// yield +inf with a warning; fewer than two populated classes throws.
double db_index(const Eigen::MatrixXd& features, const std::vector<int>& labels);

struct LabelTally {
  long correct = 0;
  long total = 0;
  double percent() const { return total == 0 ? 0.0 : 100.0 * correct / total; }
  LabelTally& operator+=(const LabelTally& o) {
    correct += o.correct;
    total += o.total;
    return *this;
  }
};

// Accuracy of pseudo-labels whose rank is <= max_rank (seeds are rank 1),
// against ground truth; unlabelled ground truth is skipped.
LabelTally pseudo_label_tally(const selection::PseudoLabelSet& set,
                              const std::vector<int>& ground_truth, int max_rank);

struct MetricRecord {
  int frame_id = 0;
  double miou = 0.0;         // adapted model on this frame, scored pre-update
  double frozen_miou = 0.0;  // frozen source model on the same frame
  double improvement = 0.0;
  long seed_count = 0;
  long propagated_count = 0;
  long correspondence_count = 0;
  double dice_loss = std::numeric_limits<double>::quiet_NaN();
  double reg_loss = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd per_class_iou;  // length C, NaN where undefined
  Eigen::VectorXd thresholds;     // per-class selection thresholds, NaN if unset
  double wall_clock_ms = 0.0;     // kept out of the CSV so reruns match bytewise
};

// Fixed column order:
//   frame_id, miou, frozen_miou, improvement, seed_count, propagated_count,
//   correspondence_count, dice_loss, reg_loss, iou_1..iou_7, lambda_1..lambda_7
void write_metrics_csv(const std::string& path,
                       const std::vector<MetricRecord>& records);

nlohmann::json summarize_records(const std::vector<MetricRecord>& records);
void write_summary_json(const std::string& path, const nlohmann::json& summary);

}  // namespace streamseg::evalkit
