#include "streamseg/evalkit.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>

namespace streamseg::evalkit {

ConfusionMatrix::ConfusionMatrix(int class_count) {
  if (class_count < 1) throw InvalidConfigError("confusion matrix needs >= 1 class");
  counts_ = Eigen::MatrixXd::Zero(class_count, class_count);
}

void ConfusionMatrix::add_single(int ground_truth, int predicted) {
  const int c = class_count();
  if (ground_truth < 0 || ground_truth > c || predicted < 1 || predicted > c)
    throw InvalidConfigError("label id outside 0.." + std::to_string(c));
  if (ground_truth == geom::kUnlabelled) return;
  counts_(ground_truth - 1, predicted - 1) += 1.0;
}

void ConfusionMatrix::add(const std::vector<int>& ground_truth,
                          const std::vector<int>& predicted) {
  if (ground_truth.size() != predicted.size())
    throw ShapeMismatchError("confusion add: " + std::to_string(ground_truth.size()) +
                             " labels vs " + std::to_string(predicted.size()) +
                             " predictions");
  for (std::size_t i = 0; i < ground_truth.size(); ++i)
    add_single(ground_truth[i], predicted[i]);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.class_count() != class_count())
    throw ShapeMismatchError("confusion merge: class counts differ");
  counts_ += other.counts_;
  return *this;
}

IouReport iou(const ConfusionMatrix& cm) {
  const int c = cm.class_count();
  const Eigen::MatrixXd& m = cm.counts();
  IouReport rep;
  rep.per_class = Eigen::VectorXd::Constant(c, std::numeric_limits<double>::quiet_NaN());
  double sum = 0.0;
  for (int i = 0; i < c; ++i) {
    const double tp = m(i, i);
    const double fp = m.col(i).sum() - tp;
    const double fn = m.row(i).sum() - tp;
    const double denom = tp + fp + fn;
    if (denom <= 0.0) continue;
    rep.per_class(i) = 100.0 * tp / denom;
    sum += rep.per_class(i);
    ++rep.defined_classes;
  }
  if (rep.defined_classes == 0)
    throw AllEmptyError("iou: every class has empty support");
  rep.miou = sum / rep.defined_classes;
  return rep;
}

double db_index(const Eigen::MatrixXd& features, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw ShapeMismatchError("db_index: feature rows vs label count");
  std::map<int, std::vector<Eigen::Index>> members;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != geom::kUnlabelled) members[labels[i]].push_back(static_cast<Eigen::Index>(i));
  if (members.size() < 2)
    throw SingleClassError("db_index: need at least two populated classes");

  std::vector<Eigen::RowVectorXd> centroids;
  std::vector<double> scatter;
  for (const auto& [label, idx] : members) {
    Eigen::RowVectorXd mu = Eigen::RowVectorXd::Zero(features.cols());
    for (Eigen::Index i : idx) mu += features.row(i);
    mu /= static_cast<double>(idx.size());
    double s = 0.0;
    for (Eigen::Index i : idx) s += (features.row(i) - mu).norm();
    centroids.push_back(mu);
    scatter.push_back(s / static_cast<double>(idx.size()));
  }

  const std::size_t k = centroids.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    double worst = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      if (j == i) continue;
      const double sep = (centroids[i] - centroids[j]).norm();
      if (sep <= 0.0) {
        warn("db_index: coincident class centroids");
        return std::numeric_limits<double>::infinity();
      }
      worst = std::max(worst, (scatter[i] + scatter[j]) / sep);
    }
    acc += worst;
  }
  return acc / static_cast<double>(k);
}

LabelTally pseudo_label_tally(const selection::PseudoLabelSet& set,
                              const std::vector<int>& ground_truth, int max_rank) {
  if (set.entries.empty())
    throw EmptyPseudoLabelsError("pseudo_label_tally: empty pseudo-label set");
  if (max_rank < 1) throw InvalidConfigError("pseudo_label_tally: max_rank >= 1");
  LabelTally tally;
  for (const auto& e : set.entries) {
    if (e.rank > max_rank) continue;
    if (e.point < 0 || static_cast<std::size_t>(e.point) >= ground_truth.size())
      throw ShapeMismatchError("pseudo_label_tally: point index outside frame");
    const int gt = ground_truth[static_cast<std::size_t>(e.point)];
    if (gt == geom::kUnlabelled) continue;
    ++tally.total;
    if (gt == e.label) ++tally.correct;
  }
  return tally;
}

namespace {

void put(std::string& out, double v) {
  char buf[40];
  if (std::isnan(v)) {
    out += "nan";
  } else {
    std::snprintf(buf, sizeof(buf), "%.9f", v);
    out += buf;
  }
}

double mean_defined(const std::vector<double>& xs) {
  double s = 0.0;
  long n = 0;
  for (double x : xs)
    if (!std::isnan(x)) {
      s += x;
      ++n;
    }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : s / n;
}

}  // namespace

void write_metrics_csv(const std::string& path,
                       const std::vector<MetricRecord>& records) {
  std::string out =
      "frame_id,miou,frozen_miou,improvement,seed_count,propagated_count,"
      "correspondence_count,dice_loss,reg_loss";
  for (int c = 1; c <= geom::kClassCount; ++c) out += ",iou_" + std::to_string(c);
  for (int c = 1; c <= geom::kClassCount; ++c) out += ",lambda_" + std::to_string(c);
  out += '\n';
  for (const auto& r : records) {
    out += std::to_string(r.frame_id);
    out += ',';
    put(out, r.miou);
    out += ',';
    put(out, r.frozen_miou);
    out += ',';
    put(out, r.improvement);
    out += ',' + std::to_string(r.seed_count);
    out += ',' + std::to_string(r.propagated_count);
    out += ',' + std::to_string(r.correspondence_count);
    out += ',';
    put(out, r.dice_loss);
    out += ',';
    put(out, r.reg_loss);
    for (int c = 0; c < geom::kClassCount; ++c) {
      out += ',';
      put(out, r.per_class_iou.size() == geom::kClassCount
                   ? r.per_class_iou(c)
                   : std::numeric_limits<double>::quiet_NaN());
    }
    for (int c = 0; c < geom::kClassCount; ++c) {
      out += ',';
      put(out, r.thresholds.size() == geom::kClassCount
                   ? r.thresholds(c)
                   : std::numeric_limits<double>::quiet_NaN());
    }
    out += '\n';
  }
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw MalformedFileError("metrics csv: cannot open " + path);
  os << out;
  if (!os) throw MalformedFileError("metrics csv: write failed for " + path);
}

nlohmann::json summarize_records(const std::vector<MetricRecord>& records) {
  nlohmann::json j;
  j["frames"] = records.size();
  std::vector<double> miou, frozen, improv, dice, reg, wall;
  std::vector<double> seeds, propagated, corr;
  std::vector<std::vector<double>> per_class(geom::kClassCount);
  for (const auto& r : records) {
    miou.push_back(r.miou);
    frozen.push_back(r.frozen_miou);
    improv.push_back(r.improvement);
    dice.push_back(r.dice_loss);
    reg.push_back(r.reg_loss);
    wall.push_back(r.wall_clock_ms);
    seeds.push_back(static_cast<double>(r.seed_count));
    propagated.push_back(static_cast<double>(r.propagated_count));
    corr.push_back(static_cast<double>(r.correspondence_count));
    for (int c = 0; c < geom::kClassCount; ++c)
      per_class[static_cast<std::size_t>(c)].push_back(
          r.per_class_iou.size() == geom::kClassCount
              ? r.per_class_iou(c)
              : std::numeric_limits<double>::quiet_NaN());
  }
  auto put_mean = [&](const char* key, const std::vector<double>& xs) {
    const double m = mean_defined(xs);
    if (std::isnan(m))
      j[key] = nullptr;
    else
      j[key] = m;
  };
  put_mean("mean_miou", miou);
  put_mean("mean_frozen_miou", frozen);
  put_mean("mean_improvement", improv);
  put_mean("mean_dice_loss", dice);
  put_mean("mean_reg_loss", reg);
  put_mean("mean_wall_clock_ms", wall);
  put_mean("mean_seed_count", seeds);
  put_mean("mean_propagated_count", propagated);
  put_mean("mean_correspondence_count", corr);
  nlohmann::json per;
  for (int c = 0; c < geom::kClassCount; ++c) {
    const double m = mean_defined(per_class[static_cast<std::size_t>(c)]);
    per["class_" + std::to_string(c + 1)] = std::isnan(m) ? nlohmann::json() : nlohmann::json(m);
  }
  j["mean_per_class_iou"] = per;
  return j;
}

void write_summary_json(const std::string& path, const nlohmann::json& summary) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw MalformedFileError("summary json: cannot open " + path);
  os << summary.dump(2) << '\n';
  if (!os) throw MalformedFileError("summary json: write failed for " + path);
}

}  // namespace streamseg::evalkit
