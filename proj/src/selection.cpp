#include "streamseg/selection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace streamseg::selection {

std::vector<int> PseudoLabelSet::points() const {
  std::vector<int> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.point);
  return out;
}

std::vector<int> PseudoLabelSet::labels() const {
  std::vector<int> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.label);
  return out;
}

long PseudoLabelSet::count(Provenance p) const {
  long n = 0;
  for (const auto& e : entries)
    if (e.provenance == p) ++n;
  return n;
}

McResult mc_mean_distribution(segnet::SegModel& model, const Matrix& input,
                              int passes, Rng& rng) {
  if (passes < 1) throw InvalidConfigError("mc passes must be >= 1");
  if (input.rows() == 0) throw EmptySetError("mc scoring on an empty frame");
  McResult out;
  out.passes.reserve(static_cast<std::size_t>(passes));
  for (int j = 0; j < passes; ++j) {
    autodiff::Tape tape(/*recording=*/false);
    segnet::BoundModel bound(tape, model, /*training=*/false);
    auto fw = bound.forward(input, /*dropout_on=*/true, &rng);
    out.passes.push_back(fw.probs.value());
  }
  out.mean = Matrix::Zero(input.rows(), out.passes.front().cols());
  for (const Matrix& p : out.passes) out.mean += p;
  out.mean /= static_cast<double>(passes);
  return out;
}

Eigen::VectorXd uncertainty_index(const McResult& mc, UncertaintyMode mode) {
  const Eigen::Index n = mc.mean.rows();
  const Eigen::Index c = mc.mean.cols();
  Eigen::VectorXd nu = Eigen::VectorXd::Zero(n);
  if (mode == UncertaintyMode::kClassVariance) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double mu = mc.mean.row(i).mean();
      nu(i) = (mc.mean.row(i).array() - mu).square().mean();
    }
    return nu;
  }
  if (mc.passes.size() < 2) {
    warn("uncertainty_index: fewer than 2 passes, variance degenerates to 0");
    return nu;
  }
  // identical passes (dropout disabled) have exactly zero variance; skip the
  // accumulation so rounding in the mean cannot leak in
  bool all_same = true;
  for (std::size_t j = 1; j < mc.passes.size() && all_same; ++j)
    all_same = (mc.passes[j] == mc.passes.front());
  if (all_same) return nu;
  // population variance across passes, then mean over classes
  Matrix acc = Matrix::Zero(n, c);
  for (const Matrix& p : mc.passes) {
    Matrix d = p - mc.mean;
    acc += d.cwiseProduct(d);
  }
  acc /= static_cast<double>(mc.passes.size());
  for (Eigen::Index i = 0; i < n; ++i) nu(i) = acc.row(i).mean();
  return nu;
}

std::vector<int> predicted_classes(const Matrix& mean) {
  std::vector<int> out(static_cast<std::size_t>(mean.rows()));
  for (Eigen::Index i = 0; i < mean.rows(); ++i) {
    int best = 0;
    for (Eigen::Index j = 1; j < mean.cols(); ++j)
      if (mean(i, j) > mean(i, best)) best = static_cast<int>(j);
    out[static_cast<std::size_t>(i)] = best + 1;
  }
  return out;
}

namespace {

long budget_for(double percentile, long n) {
  return static_cast<long>(std::ceil(percentile / 100.0 * static_cast<double>(n)));
}

std::vector<std::vector<int>> members_by_class(const std::vector<int>& predicted,
                                               int class_count) {
  std::vector<std::vector<int>> members(static_cast<std::size_t>(class_count));
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const int c = predicted[i];
    if (c >= 1 && c <= class_count)
      members[static_cast<std::size_t>(c - 1)].push_back(static_cast<int>(i));
  }
  return members;
}

// Per class: order members by (key ascending, index), take the a% budget.
PseudoLabelSet budget_select(const std::vector<int>& predicted,
                             const Eigen::VectorXd& key, double percentile,
                             int class_count, int min_class_count) {
  auto members = members_by_class(predicted, class_count);
  PseudoLabelSet out;
  for (int c = 1; c <= class_count; ++c) {
    auto& m = members[static_cast<std::size_t>(c - 1)];
    if (static_cast<int>(m.size()) < min_class_count) continue;
    std::sort(m.begin(), m.end(), [&](int a, int b) {
      return key(a) < key(b) || (key(a) == key(b) && a < b);
    });
    const long budget = budget_for(percentile, static_cast<long>(m.size()));
    for (long i = 0; i < budget && i < static_cast<long>(m.size()); ++i) {
      PseudoLabelEntry e;
      e.point = m[static_cast<std::size_t>(i)];
      e.label = c;
      e.provenance = Provenance::kSeed;
      e.seed_point = e.point;
      e.rank = 1;
      out.entries.push_back(e);
    }
  }
  std::sort(out.entries.begin(), out.entries.end(),
            [](const PseudoLabelEntry& a, const PseudoLabelEntry& b) {
              return a.point < b.point;
            });
  return out;
}

}  // namespace

Eigen::VectorXd per_class_thresholds(const Eigen::VectorXd& nu,
                                     const std::vector<int>& predicted,
                                     double percentile, int class_count,
                                     int min_class_count) {
  if (percentile <= 0.0 || percentile >= 100.0)
    throw InvalidConfigError("percentile must lie in (0, 100)");
  if (static_cast<Eigen::Index>(predicted.size()) != nu.size())
    throw ShapeMismatchError("per_class_thresholds: length mismatch");
  auto members = members_by_class(predicted, class_count);
  Eigen::VectorXd lambda = Eigen::VectorXd::Constant(
      class_count, -std::numeric_limits<double>::infinity());
  for (int c = 1; c <= class_count; ++c) {
    auto& m = members[static_cast<std::size_t>(c - 1)];
    if (static_cast<int>(m.size()) < min_class_count) continue;
    const long rank = budget_for(percentile, static_cast<long>(m.size()));
    std::vector<double> vals;
    vals.reserve(m.size());
    for (int i : m) vals.push_back(nu(i));
    std::nth_element(vals.begin(), vals.begin() + (rank - 1), vals.end());
    lambda(c - 1) = vals[static_cast<std::size_t>(rank - 1)];
  }
  return lambda;
}

PseudoLabelSet select_seeds(const Matrix& mean, const Eigen::VectorXd& nu,
                            const Eigen::VectorXd& lambda, double percentile) {
  if (mean.rows() != nu.size())
    throw ShapeMismatchError("select_seeds: distribution/uncertainty mismatch");
  const int class_count = static_cast<int>(lambda.size());
  auto predicted = predicted_classes(mean);
  // closed threshold first, then the exact budget by (nu, index)
  auto members = members_by_class(predicted, class_count);
  PseudoLabelSet out;
  for (int c = 1; c <= class_count; ++c) {
    if (lambda(c - 1) == -std::numeric_limits<double>::infinity()) continue;
    auto& m = members[static_cast<std::size_t>(c - 1)];
    std::vector<int> candidates;
    for (int i : m)
      if (nu(i) <= lambda(c - 1)) candidates.push_back(i);
    if (candidates.empty()) continue;
    std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
      return nu(a) < nu(b) || (nu(a) == nu(b) && a < b);
    });
    const long budget = budget_for(percentile, static_cast<long>(m.size()));
    if (static_cast<long>(candidates.size()) > budget)
      candidates.resize(static_cast<std::size_t>(budget));
    for (int i : candidates) {
      PseudoLabelEntry e;
      e.point = i;
      e.label = c;
      e.provenance = Provenance::kSeed;
      e.seed_point = i;
      e.rank = 1;
      out.entries.push_back(e);
    }
  }
  std::sort(out.entries.begin(), out.entries.end(),
            [](const PseudoLabelEntry& a, const PseudoLabelEntry& b) {
              return a.point < b.point;
            });
  return out;
}

PseudoLabelSet confidence_select(const Matrix& mean, double percentile,
                                 int min_class_count) {
  if (percentile <= 0.0 || percentile >= 100.0)
    throw InvalidConfigError("percentile must lie in (0, 100)");
  auto predicted = predicted_classes(mean);
  Eigen::VectorXd key(mean.rows());
  for (Eigen::Index i = 0; i < mean.rows(); ++i)
    key(i) = -mean.row(i).maxCoeff();  // ascending key = descending confidence
  return budget_select(predicted, key, percentile,
                       static_cast<int>(mean.cols()), min_class_count);
}

PseudoLabelSet centroid_select(const Matrix& backbone_feats, const Matrix& mean,
                               double percentile, int min_class_count) {
  if (percentile <= 0.0 || percentile >= 100.0)
    throw InvalidConfigError("percentile must lie in (0, 100)");
  if (backbone_feats.rows() != mean.rows())
    throw ShapeMismatchError("centroid_select: feature/distribution mismatch");
  auto predicted = predicted_classes(mean);
  const int class_count = static_cast<int>(mean.cols());
  auto members = members_by_class(predicted, class_count);
  Eigen::VectorXd key = Eigen::VectorXd::Zero(mean.rows());
  for (int c = 1; c <= class_count; ++c) {
    const auto& m = members[static_cast<std::size_t>(c - 1)];
    if (m.empty()) continue;
    Eigen::RowVectorXd centroid = Eigen::RowVectorXd::Zero(backbone_feats.cols());
    for (int i : m) centroid += backbone_feats.row(i);
    centroid /= static_cast<double>(m.size());
    for (int i : m) key(i) = (backbone_feats.row(i) - centroid).norm();
  }
  return budget_select(predicted, key, percentile, class_count, min_class_count);
}

}  // namespace streamseg::selection
