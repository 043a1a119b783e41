#include "streamseg/selection.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace streamseg;
using autodiff::Matrix;
using selection::PseudoLabelSet;
using selection::UncertaintyMode;

namespace {

selection::McResult two_pass_example() {
  // one point, two classes, passes (1,0) and (0,1)
  selection::McResult mc;
  Matrix p1(1, 2), p2(1, 2);
  p1 << 1.0, 0.0;
  p2 << 0.0, 1.0;
  mc.passes = {p1, p2};
  mc.mean = 0.5 * (p1 + p2);
  return mc;
}

segnet::SegModel tiny_model(double dropout, Rng& rng) {
  segnet::ModelConfig cfg;
  cfg.input_dim = 5;
  cfg.backbone_widths = {8, 8};
  cfg.head_hidden = 8;
  cfg.head_dim = 8;
  cfg.dropout_rate = dropout;
  return segnet::SegModel::init(cfg, rng);
}

}  // namespace

TEST(Uncertainty, CrossPassVarianceExample) {
  const auto mc = two_pass_example();
  const Eigen::VectorXd nu = selection::uncertainty_index(mc);
  ASSERT_EQ(nu.size(), 1);
  EXPECT_NEAR(nu(0), 0.25, 1e-12);
}

TEST(Uncertainty, ClassVarianceMode) {
  const auto mc = two_pass_example();
  // averaged row is (0.5, 0.5): variance across entries is zero
  const Eigen::VectorXd nu =
      selection::uncertainty_index(mc, UncertaintyMode::kClassVariance);
  EXPECT_NEAR(nu(0), 0.0, 1e-12);
}

TEST(Uncertainty, SinglePassWarnsAndZeroes) {
  selection::McResult mc;
  Matrix p(3, 2);
  p << 0.9, 0.1, 0.2, 0.8, 0.5, 0.5;
  mc.passes = {p};
  mc.mean = p;
  const Eigen::VectorXd nu = selection::uncertainty_index(mc);
  EXPECT_EQ(nu, Eigen::VectorXd::Zero(3));
}

TEST(McPasses, DropoutDisabledIsDeterministicZeroVariance) {
  Rng init(21);
  auto model = tiny_model(0.0, init);
  Matrix input = Matrix::Random(40, 5);
  Rng rng(3);
  const auto mc = selection::mc_mean_distribution(model, input, 5, rng);
  ASSERT_EQ(mc.passes.size(), 5u);
  for (const auto& p : mc.passes) EXPECT_EQ(p, mc.passes[0]);
  const Eigen::VectorXd nu = selection::uncertainty_index(mc);
  EXPECT_EQ(nu, Eigen::VectorXd::Zero(40));
}

TEST(McPasses, MeanIsRowStochasticAndModelUntouched) {
  Rng init(22);
  auto model = tiny_model(0.5, init);
  Matrix input = Matrix::Random(30, 5);
  const Matrix w_before = model.backbone[0].w;
  Rng rng(4);
  const auto mc = selection::mc_mean_distribution(model, input, 5, rng);
  EXPECT_EQ(model.backbone[0].w, w_before);
  for (Eigen::Index i = 0; i < mc.mean.rows(); ++i)
    EXPECT_NEAR(mc.mean.row(i).sum(), 1.0, 1e-9);
  EXPECT_THROW(selection::mc_mean_distribution(model, input, 0, rng),
               InvalidConfigError);
}

TEST(Thresholds, NearestRankExample) {
  // nu = 0.1..1.0 on ten points of one class, a = 10 -> lambda = 0.1
  Eigen::VectorXd nu(10);
  std::vector<int> predicted(10, 3);
  for (int i = 0; i < 10; ++i) nu(i) = 0.1 * (i + 1);
  const Eigen::VectorXd lambda =
      selection::per_class_thresholds(nu, predicted, 10.0, geom::kClassCount);
  EXPECT_NEAR(lambda(2), 0.1, 1e-12);
  for (int c = 0; c < geom::kClassCount; ++c)
    if (c != 2) EXPECT_EQ(lambda(c), -std::numeric_limits<double>::infinity());
}

TEST(Thresholds, SmallClassesGetMinusInfinity) {
  Eigen::VectorXd nu(4);
  nu << 0.1, 0.2, 0.3, 0.4;
  std::vector<int> predicted(4, 1);  // below the 5-point minimum
  const Eigen::VectorXd lambda =
      selection::per_class_thresholds(nu, predicted, 1.0, geom::kClassCount);
  EXPECT_EQ(lambda(0), -std::numeric_limits<double>::infinity());
}

TEST(Thresholds, PercentileRangeChecked) {
  Eigen::VectorXd nu(5);
  nu.setZero();
  std::vector<int> predicted(5, 1);
  EXPECT_THROW(selection::per_class_thresholds(nu, predicted, 0.0, 7),
               InvalidConfigError);
  EXPECT_THROW(selection::per_class_thresholds(nu, predicted, 100.0, 7),
               InvalidConfigError);
}

TEST(Seeds, ExactBudgetWithDistinctScores) {
  // 100 points, one class, distinct nu, a = 1 -> exactly ceil(1) = 1 seed
  const int n = 100;
  Matrix mean(n, geom::kClassCount);
  mean.setZero();
  Eigen::VectorXd nu(n);
  for (int i = 0; i < n; ++i) {
    mean(i, 4) = 1.0;
    nu(i) = 0.001 * (i + 1);
  }
  std::vector<int> predicted(n, 5);
  const Eigen::VectorXd lambda =
      selection::per_class_thresholds(nu, predicted, 1.0, geom::kClassCount);
  const PseudoLabelSet seeds = selection::select_seeds(mean, nu, lambda, 1.0);
  ASSERT_EQ(seeds.size(), 1u);
  EXPECT_EQ(seeds.entries[0].point, 0);  // lowest uncertainty
  EXPECT_EQ(seeds.entries[0].label, 5);
  EXPECT_EQ(seeds.entries[0].rank, 1);
  EXPECT_EQ(seeds.entries[0].provenance, selection::Provenance::kSeed);
}

TEST(Seeds, TiedScoresTrimmedByIndex) {
  // all-equal nu (the dropout-off degenerate case): budget filled by index
  const int n = 200;
  Matrix mean(n, geom::kClassCount);
  mean.setZero();
  Eigen::VectorXd nu = Eigen::VectorXd::Zero(n);
  std::vector<int> predicted(n, 1);
  for (int i = 0; i < n; ++i) mean(i, 0) = 1.0;
  const Eigen::VectorXd lambda =
      selection::per_class_thresholds(nu, predicted, 1.0, geom::kClassCount);
  const PseudoLabelSet seeds = selection::select_seeds(mean, nu, lambda, 1.0);
  ASSERT_EQ(seeds.size(), 2u);  // ceil(0.01 * 200) = 2
  EXPECT_EQ(seeds.entries[0].point, 0);
  EXPECT_EQ(seeds.entries[1].point, 1);
}

TEST(Seeds, PerClassBudgetsIndependent) {
  const int n = 300;  // 150 points each in classes 1 and 2
  Matrix mean(n, geom::kClassCount);
  mean.setZero();
  Eigen::VectorXd nu(n);
  std::vector<int> predicted(n);
  Rng rng(23);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    const int cls = (i < 150) ? 1 : 2;
    predicted[i] = cls;
    mean(i, cls - 1) = 1.0;
    nu(i) = u(rng);
  }
  const Eigen::VectorXd lambda =
      selection::per_class_thresholds(nu, predicted, 1.0, geom::kClassCount);
  const PseudoLabelSet seeds = selection::select_seeds(mean, nu, lambda, 1.0);
  // ceil(0.01 * 150) = 2 per class
  long per_class[2] = {0, 0};
  for (const auto& e : seeds.entries) {
    ASSERT_TRUE(e.label == 1 || e.label == 2);
    ++per_class[e.label - 1];
    EXPECT_LE(nu(e.point), lambda(e.label - 1));
  }
  EXPECT_EQ(per_class[0], 2);
  EXPECT_EQ(per_class[1], 2);
}

TEST(ConfidenceSelect, TakesHighestSoftmax) {
  const int n = 10;
  Matrix mean(n, geom::kClassCount);
  mean.setZero();
  for (int i = 0; i < n; ++i) {
    mean(i, 0) = 0.5 + 0.04 * i;  // confidence grows with index
    mean(i, 1) = 1.0 - mean(i, 0);
  }
  const PseudoLabelSet s = selection::confidence_select(mean, 10.0);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.entries[0].point, 9);
}

TEST(CentroidSelect, TakesNearestToClassCentroid) {
  const int n = 12;
  Matrix feats(n, 2);
  Matrix mean(n, geom::kClassCount);
  mean.setZero();
  for (int i = 0; i < n; ++i) {
    mean(i, 2) = 1.0;
    feats(i, 0) = static_cast<double>(i);  // centroid at 5.5
    feats(i, 1) = 0.0;
  }
  const PseudoLabelSet s = selection::centroid_select(feats, mean, 10.0);
  ASSERT_EQ(s.size(), 2u);  // ceil(0.1 * 12) = 2
  EXPECT_EQ(s.entries[0].point, 5);
  EXPECT_EQ(s.entries[1].point, 6);
}

TEST(Seeds, EmptyWhenEveryClassTooSmall) {
  Matrix mean(3, geom::kClassCount);
  mean.setZero();
  Eigen::VectorXd nu(3);
  nu << 0.1, 0.2, 0.3;
  std::vector<int> predicted{1, 2, 3};
  for (int i = 0; i < 3; ++i) mean(i, predicted[static_cast<std::size_t>(i)] - 1) = 1.0;
  const Eigen::VectorXd lambda =
      selection::per_class_thresholds(nu, predicted, 1.0, geom::kClassCount);
  const PseudoLabelSet seeds = selection::select_seeds(mean, nu, lambda, 1.0);
  EXPECT_TRUE(seeds.empty());
}
