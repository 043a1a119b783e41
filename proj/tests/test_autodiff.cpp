#include "streamseg/autodiff.hpp"

#include <gtest/gtest.h>

#include <functional>
#include <random>

using namespace streamseg;
using autodiff::Matrix;
using autodiff::Tape;
using autodiff::Tensor;

namespace {

using LossFn = std::function<Tensor(Tape&, std::vector<Tensor>&)>;

double eval_loss(const std::vector<Matrix>& params, const LossFn& make) {
  Tape tape(false);
  std::vector<Tensor> ts;
  ts.reserve(params.size());
  for (const auto& p : params) ts.push_back(tape.param(p));
  return make(tape, ts).value()(0, 0);
}

// Central-difference check of every parameter entry.
void check_grads(std::vector<Matrix> params, const LossFn& make,
                 double rel_tol = 1e-4) {
  Tape tape;
  std::vector<Tensor> ts;
  for (const auto& p : params) ts.push_back(tape.param(p));
  Tensor loss = make(tape, ts);
  ASSERT_EQ(loss.rows(), 1);
  ASSERT_EQ(loss.cols(), 1);
  tape.backward(loss);
  std::vector<Matrix> grads;
  for (const auto& t : ts) grads.push_back(tape.grad(t));

  const double h = 1e-6;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (Eigen::Index r = 0; r < params[pi].rows(); ++r) {
      for (Eigen::Index c = 0; c < params[pi].cols(); ++c) {
        const double orig = params[pi](r, c);
        params[pi](r, c) = orig + h;
        const double fp = eval_loss(params, make);
        params[pi](r, c) = orig - h;
        const double fm = eval_loss(params, make);
        params[pi](r, c) = orig;
        const double numeric = (fp - fm) / (2.0 * h);
        const double analytic = grads[pi](r, c);
        const double scale = std::max({std::abs(numeric), std::abs(analytic), 1e-3});
        EXPECT_NEAR(analytic, numeric, rel_tol * scale)
            << "param " << pi << " entry (" << r << "," << c << ")";
      }
    }
  }
}

Matrix randm(int r, int c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = u(rng);
  return m;
}

}  // namespace

TEST(Tape, BackwardNeedsScalar) {
  Tape tape;
  Tensor x = tape.param(Matrix::Ones(2, 2));
  EXPECT_THROW(tape.backward(x), NotScalarError);
}

TEST(Tape, UntouchedParamHasZeroGrad) {
  Tape tape;
  Tensor x = tape.param(Matrix::Ones(2, 2));
  Tensor y = tape.param(Matrix::Ones(1, 1));
  tape.backward(autodiff::sum(y));
  EXPECT_EQ(tape.grad(x), Matrix::Zero(2, 2));
}

TEST(Tape, MixedTapesRejected) {
  Tape a, b;
  Tensor x = a.param(Matrix::Ones(1, 1));
  Tensor y = b.param(Matrix::Ones(1, 1));
  EXPECT_THROW(autodiff::add(x, y), ShapeMismatchError);
}

TEST(Tape, NonRecordingBuildsNoGraph) {
  Tape tape(false);
  Tensor x = tape.param(Matrix::Ones(3, 3));
  Tensor y = autodiff::relu(autodiff::mul_scalar(x, 2.0));
  EXPECT_EQ(y.value()(1, 1), 2.0);
}

TEST(Grad, Arithmetic) {
  Rng rng(1);
  Matrix a = randm(3, 4, rng), b = randm(3, 4, rng, 0.5, 2.0);
  check_grads({a, b}, [](Tape&, std::vector<Tensor>& t) {
    Tensor s = autodiff::add(t[0], t[1]);
    Tensor d = autodiff::sub(s, autodiff::mul(t[0], t[1]));
    Tensor q = autodiff::div(d, t[1]);
    return autodiff::mean(autodiff::add_scalar(autodiff::mul_scalar(q, 1.7), 0.3));
  });
}

TEST(Grad, AffineReluChain) {
  Rng rng(2);
  Matrix x = randm(5, 4, rng), w = randm(4, 3, rng), b = randm(1, 3, rng);
  check_grads({x, w, b}, [](Tape&, std::vector<Tensor>& t) {
    return autodiff::mean(autodiff::relu(autodiff::affine(t[0], t[1], t[2])));
  });
}

TEST(Grad, SoftmaxRows) {
  Rng rng(3);
  Matrix x = randm(4, 5, rng, -2.0, 2.0);
  Matrix pick = randm(4, 5, rng);
  check_grads({x}, [&pick](Tape& tape, std::vector<Tensor>& t) {
    Tensor w = tape.constant(pick);
    return autodiff::sum(autodiff::mul(autodiff::softmax_rows(t[0]), w));
  });
}

TEST(Grad, L2NormalizeRows) {
  Rng rng(4);
  Matrix x = randm(4, 6, rng, 0.2, 1.5);
  Matrix pick = randm(4, 6, rng);
  check_grads({x}, [&pick](Tape& tape, std::vector<Tensor>& t) {
    Tensor w = tape.constant(pick);
    return autodiff::sum(autodiff::mul(autodiff::l2_normalize_rows(t[0]), w));
  });
}

TEST(Grad, BatchNormTrain) {
  Rng rng(5);
  Matrix x = randm(6, 3, rng), gamma = randm(1, 3, rng, 0.5, 1.5),
         beta = randm(1, 3, rng);
  Matrix pick = randm(6, 3, rng);
  check_grads({x, gamma, beta}, [&pick](Tape& tape, std::vector<Tensor>& t) {
    auto bn = autodiff::batch_norm_train(t[0], t[1], t[2]);
    Tensor w = tape.constant(pick);
    return autodiff::sum(autodiff::mul(bn.y, w));
  });
}

TEST(Grad, BatchNormEval) {
  Rng rng(6);
  Matrix x = randm(5, 3, rng), gamma = randm(1, 3, rng, 0.5, 1.5),
         beta = randm(1, 3, rng);
  Eigen::RowVectorXd mean(3), var(3);
  mean << 0.1, -0.2, 0.3;
  var << 1.1, 0.7, 2.0;
  check_grads({x, gamma, beta}, [&](Tape&, std::vector<Tensor>& t) {
    return autodiff::mean(autodiff::batch_norm_eval(t[0], t[1], t[2], mean, var));
  });
}

TEST(Grad, GatherAndReductions) {
  Rng rng(7);
  Matrix x = randm(6, 4, rng);
  const std::vector<int> idx{4, 0, 2, 2};
  check_grads({x}, [&idx](Tape&, std::vector<Tensor>& t) {
    Tensor g = autodiff::gather_rows(t[0], idx);
    Tensor r = autodiff::row_sum(g);
    Tensor c = autodiff::col_sum(g);
    return autodiff::add(autodiff::mean(r), autodiff::sum(autodiff::mul_scalar(c, 0.25)));
  });
}

TEST(Grad, CrossEntropyWithIgnore) {
  Rng rng(8);
  Matrix logits = randm(5, 4, rng, -2.0, 2.0);
  const std::vector<int> targets{0, 3, -1, 2, 1};
  check_grads({logits}, [&targets](Tape&, std::vector<Tensor>& t) {
    return autodiff::cross_entropy_mean(t[0], targets, -1);
  });
}

TEST(StopGradient, BlocksExactly) {
  Tape tape;
  Tensor x = tape.param(Matrix::Constant(2, 2, 3.0));
  Tensor through = autodiff::sum(autodiff::mul(x, autodiff::stop_gradient(x)));
  tape.backward(through);
  // d/dx sum(x * sg(x)) == sg(x) == x, not 2x
  EXPECT_EQ(tape.grad(x), Matrix::Constant(2, 2, 3.0));

  Tape tape2;
  Tensor y = tape2.param(Matrix::Constant(2, 2, 3.0));
  Tensor blocked = autodiff::sum(autodiff::stop_gradient(autodiff::mul(y, y)));
  tape2.backward(blocked);
  EXPECT_EQ(tape2.grad(y), Matrix::Zero(2, 2));  // bitwise zero
}

TEST(Dropout, InvertedScalingAndIdentity) {
  Tape tape;
  Tensor x = tape.param(Matrix::Ones(200, 10));
  Rng rng(9);
  Tensor d = autodiff::dropout(x, 0.5, rng, true);
  const Matrix& v = d.value();
  long zeros = 0, twos = 0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v(i) == 0.0) ++zeros;
    else if (v(i) == 2.0) ++twos;
    else FAIL() << "unexpected dropout output " << v(i);
  }
  EXPECT_GT(zeros, 700);
  EXPECT_GT(twos, 700);

  Rng rng2(9);
  Tensor off = autodiff::dropout(x, 0.5, rng2, false);
  EXPECT_EQ(off.value(), Matrix::Ones(200, 10));
  EXPECT_THROW(autodiff::dropout(x, 1.0, rng2, true), InvalidConfigError);
}

TEST(Dropout, GradientMatchesMask) {
  Tape tape;
  Matrix xv = Matrix::Ones(50, 4);
  Tensor x = tape.param(xv);
  Rng rng(10);
  Tensor d = autodiff::dropout(x, 0.25, rng, true);
  tape.backward(autodiff::sum(d));
  const Matrix g = tape.grad(x);
  const Matrix& v = d.value();
  for (Eigen::Index i = 0; i < v.size(); ++i)
    EXPECT_EQ(g(i), v(i));  // x is all ones, so grad == mask value
}

TEST(Adam, SingleStepMatchesHand) {
  Matrix theta = Matrix::Constant(1, 1, 1.0);
  Matrix g = Matrix::Constant(1, 1, 0.5);
  autodiff::OptimizerState st;
  st.learning_rate = 0.1;
  st.weight_decay = 0.0;
  autodiff::adam_step({&theta}, {g}, st);
  // m=0.05, v=0.00025 -> mhat=0.5, vhat=0.25 -> step = 0.1*0.5/(0.5+1e-8)
  EXPECT_NEAR(theta(0, 0), 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-12);
  EXPECT_EQ(st.step_count, 1);
}

TEST(Adam, RejectsNonFiniteGradient) {
  Matrix theta = Matrix::Zero(1, 1);
  Matrix g = Matrix::Constant(1, 1, std::numeric_limits<double>::infinity());
  autodiff::OptimizerState st;
  EXPECT_THROW(autodiff::adam_step({&theta}, {g}, st), NonFiniteGradientError);
}

TEST(Adam, WeightDecayPullsTowardZero) {
  Matrix theta = Matrix::Constant(1, 1, 2.0);
  Matrix g = Matrix::Zero(1, 1);
  autodiff::OptimizerState st;
  st.learning_rate = 0.01;
  st.weight_decay = 0.1;
  autodiff::adam_step({&theta}, {g}, st);
  EXPECT_LT(theta(0, 0), 2.0);
}
