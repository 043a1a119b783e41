#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "streamseg/common.hpp"

namespace streamseg::autodiff {

using Matrix = Eigen::MatrixXd;

class Tape;

// Handle to a dense value living on a tape. Copies are cheap; the tape owns
// storage and the (optional) gradient buffer.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool requires_grad() const;
  bool valid() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Reverse-mode tape. One tape is confined to one thread and one optimization
// step; a non-recording tape evaluates the same forward code without building
// a graph (used for inference and MC-dropout passes).
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }

  Tensor constant(Matrix v);
  // Gradient leaf. Falls back to a constant on a non-recording tape.
  Tensor param(const Matrix& v);

  // Seeds d(loss)/d(loss) = 1 and sweeps the graph in reverse creation
  // order. Throws NotScalar unless loss is 1x1.
  void backward(const Tensor& loss);

  // Accumulated gradient; zeros when the tensor was never reached.
  Matrix grad(const Tensor& t) const;

  // --- internals used by the op free functions ---
  using BackFn = std::function<void(Tape&, const Matrix& upstream)>;
  Tensor make(Matrix value, bool requires_grad, BackFn back);
  void accumulate(const Tensor& t, const Matrix& g);
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;  // empty until touched
    bool requires_grad = false;
    BackFn back;
  };
  friend class Tensor;
  std::vector<Node> nodes_;
  bool recording_;
};

// ---- primitive forward ops ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor div(const Tensor& a, const Tensor& b);  // elementwise
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);

// y = x * W + b with b broadcast across rows (b is 1 x out).
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor softmax_rows(const Tensor& x);
// Rows with norm < eps map to zero rows (and carry zero gradient).
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

struct BatchNormOut {
  Tensor y;
  Eigen::RowVectorXd batch_mean;
  Eigen::RowVectorXd batch_var;  // population convention
};
// Training-mode batch norm: statistics from the current batch, full backward.
BatchNormOut batch_norm_train(const Tensor& x, const Tensor& gamma,
                              const Tensor& beta, double eps = 1e-5);
// Inference-mode batch norm against fixed running statistics.
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Eigen::RowVectorXd& mean, const Eigen::RowVectorXd& var,
                       double eps = 1e-5);

// Inverted dropout: zero with probability p, survivors scaled by 1/(1-p).
// Identity when disabled or p == 0. The drawn mask is captured for backward.
Tensor dropout(const Tensor& x, double p, Rng& rng, bool enabled);

// Values pass through; no tape edge, so backward contributes exactly zero.
Tensor stop_gradient(const Tensor& x);

Tensor gather_rows(const Tensor& x, const std::vector<int>& indices);
Tensor row_sum(const Tensor& x);  // N x 1
Tensor col_sum(const Tensor& x);  // 1 x C
Tensor sum(const Tensor& x);      // 1 x 1
Tensor mean(const Tensor& x);     // 1 x 1

// Mean cross-entropy over rows whose target id is not ignore_index.
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets,
                          int ignore_index = -1);

// ---- optimizer ----

struct OptimizerState {
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step_count = 0;
  std::vector<Matrix> m;  // first moments, shaped on first use
  std::vector<Matrix> v;  // second moments
};

// Standard Adam with bias correction; weight decay enters as an additive L2
// gradient term. Throws NonFiniteGradient on non-finite input.
void adam_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
               OptimizerState& state);

}  // namespace streamseg::autodiff
