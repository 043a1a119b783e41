#include "streamseg/autodiff.hpp"

#include <cmath>
#include <random>
#include <utility>

namespace streamseg::autodiff {
namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeMismatchError(std::string(op) + ": operand shapes differ");
}

Tape* tape_of(const Tensor& a, const Tensor& b) {
  if (a.tape() != b.tape())
    throw ShapeMismatchError("operands live on different tapes");
  return a.tape();
}

}  // namespace

const Matrix& Tensor::value() const {
  if (!tape_) throw ShapeMismatchError("tensor handle is empty");
  return tape_->nodes_[static_cast<std::size_t>(id_)].value;
}

bool Tensor::requires_grad() const {
  if (!tape_) return false;
  return tape_->nodes_[static_cast<std::size_t>(id_)].requires_grad;
}

Tensor Tape::constant(Matrix v) {
  Node n;
  n.value = std::move(v);
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::param(const Matrix& v) {
  Node n;
  n.value = v;
  n.requires_grad = recording_;
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::make(Matrix value, bool requires_grad, BackFn back) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = recording_ && requires_grad;
  if (n.requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(const Tensor& t, const Matrix& g) {
  Node& n = nodes_[static_cast<std::size_t>(t.id_)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  n.grad += g;
}

void Tape::backward(const Tensor& loss) {
  if (loss.rows() != 1 || loss.cols() != 1)
    throw NotScalarError("backward requires a 1x1 loss");
  if (!recording_ || !loss.requires_grad()) return;
  Node& top = nodes_[static_cast<std::size_t>(loss.id_)];
  if (top.grad.size() == 0) top.grad = Matrix::Zero(1, 1);
  top.grad(0, 0) += 1.0;
  // Creation order is a topological order, so one reverse sweep suffices.
  for (int i = loss.id_; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.size() == 0 || !n.back) continue;
    n.back(*this, n.grad);
  }
}

Matrix Tape::grad(const Tensor& t) const {
  const Node& n = nodes_[static_cast<std::size_t>(t.id_)];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tape* tp = tape_of(a, b);
  Tensor ta = a, tb = b;
  return tp->make(a.value() + b.value(), a.requires_grad() || b.requires_grad(),
                  [ta, tb](Tape& t, const Matrix& g) {
                    t.accumulate(ta, g);
                    t.accumulate(tb, g);
                  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tape* tp = tape_of(a, b);
  Tensor ta = a, tb = b;
  return tp->make(a.value() - b.value(), a.requires_grad() || b.requires_grad(),
                  [ta, tb](Tape& t, const Matrix& g) {
                    t.accumulate(ta, g);
                    t.accumulate(tb, -g);
                  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tape* tp = tape_of(a, b);
  Tensor ta = a, tb = b;
  return tp->make(a.value().cwiseProduct(b.value()),
                  a.requires_grad() || b.requires_grad(),
                  [ta, tb](Tape& t, const Matrix& g) {
                    t.accumulate(ta, g.cwiseProduct(tb.value()));
                    t.accumulate(tb, g.cwiseProduct(ta.value()));
                  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  Tape* tp = tape_of(a, b);
  Tensor ta = a, tb = b;
  return tp->make(a.value().cwiseQuotient(b.value()),
                  a.requires_grad() || b.requires_grad(),
                  [ta, tb](Tape& t, const Matrix& g) {
                    const Matrix& bv = tb.value();
                    t.accumulate(ta, g.cwiseQuotient(bv));
                    t.accumulate(tb, Matrix(-g.cwiseProduct(ta.value())
                                                 .cwiseQuotient(bv.cwiseProduct(bv))));
                  });
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor ta = a;
  return a.tape()->make((a.value().array() + c).matrix(), a.requires_grad(),
                        [ta](Tape& t, const Matrix& g) { t.accumulate(ta, g); });
}

Tensor mul_scalar(const Tensor& a, double c) {
  Tensor ta = a;
  return a.tape()->make(a.value() * c, a.requires_grad(),
                        [ta, c](Tape& t, const Matrix& g) {
                          t.accumulate(ta, g * c);
                        });
}

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.cols() != w.rows()) throw ShapeMismatchError("affine: x cols != w rows");
  if (b.rows() != 1 || b.cols() != w.cols())
    throw ShapeMismatchError("affine: bias must be 1 x out");
  Tape* tp = x.tape();
  Tensor tx = x, tw = w, tb = b;
  Matrix y = x.value() * w.value();
  y.rowwise() += b.value().row(0);
  return tp->make(std::move(y),
                  x.requires_grad() || w.requires_grad() || b.requires_grad(),
                  [tx, tw, tb](Tape& t, const Matrix& g) {
                    t.accumulate(tx, g * tw.value().transpose());
                    t.accumulate(tw, tx.value().transpose() * g);
                    t.accumulate(tb, g.colwise().sum());
                  });
}

Tensor relu(const Tensor& x) {
  Tensor tx = x;
  return x.tape()->make(x.value().cwiseMax(0.0), x.requires_grad(),
                        [tx](Tape& t, const Matrix& g) {
                          Matrix mask =
                              (tx.value().array() > 0.0).cast<double>().matrix();
                          t.accumulate(tx, g.cwiseProduct(mask));
                        });
}

Tensor softmax_rows(const Tensor& x) {
  Tensor tx = x;
  Matrix y = x.value();
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    double m = y.row(i).maxCoeff();
    Eigen::ArrayXd e = (y.row(i).transpose().array() - m).exp();
    y.row(i) = (e / e.sum()).matrix().transpose();
  }
  Matrix yc = y;  // backward reuses the output instead of recomputing exp
  return x.tape()->make(std::move(y), x.requires_grad(),
                        [tx, yc](Tape& t, const Matrix& g) {
                          Matrix dx(yc.rows(), yc.cols());
                          for (Eigen::Index i = 0; i < yc.rows(); ++i) {
                            double dot = g.row(i).dot(yc.row(i));
                            dx.row(i) =
                                ((g.row(i).array() - dot) * yc.row(i).array())
                                    .matrix();
                          }
                          t.accumulate(tx, dx);
                        });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  Tensor tx = x;
  const Matrix& xv = x.value();
  Matrix y = Matrix::Zero(xv.rows(), xv.cols());
  Eigen::VectorXd norms(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    double n = xv.row(i).norm();
    norms(i) = n;
    if (n >= eps) y.row(i) = xv.row(i) / n;
  }
  return x.tape()->make(
      std::move(y), x.requires_grad(),
      [tx, norms, eps](Tape& t, const Matrix& g) {
        const Matrix& xv = tx.value();
        Matrix dx = Matrix::Zero(xv.rows(), xv.cols());
        for (Eigen::Index i = 0; i < xv.rows(); ++i) {
          double n = norms(i);
          if (n < eps) continue;
          double dot = g.row(i).dot(xv.row(i));
          dx.row(i) = g.row(i) / n - xv.row(i) * (dot / (n * n * n));
        }
        t.accumulate(tx, dx);
      });
}

BatchNormOut batch_norm_train(const Tensor& x, const Tensor& gamma,
                              const Tensor& beta, double eps) {
  if (x.rows() < 1) throw ShapeMismatchError("batch_norm_train: empty batch");
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols())
    throw ShapeMismatchError("batch_norm_train: gamma/beta must be 1 x C");
  Tape* tp = x.tape();
  Tensor tx = x, tg = gamma, tb = beta;
  const Matrix& xv = x.value();
  const double n = static_cast<double>(xv.rows());
  Eigen::RowVectorXd mu = xv.colwise().mean();
  Matrix centered = xv.rowwise() - mu;
  Eigen::RowVectorXd var = centered.array().square().colwise().mean();
  Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt().matrix();
  Matrix xhat = (centered.array().rowwise() * inv_std.array()).matrix();
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  y.rowwise() += beta.value().row(0);
  Matrix xhat_copy = xhat;
  Eigen::RowVectorXd inv_copy = inv_std;
  BatchNormOut out;
  out.y = tp->make(
      std::move(y),
      x.requires_grad() || gamma.requires_grad() || beta.requires_grad(),
      [tx, tg, tb, xhat_copy, inv_copy, n](Tape& t, const Matrix& g) {
        t.accumulate(tg, (g.array() * xhat_copy.array()).colwise().sum().matrix());
        t.accumulate(tb, g.colwise().sum());
        Matrix dxhat = (g.array().rowwise() * tg.value().row(0).array()).matrix();
        Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
        Eigen::RowVectorXd sum_dxhat_xhat =
            (dxhat.array() * xhat_copy.array()).colwise().sum().matrix();
        Matrix dx = dxhat * n;
        dx.array().rowwise() -= sum_dxhat.array();
        dx.array() -= xhat_copy.array().rowwise() * sum_dxhat_xhat.array();
        dx.array().rowwise() *= (inv_copy / n).array();
        t.accumulate(tx, dx);
      });
  out.batch_mean = mu;
  out.batch_var = var;
  return out;
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const Eigen::RowVectorXd& mean, const Eigen::RowVectorXd& var,
                       double eps) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 ||
      beta.cols() != x.cols() || mean.cols() != x.cols() || var.cols() != x.cols())
    throw ShapeMismatchError("batch_norm_eval: parameter shapes must be 1 x C");
  Tape* tp = x.tape();
  Tensor tx = x, tg = gamma, tb = beta;
  Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt().matrix();
  Matrix centered = x.value().rowwise() - mean;
  Matrix xhat = (centered.array().rowwise() * inv_std.array()).matrix();
  Matrix y = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  y.rowwise() += beta.value().row(0);
  Matrix xhat_copy = xhat;
  Eigen::RowVectorXd inv_copy = inv_std;
  return tp->make(
      std::move(y),
      x.requires_grad() || gamma.requires_grad() || beta.requires_grad(),
      [tx, tg, tb, xhat_copy, inv_copy](Tape& t, const Matrix& g) {
        t.accumulate(tg, (g.array() * xhat_copy.array()).colwise().sum().matrix());
        t.accumulate(tb, g.colwise().sum());
        Matrix dx =
            (g.array().rowwise() * (tg.value().row(0).array() * inv_copy.array()))
                .matrix();
        t.accumulate(tx, dx);
      });
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool enabled) {
  if (p < 0.0 || p >= 1.0)
    throw InvalidConfigError("dropout rate must lie in [0, 1)");
  if (!enabled || p == 0.0) return x;
  Tensor tx = x;
  const Matrix& xv = x.value();
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(xv.rows(), xv.cols());
  const double scale = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < xv.rows(); ++i)
    for (Eigen::Index j = 0; j < xv.cols(); ++j)
      mask(i, j) = keep(rng) ? scale : 0.0;
  return x.tape()->make(xv.cwiseProduct(mask), x.requires_grad(),
                        [tx, mask](Tape& t, const Matrix& g) {
                          t.accumulate(tx, g.cwiseProduct(mask));
                        });
}

Tensor stop_gradient(const Tensor& x) { return x.tape()->constant(x.value()); }

Tensor gather_rows(const Tensor& x, const std::vector<int>& indices) {
  Tensor tx = x;
  const Matrix& xv = x.value();
  Matrix y(static_cast<Eigen::Index>(indices.size()), xv.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    int r = indices[i];
    if (r < 0 || r >= xv.rows())
      throw ShapeMismatchError("gather_rows: index out of range");
    y.row(static_cast<Eigen::Index>(i)) = xv.row(r);
  }
  std::vector<int> idx = indices;
  return x.tape()->make(std::move(y), x.requires_grad(),
                        [tx, idx](Tape& t, const Matrix& g) {
                          Matrix dx = Matrix::Zero(tx.rows(), tx.cols());
                          for (std::size_t i = 0; i < idx.size(); ++i)
                            dx.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
                          t.accumulate(tx, dx);
                        });
}

Tensor row_sum(const Tensor& x) {
  Tensor tx = x;
  return x.tape()->make(x.value().rowwise().sum(), x.requires_grad(),
                        [tx](Tape& t, const Matrix& g) {
                          t.accumulate(tx, g * Matrix::Ones(1, tx.cols()));
                        });
}

Tensor col_sum(const Tensor& x) {
  Tensor tx = x;
  return x.tape()->make(x.value().colwise().sum(), x.requires_grad(),
                        [tx](Tape& t, const Matrix& g) {
                          t.accumulate(tx, Matrix::Ones(tx.rows(), 1) * g);
                        });
}

Tensor sum(const Tensor& x) {
  Tensor tx = x;
  Matrix y(1, 1);
  y(0, 0) = x.value().sum();
  return x.tape()->make(std::move(y), x.requires_grad(),
                        [tx](Tape& t, const Matrix& g) {
                          t.accumulate(
                              tx, Matrix::Constant(tx.rows(), tx.cols(), g(0, 0)));
                        });
}

Tensor mean(const Tensor& x) {
  const double n = static_cast<double>(x.value().size());
  if (n == 0) throw ShapeMismatchError("mean: empty tensor");
  Tensor tx = x;
  Matrix y(1, 1);
  y(0, 0) = x.value().mean();
  return x.tape()->make(
      std::move(y), x.requires_grad(), [tx, n](Tape& t, const Matrix& g) {
        t.accumulate(tx, Matrix::Constant(tx.rows(), tx.cols(), g(0, 0) / n));
      });
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets,
                          int ignore_index) {
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows())
    throw ShapeMismatchError("cross_entropy_mean: one target per row required");
  Tensor tx = logits;
  const Matrix& lv = logits.value();
  Matrix probs(lv.rows(), lv.cols());
  double total = 0.0;
  long counted = 0;
  for (Eigen::Index i = 0; i < lv.rows(); ++i) {
    double m = lv.row(i).maxCoeff();
    Eigen::ArrayXd e = (lv.row(i).transpose().array() - m).exp();
    double z = e.sum();
    probs.row(i) = (e / z).matrix().transpose();
    int tgt = targets[static_cast<std::size_t>(i)];
    if (tgt == ignore_index) continue;
    if (tgt < 0 || tgt >= lv.cols())
      throw ShapeMismatchError("cross_entropy_mean: target id out of range");
    total += std::log(z) + m - lv(i, tgt);
    ++counted;
  }
  if (counted == 0)
    throw EmptySetError("cross_entropy_mean: every row is ignored");
  Matrix y(1, 1);
  y(0, 0) = total / static_cast<double>(counted);
  std::vector<int> tgts = targets;
  Matrix probs_copy = probs;
  const double inv_count = 1.0 / static_cast<double>(counted);
  return logits.tape()->make(
      std::move(y), logits.requires_grad(),
      [tx, tgts, probs_copy, ignore_index, inv_count](Tape& t, const Matrix& g) {
        Matrix dx = Matrix::Zero(tx.rows(), tx.cols());
        for (Eigen::Index i = 0; i < tx.rows(); ++i) {
          int tgt = tgts[static_cast<std::size_t>(i)];
          if (tgt == ignore_index) continue;
          dx.row(i) = probs_copy.row(i);
          dx(i, tgt) -= 1.0;
          dx.row(i) *= g(0, 0) * inv_count;
        }
        t.accumulate(tx, dx);
      });
}

void adam_step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads,
               OptimizerState& state) {
  if (params.size() != grads.size())
    throw ShapeMismatchError("adam_step: params and grads differ in count");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i] = Matrix::Zero(params[i]->rows(), params[i]->cols());
      state.v[i] = Matrix::Zero(params[i]->rows(), params[i]->cols());
    }
  }
  if (state.m.size() != params.size())
    throw ShapeMismatchError("adam_step: optimizer state sized for another model");
  ++state.step_count;
  const double bc1 =
      1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 =
      1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& theta = *params[i];
    if (grads[i].rows() != theta.rows() || grads[i].cols() != theta.cols())
      throw ShapeMismatchError("adam_step: gradient shape mismatch");
    if (!grads[i].allFinite())
      throw NonFiniteGradientError("adam_step: non-finite gradient");
    Matrix g = grads[i];
    if (state.weight_decay != 0.0) g += state.weight_decay * theta;
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g.cwiseProduct(g);
    theta.array() -= state.learning_rate * (state.m[i] / bc1).array() /
                     ((state.v[i] / bc2).array().sqrt() + state.eps);
  }
}

}  // namespace streamseg::autodiff
