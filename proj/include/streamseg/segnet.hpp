#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "streamseg/autodiff.hpp"
#include "streamseg/descriptor.hpp"
#include "streamseg/geom.hpp"

namespace streamseg::segnet {

using autodiff::Matrix;
using autodiff::Tensor;

struct ModelConfig {
  int input_dim = 37;
  std::vector<int> backbone_widths{64, 96, 96, 96};
  // Output columns index classes 1..class_count; id 0 stays unlabelled.
  int class_count = geom::kClassCount;
  int head_hidden = 128;
  int head_dim = 128;
  double dropout_rate = 0.5;
  bool operator==(const ModelConfig&) const = default;
};

struct AffineParams {
  Matrix w;
  Matrix b;  // 1 x out
};

struct NormParams {
  Matrix gamma;         // 1 x C
  Matrix beta;          // 1 x C
  Matrix running_mean;  // 1 x C
  Matrix running_var;   // 1 x C
};

// One head block computes batch_norm(relu(affine(x))).
struct HeadBlock {
  AffineParams lin;
  NormParams bn;
};

// Point-wise segmentation model: shared MLP backbone, dropout before the
// classifier, plus projection/prediction heads used only while adapting.
class SegModel {
 public:
  SegModel() = default;
  static SegModel init(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  int feature_width() const { return cfg_.backbone_widths.back(); }

  // Heads restart from scratch when adaptation begins.
  void reinit_heads(Rng& rng);

  // Adaptation-time override of the classifier dropout probability.
  void set_dropout_rate(double rate);

  struct NamedTensor {
    std::string name;
    Matrix* value;
  };
  std::vector<NamedTensor> parameters();  // trainable, fixed order
  std::vector<NamedTensor> buffers();     // batch-norm running statistics

  std::vector<AffineParams> backbone;
  AffineParams classifier;
  std::vector<HeadBlock> projection;  // feature_width -> head_hidden -> head_dim
  std::vector<HeadBlock> prediction;  // head_dim -> head_hidden -> head_dim

 private:
  friend SegModel make_skeleton(const ModelConfig& cfg);
  ModelConfig cfg_;
};

struct ForwardResult {
  Tensor features;  // N x feature_width, pre-dropout
  Tensor logits;    // N x class_count
  Tensor probs;     // row-wise softmax of logits
};

struct HeadResult {
  Tensor z;  // projection output
  Tensor q;  // prediction output
};

// Places the model parameters on one tape so several forwards (current frame,
// lagged frame, heads) share gradient accumulation. In training mode the head
// batch norms use per-batch statistics; running buffers are never rewritten
// (they stay as pretrained/initialized).
class BoundModel {
 public:
  BoundModel(autodiff::Tape& tape, SegModel& model, bool training);

  ForwardResult forward(const Matrix& input, bool dropout_on = false,
                        Rng* rng = nullptr);
  HeadResult heads(const Tensor& features);

  // After tape.backward: gradients parallel to model.parameters().
  std::vector<Matrix> grads() const;

 private:
  struct BoundAffine {
    Tensor w, b;
  };
  struct BoundNorm {
    Tensor gamma, beta;
  };
  Tensor head_block(const Tensor& x, const BoundAffine& lin,
                    const BoundNorm& bn, const NormParams& stats);

  autodiff::Tape* tape_;
  SegModel* model_;
  bool training_;
  std::vector<Tensor> bound_;  // parallel to model.parameters()
  std::vector<BoundAffine> backbone_;
  BoundAffine classifier_;
  std::vector<BoundAffine> proj_lin_;
  std::vector<BoundNorm> proj_bn_;
  std::vector<BoundAffine> pred_lin_;
  std::vector<BoundNorm> pred_bn_;
};

struct PretrainConfig {
  int epochs = 20;
  double learning_rate = 0.01;
  double lr_decay = 0.9;  // per-epoch exponential factor
  double weight_decay = 1e-5;
  // projection/prediction heads warm up on the source stream after the
  // segmentation path trains; a fresh head needs far more steps than a short
  // target stream can provide before its gradients carry signal
  int head_epochs = 5;
  double head_learning_rate = 1e-3;
};

struct PretrainReport {
  std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

// Supervised source training: one Adam step per frame, shuffled each epoch,
// cross-entropy over labelled points (id 0 ignored).
PretrainReport pretrain_source(SegModel& model, const std::vector<Matrix>& inputs,
                               const std::vector<std::vector<int>>& labels,
                               const PretrainConfig& cfg, Rng& rng);

// Per-point input rows: xyz relative to the frame centroid, height above the
// estimated ground level, then the local descriptor.
Matrix build_input_features(const geom::Frame& frame,
                            const descriptor::DescriptorField& desc);
int feature_dim(const descriptor::DescriptorConfig& cfg);

void save_checkpoint(const std::string& path, const SegModel& model);
SegModel load_checkpoint(const std::string& path);

}  // namespace streamseg::segnet
