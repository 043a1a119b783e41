#include "streamseg/segnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

namespace streamseg::segnet {
namespace {

constexpr char kMagic[8] = {'S', 'S', 'E', 'G', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

Matrix gaussian(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

AffineParams init_affine(int in, int out, double stddev, Rng& rng) {
  AffineParams p;
  p.w = gaussian(in, out, stddev, rng);
  p.b = Matrix::Zero(1, out);
  return p;
}

NormParams init_norm(int width) {
  NormParams p;
  p.gamma = Matrix::Ones(1, width);
  p.beta = Matrix::Zero(1, width);
  p.running_mean = Matrix::Zero(1, width);
  p.running_var = Matrix::Ones(1, width);
  return p;
}

HeadBlock init_block(int in, int out, Rng& rng) {
  HeadBlock b;
  b.lin = init_affine(in, out, std::sqrt(2.0 / in), rng);
  b.bn = init_norm(out);
  return b;
}

void init_heads(SegModel& m, const ModelConfig& cfg, Rng& rng) {
  m.projection.clear();
  m.prediction.clear();
  m.projection.push_back(
      init_block(cfg.backbone_widths.back(), cfg.head_hidden, rng));
  m.projection.push_back(init_block(cfg.head_hidden, cfg.head_dim, rng));
  m.prediction.push_back(init_block(cfg.head_dim, cfg.head_hidden, rng));
  m.prediction.push_back(init_block(cfg.head_hidden, cfg.head_dim, rng));
}

void validate_config(const ModelConfig& cfg) {
  if (cfg.input_dim < 1 || cfg.class_count < 2 || cfg.head_hidden < 1 ||
      cfg.head_dim < 1 || cfg.backbone_widths.empty())
    throw InvalidConfigError("model config has non-positive dimensions");
  if (cfg.dropout_rate < 0.0 || cfg.dropout_rate >= 1.0)
    throw InvalidConfigError("dropout rate must lie in [0, 1)");
}

}  // namespace

SegModel make_skeleton(const ModelConfig& cfg) {
  SegModel m;
  m.cfg_ = cfg;
  return m;
}

SegModel SegModel::init(const ModelConfig& cfg, Rng& rng) {
  validate_config(cfg);
  SegModel m = make_skeleton(cfg);
  int in = cfg.input_dim;
  for (int width : cfg.backbone_widths) {
    m.backbone.push_back(init_affine(in, width, std::sqrt(2.0 / in), rng));
    in = width;
  }
  m.classifier = init_affine(in, cfg.class_count, std::sqrt(1.0 / in), rng);
  init_heads(m, cfg, rng);
  return m;
}

void SegModel::reinit_heads(Rng& rng) { init_heads(*this, cfg_, rng); }

void SegModel::set_dropout_rate(double rate) {
  if (rate < 0.0 || rate >= 1.0)
    throw InvalidConfigError("dropout rate must lie in [0, 1)");
  cfg_.dropout_rate = rate;
}

std::vector<SegModel::NamedTensor> SegModel::parameters() {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < backbone.size(); ++i) {
    std::string base = "backbone." + std::to_string(i);
    out.push_back({base + ".w", &backbone[i].w});
    out.push_back({base + ".b", &backbone[i].b});
  }
  out.push_back({"classifier.w", &classifier.w});
  out.push_back({"classifier.b", &classifier.b});
  auto head = [&out](const char* prefix, std::vector<HeadBlock>& blocks) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      std::string base = std::string(prefix) + "." + std::to_string(i);
      out.push_back({base + ".w", &blocks[i].lin.w});
      out.push_back({base + ".b", &blocks[i].lin.b});
      out.push_back({base + ".gamma", &blocks[i].bn.gamma});
      out.push_back({base + ".beta", &blocks[i].bn.beta});
    }
  };
  head("projection", projection);
  head("prediction", prediction);
  return out;
}

std::vector<SegModel::NamedTensor> SegModel::buffers() {
  std::vector<NamedTensor> out;
  auto head = [&out](const char* prefix, std::vector<HeadBlock>& blocks) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      std::string base = std::string(prefix) + "." + std::to_string(i);
      out.push_back({base + ".running_mean", &blocks[i].bn.running_mean});
      out.push_back({base + ".running_var", &blocks[i].bn.running_var});
    }
  };
  head("projection", projection);
  head("prediction", prediction);
  return out;
}

BoundModel::BoundModel(autodiff::Tape& tape, SegModel& model, bool training)
    : tape_(&tape), model_(&model), training_(training) {
  auto params = model.parameters();
  bound_.reserve(params.size());
  for (auto& p : params) bound_.push_back(tape.param(*p.value));
  std::size_t k = 0;
  for (std::size_t i = 0; i < model.backbone.size(); ++i) {
    BoundAffine a{bound_[k], bound_[k + 1]};
    k += 2;
    backbone_.push_back(a);
  }
  classifier_ = {bound_[k], bound_[k + 1]};
  k += 2;
  for (std::size_t i = 0; i < model.projection.size(); ++i) {
    proj_lin_.push_back({bound_[k], bound_[k + 1]});
    proj_bn_.push_back({bound_[k + 2], bound_[k + 3]});
    k += 4;
  }
  for (std::size_t i = 0; i < model.prediction.size(); ++i) {
    pred_lin_.push_back({bound_[k], bound_[k + 1]});
    pred_bn_.push_back({bound_[k + 2], bound_[k + 3]});
    k += 4;
  }
}

Tensor BoundModel::head_block(const Tensor& x, const BoundAffine& lin,
                              const BoundNorm& bn, const NormParams& stats) {
  Tensor h = autodiff::relu(autodiff::affine(x, lin.w, lin.b));
  if (training_) return autodiff::batch_norm_train(h, bn.gamma, bn.beta).y;
  return autodiff::batch_norm_eval(h, bn.gamma, bn.beta, stats.running_mean.row(0),
                                   stats.running_var.row(0));
}

ForwardResult BoundModel::forward(const Matrix& input, bool dropout_on,
                                  Rng* rng) {
  if (input.cols() != model_->config().input_dim)
    throw ShapeMismatchError("forward: unexpected input width");
  if (dropout_on && model_->config().dropout_rate > 0.0 && rng == nullptr)
    throw InvalidConfigError("forward: dropout requested without an rng");
  // dropout after every hidden layer, so stochastic passes sample genuinely
  // different sub-networks rather than just jittering the classifier input
  const bool drop = dropout_on && model_->config().dropout_rate > 0.0;
  Tensor x = tape_->constant(input);
  for (auto& layer : backbone_) {
    x = autodiff::relu(autodiff::affine(x, layer.w, layer.b));
    if (drop)
      x = autodiff::dropout(x, model_->config().dropout_rate, *rng, true);
  }
  ForwardResult out;
  out.features = x;
  out.logits = autodiff::affine(x, classifier_.w, classifier_.b);
  out.probs = autodiff::softmax_rows(out.logits);
  return out;
}

HeadResult BoundModel::heads(const Tensor& features) {
  Tensor x = features;
  for (std::size_t i = 0; i < proj_lin_.size(); ++i)
    x = head_block(x, proj_lin_[i], proj_bn_[i], model_->projection[i].bn);
  HeadResult out;
  out.z = x;
  for (std::size_t i = 0; i < pred_lin_.size(); ++i)
    x = head_block(x, pred_lin_[i], pred_bn_[i], model_->prediction[i].bn);
  out.q = x;
  return out;
}

std::vector<Matrix> BoundModel::grads() const {
  std::vector<Matrix> out;
  out.reserve(bound_.size());
  for (const auto& t : bound_) out.push_back(tape_->grad(t));
  return out;
}

PretrainReport pretrain_source(SegModel& model, const std::vector<Matrix>& inputs,
                               const std::vector<std::vector<int>>& labels,
                               const PretrainConfig& cfg, Rng& rng) {
  if (inputs.empty()) throw EmptyStreamError("pretrain_source: no frames");
  if (inputs.size() != labels.size())
    throw LabelCountMismatchError("pretrain_source: frames and labels differ");
  for (std::size_t i = 0; i < inputs.size(); ++i)
    if (inputs[i].rows() != static_cast<Eigen::Index>(labels[i].size()))
      throw LabelCountMismatchError(
          "pretrain_source: label count differs from points in frame " +
          std::to_string(i));
  if (cfg.epochs < 0) throw InvalidConfigError("pretrain_source: negative epochs");

  auto params = model.parameters();
  // only the segmentation path trains here; heads are adaptation-time objects
  const std::size_t seg_param_count = model.backbone.size() * 2 + 2;
  autodiff::OptimizerState opt;
  opt.weight_decay = cfg.weight_decay;
  PretrainReport report;
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    opt.learning_rate = cfg.learning_rate * std::pow(cfg.lr_decay, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t fi : order) {
      // class id c maps to logit column c-1; unlabelled points are skipped
      std::vector<int> targets(labels[fi].size());
      for (std::size_t i = 0; i < targets.size(); ++i)
        targets[i] = labels[fi][i] == geom::kUnlabelled ? -1 : labels[fi][i] - 1;
      autodiff::Tape tape;
      BoundModel bound(tape, model, /*training=*/true);
      ForwardResult fw = bound.forward(inputs[fi], /*dropout_on=*/true, &rng);
      Tensor loss = autodiff::cross_entropy_mean(fw.logits, targets, -1);
      total += loss.value()(0, 0);
      tape.backward(loss);
      auto grads = bound.grads();
      grads.resize(seg_param_count);
      std::vector<Matrix*> ptrs;
      ptrs.reserve(seg_param_count);
      for (std::size_t i = 0; i < seg_param_count; ++i)
        ptrs.push_back(params[i].value);
      autodiff::adam_step(ptrs, grads, opt);
    }
    report.epoch_loss.push_back(total / static_cast<double>(inputs.size()));
  }
  return report;
}

Matrix build_input_features(const geom::Frame& frame,
                            const descriptor::DescriptorField& desc) {
  const Eigen::Index n = frame.size();
  if (n == 0) throw EmptyFrameError("build_input_features: empty frame");
  if (desc.descriptors.rows() != n)
    throw FrameDescriptorMismatchError(
        "build_input_features: descriptor row count differs from frame");
  Eigen::RowVector3d centroid = frame.points.colwise().mean();
  std::vector<double> z(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i)
    z[static_cast<std::size_t>(i)] = frame.points(i, 2);
  std::sort(z.begin(), z.end());
  // ground level: 2nd percentile of z by the nearest-rank rule
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(0.02 * static_cast<double>(n)));
  rank = std::max<std::size_t>(rank, 1);
  const double ground = z[rank - 1];
  Matrix out(n, 4 + desc.descriptors.cols());
  out.leftCols<3>() = frame.points.rowwise() - centroid;
  out.col(3) = (frame.points.col(2).array() - ground).matrix();
  out.rightCols(desc.descriptors.cols()) = desc.descriptors;
  return out;
}

int feature_dim(const descriptor::DescriptorConfig& cfg) {
  return 4 + descriptor::descriptor_dim(cfg);
}

namespace {

void write_bytes(std::ofstream& os, const void* data, std::size_t n) {
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ofstream& os, T v) {
  write_bytes(os, &v, sizeof(T));
}

void write_matrix(std::ofstream& os, const std::string& name, const Matrix& m) {
  auto len = static_cast<std::uint16_t>(name.size());
  write_pod(os, len);
  write_bytes(os, name.data(), name.size());
  write_pod(os, static_cast<std::int64_t>(m.rows()));
  write_pod(os, static_cast<std::int64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) write_pod(os, m(i, j));
}

template <typename T>
T read_pod(std::ifstream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw MalformedFileError("checkpoint: unexpected end of file");
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const SegModel& model) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw MalformedFileError("checkpoint: cannot open " + path);
  write_bytes(os, kMagic, sizeof(kMagic));
  write_pod(os, kVersion);
  const ModelConfig& cfg = model.config();
  write_pod(os, static_cast<std::int32_t>(cfg.input_dim));
  write_pod(os, static_cast<std::uint32_t>(cfg.backbone_widths.size()));
  for (int w : cfg.backbone_widths) write_pod(os, static_cast<std::int32_t>(w));
  write_pod(os, static_cast<std::int32_t>(cfg.class_count));
  write_pod(os, static_cast<std::int32_t>(cfg.head_hidden));
  write_pod(os, static_cast<std::int32_t>(cfg.head_dim));
  write_pod(os, cfg.dropout_rate);
  SegModel& m = const_cast<SegModel&>(model);
  auto params = m.parameters();
  auto bufs = m.buffers();
  write_pod(os, static_cast<std::uint32_t>(params.size() + bufs.size()));
  for (auto& p : params) write_matrix(os, p.name, *p.value);
  for (auto& b : bufs) write_matrix(os, b.name, *b.value);
  if (!os) throw MalformedFileError("checkpoint: write failed for " + path);
}

SegModel load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw MalformedFileError("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw CheckpointMismatchError("checkpoint: bad magic in " + path);
  auto version = read_pod<std::uint32_t>(is);
  if (version != kVersion)
    throw CheckpointMismatchError("checkpoint: unsupported version");
  ModelConfig cfg;
  cfg.input_dim = read_pod<std::int32_t>(is);
  auto width_count = read_pod<std::uint32_t>(is);
  if (width_count == 0 || width_count > 64)
    throw CheckpointMismatchError("checkpoint: implausible backbone layout");
  cfg.backbone_widths.clear();
  for (std::uint32_t i = 0; i < width_count; ++i)
    cfg.backbone_widths.push_back(read_pod<std::int32_t>(is));
  cfg.class_count = read_pod<std::int32_t>(is);
  cfg.head_hidden = read_pod<std::int32_t>(is);
  cfg.head_dim = read_pod<std::int32_t>(is);
  cfg.dropout_rate = read_pod<double>(is);
  validate_config(cfg);

  Rng scratch(0);
  SegModel model = SegModel::init(cfg, scratch);
  auto params = model.parameters();
  auto bufs = model.buffers();
  std::vector<SegModel::NamedTensor> all;
  all.insert(all.end(), params.begin(), params.end());
  all.insert(all.end(), bufs.begin(), bufs.end());

  auto count = read_pod<std::uint32_t>(is);
  if (count != all.size())
    throw CheckpointMismatchError("checkpoint: tensor count mismatch");
  std::vector<bool> seen(all.size(), false);
  for (std::uint32_t t = 0; t < count; ++t) {
    auto len = read_pod<std::uint16_t>(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) throw MalformedFileError("checkpoint: unexpected end of file");
    auto rows = read_pod<std::int64_t>(is);
    auto cols = read_pod<std::int64_t>(is);
    std::size_t slot = all.size();
    for (std::size_t i = 0; i < all.size(); ++i)
      if (all[i].name == name) {
        slot = i;
        break;
      }
    if (slot == all.size())
      throw CheckpointMismatchError("checkpoint: unknown tensor " + name);
    if (seen[slot])
      throw CheckpointMismatchError("checkpoint: duplicate tensor " + name);
    Matrix& dst = *all[slot].value;
    if (rows != dst.rows() || cols != dst.cols())
      throw CheckpointMismatchError("checkpoint: shape mismatch for " + name);
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < cols; ++j) dst(i, j) = read_pod<double>(is);
    seen[slot] = true;
  }
  return model;
}

}  // namespace streamseg::segnet
