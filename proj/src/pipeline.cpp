#include "streamseg/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

namespace streamseg::pipeline {

using autodiff::Matrix;
using autodiff::Tensor;

const char* ablation_name(Ablation a) {
  switch (a) {
    case Ablation::kA: return "A";
    case Ablation::kAT: return "AT";
    case Ablation::kATP: return "ATP";
  }
  return "?";
}

const char* selector_name(Selector s) {
  switch (s) {
    case Selector::kUncertainty: return "uncertainty";
    case Selector::kConfidence: return "confidence";
    case Selector::kCentroid: return "centroid";
  }
  return "?";
}

Ablation parse_ablation(const std::string& s) {
  if (s == "A") return Ablation::kA;
  if (s == "AT" || s == "A+T") return Ablation::kAT;
  if (s == "ATP" || s == "A+T+P") return Ablation::kATP;
  throw InvalidConfigError("unknown ablation mode '" + s + "'");
}

Selector parse_selector(const std::string& s) {
  if (s == "uncertainty") return Selector::kUncertainty;
  if (s == "confidence") return Selector::kConfidence;
  if (s == "centroid") return Selector::kCentroid;
  throw InvalidConfigError("unknown selector '" + s + "'");
}

void RunConfig::validate() const {
  if (mc_passes < 1) throw InvalidConfigError("mc_passes must be >= 1");
  if (percentile <= 0.0 || percentile >= 100.0)
    throw InvalidConfigError("percentile must lie in (0, 100)");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0)
    throw InvalidConfigError("dropout_rate must lie in [0, 1)");
  if (k_neighbors < 1) throw InvalidConfigError("k_neighbors must be >= 1");
  if (frame_gap < 1) throw InvalidConfigError("frame_gap must be >= 1");
  if (tau <= 0.0) throw InvalidConfigError("tau must be positive");
  if (learning_rate <= 0.0) throw InvalidConfigError("learning_rate must be positive");
  if (weight_decay < 0.0) throw InvalidConfigError("weight_decay must be >= 0");
  if (steps_per_frame < 0) throw InvalidConfigError("steps_per_frame must be >= 0");
  if (!scan_dir.empty() && pose_file.empty())
    throw InvalidConfigError("file streams need a pose file");
  if (scan_dir.empty()) scene.validate();
}

namespace {

using KeySet = std::set<std::string>;

template <typename T>
void take(const nlohmann::json& j, KeySet& seen, const char* key, T& out) {
  seen.insert(key);
  if (j.contains(key)) out = j.at(key).get<T>();
}

void assert_known(const nlohmann::json& j, const KeySet& seen, const char* ctx) {
  if (!j.is_object()) throw InvalidConfigError(std::string(ctx) + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!seen.count(it.key()))
      throw InvalidConfigError(std::string(ctx) + ": unknown key '" + it.key() + "'");
}

stream::SceneConfig scene_from_json(const nlohmann::json& j) {
  stream::SceneConfig s;
  KeySet seen;
  take(j, seen, "rings", s.rings);
  take(j, seen, "azimuth_steps", s.azimuth_steps);
  take(j, seen, "elevation_min_deg", s.elevation_min_deg);
  take(j, seen, "elevation_max_deg", s.elevation_max_deg);
  take(j, seen, "min_range", s.min_range);
  take(j, seen, "max_range", s.max_range);
  take(j, seen, "sensor_height", s.sensor_height);
  take(j, seen, "points_per_frame", s.points_per_frame);
  take(j, seen, "frames", s.frames);
  take(j, seen, "speed", s.speed);
  take(j, seen, "seed", s.seed);
  take(j, seen, "road_half_width", s.road_half_width);
  take(j, seen, "sidewalk_half_width", s.sidewalk_half_width);
  take(j, seen, "sidewalk_height", s.sidewalk_height);
  take(j, seen, "terrain_amplitude", s.terrain_amplitude);
  take(j, seen, "world_length", s.world_length);
  take(j, seen, "vehicle_count", s.vehicle_count);
  take(j, seen, "pedestrian_count", s.pedestrian_count);
  take(j, seen, "wall_count", s.wall_count);
  take(j, seen, "vegetation_count", s.vegetation_count);
  take(j, seen, "unlabelled_fraction", s.unlabelled_fraction);
  take(j, seen, "noise_sigma", s.noise_sigma);
  take(j, seen, "point_dropout", s.point_dropout);
  take(j, seen, "vehicle_frequency", s.vehicle_frequency);
  take(j, seen, "pedestrian_frequency", s.pedestrian_frequency);
  take(j, seen, "wall_frequency", s.wall_frequency);
  take(j, seen, "vegetation_frequency", s.vegetation_frequency);
  assert_known(j, seen, "scene");
  return s;
}

nlohmann::json scene_to_json(const stream::SceneConfig& s) {
  return {{"rings", s.rings},
          {"azimuth_steps", s.azimuth_steps},
          {"elevation_min_deg", s.elevation_min_deg},
          {"elevation_max_deg", s.elevation_max_deg},
          {"min_range", s.min_range},
          {"max_range", s.max_range},
          {"sensor_height", s.sensor_height},
          {"points_per_frame", s.points_per_frame},
          {"frames", s.frames},
          {"speed", s.speed},
          {"seed", s.seed},
          {"road_half_width", s.road_half_width},
          {"sidewalk_half_width", s.sidewalk_half_width},
          {"sidewalk_height", s.sidewalk_height},
          {"terrain_amplitude", s.terrain_amplitude},
          {"world_length", s.world_length},
          {"vehicle_count", s.vehicle_count},
          {"pedestrian_count", s.pedestrian_count},
          {"wall_count", s.wall_count},
          {"vegetation_count", s.vegetation_count},
          {"unlabelled_fraction", s.unlabelled_fraction},
          {"noise_sigma", s.noise_sigma},
          {"point_dropout", s.point_dropout},
          {"vehicle_frequency", s.vehicle_frequency},
          {"pedestrian_frequency", s.pedestrian_frequency},
          {"wall_frequency", s.wall_frequency},
          {"vegetation_frequency", s.vegetation_frequency}};
}

}  // namespace

RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  KeySet seen;
  take(j, seen, "mc_passes", c.mc_passes);
  take(j, seen, "percentile", c.percentile);
  take(j, seen, "dropout_rate", c.dropout_rate);
  take(j, seen, "k_neighbors", c.k_neighbors);
  take(j, seen, "frame_gap", c.frame_gap);
  take(j, seen, "tau", c.tau);
  take(j, seen, "learning_rate", c.learning_rate);
  take(j, seen, "weight_decay", c.weight_decay);
  take(j, seen, "steps_per_frame", c.steps_per_frame);
  take(j, seen, "adapt_before_gap", c.adapt_before_gap);
  take(j, seen, "seed", c.seed);
  take(j, seen, "output_dir", c.output_dir);
  take(j, seen, "scan_dir", c.scan_dir);
  take(j, seen, "label_dir", c.label_dir);
  take(j, seen, "pose_file", c.pose_file);
  take(j, seen, "class_map_file", c.class_map_file);

  std::string ablation, selector, umode;
  take(j, seen, "ablation", ablation);
  take(j, seen, "selector", selector);
  take(j, seen, "uncertainty_mode", umode);
  if (!ablation.empty()) c.ablation = parse_ablation(ablation);
  if (!selector.empty()) c.selector = parse_selector(selector);
  if (!umode.empty()) {
    if (umode == "dropout_variance")
      c.uncertainty_mode = selection::UncertaintyMode::kDropoutVariance;
    else if (umode == "class_variance")
      c.uncertainty_mode = selection::UncertaintyMode::kClassVariance;
    else
      throw InvalidConfigError("unknown uncertainty_mode '" + umode + "'");
  }

  seen.insert("scene");
  if (j.contains("scene")) c.scene = scene_from_json(j.at("scene"));
  seen.insert("descriptor");
  if (j.contains("descriptor")) {
    const auto& d = j.at("descriptor");
    KeySet ds;
    take(d, ds, "normal_k", c.descriptor.normal_k);
    take(d, ds, "radius", c.descriptor.radius);
    take(d, ds, "bins_per_feature", c.descriptor.bins_per_feature);
    take(d, ds, "max_neighbors", c.descriptor.max_neighbors);
    assert_known(d, ds, "descriptor");
  }
  seen.insert("propagation");
  if (j.contains("propagation")) {
    const auto& p = j.at("propagation");
    KeySet ps;
    take(p, ps, "exclude_seeds_as_targets", c.propagation.exclude_seeds_as_targets);
    take(p, ps, "normalize_descriptors", c.propagation.normalize_descriptors);
    assert_known(p, ps, "propagation");
  }
  seen.insert("pretrain");
  if (j.contains("pretrain")) {
    const auto& p = j.at("pretrain");
    KeySet ps;
    take(p, ps, "epochs", c.pretrain.epochs);
    take(p, ps, "learning_rate", c.pretrain.learning_rate);
    take(p, ps, "lr_decay", c.pretrain.lr_decay);
    take(p, ps, "weight_decay", c.pretrain.weight_decay);
    take(p, ps, "head_epochs", c.pretrain.head_epochs);
    take(p, ps, "head_learning_rate", c.pretrain.head_learning_rate);
    assert_known(p, ps, "pretrain");
  }
  assert_known(j, seen, "config");
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw MalformedFileError("config: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw MalformedFileError("config: " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j{{"mc_passes", c.mc_passes},
                   {"percentile", c.percentile},
                   {"dropout_rate", c.dropout_rate},
                   {"k_neighbors", c.k_neighbors},
                   {"frame_gap", c.frame_gap},
                   {"tau", c.tau},
                   {"learning_rate", c.learning_rate},
                   {"weight_decay", c.weight_decay},
                   {"steps_per_frame", c.steps_per_frame},
                   {"adapt_before_gap", c.adapt_before_gap},
                   {"ablation", ablation_name(c.ablation)},
                   {"selector", selector_name(c.selector)},
                   {"uncertainty_mode",
                    c.uncertainty_mode == selection::UncertaintyMode::kDropoutVariance
                        ? "dropout_variance"
                        : "class_variance"},
                   {"seed", c.seed},
                   {"output_dir", c.output_dir},
                   {"scan_dir", c.scan_dir},
                   {"label_dir", c.label_dir},
                   {"pose_file", c.pose_file},
                   {"class_map_file", c.class_map_file}};
  j["scene"] = scene_to_json(c.scene);
  j["descriptor"] = {{"normal_k", c.descriptor.normal_k},
                     {"radius", c.descriptor.radius},
                     {"bins_per_feature", c.descriptor.bins_per_feature},
                     {"max_neighbors", c.descriptor.max_neighbors}};
  j["propagation"] = {{"exclude_seeds_as_targets", c.propagation.exclude_seeds_as_targets},
                      {"normalize_descriptors", c.propagation.normalize_descriptors}};
  j["pretrain"] = {{"epochs", c.pretrain.epochs},
                   {"learning_rate", c.pretrain.learning_rate},
                   {"lr_decay", c.pretrain.lr_decay},
                   {"weight_decay", c.pretrain.weight_decay},
                   {"head_epochs", c.pretrain.head_epochs},
                   {"head_learning_rate", c.pretrain.head_learning_rate}};
  return j;
}

namespace {

class GeneratorStream : public FrameStream {
 public:
  explicit GeneratorStream(const stream::SceneConfig& cfg) : gen_(cfg) {}
  int size() const override { return gen_.frame_count(); }
  geom::Frame frame(int t) override { return gen_.frame_at(t); }

 private:
  stream::Generator gen_;
};

class KittiStream : public FrameStream {
 public:
  explicit KittiStream(const RunConfig& cfg)
      : scan_dir_(cfg.scan_dir), label_dir_(cfg.label_dir) {
    poses_ = stream::load_poses(cfg.pose_file);
    if (poses_.empty()) throw EmptyStreamError("pose file lists no frames");
    map_ = cfg.class_map_file.empty() ? stream::ClassMap::identity()
                                      : stream::load_class_map(cfg.class_map_file);
  }
  int size() const override { return static_cast<int>(poses_.size()); }
  geom::Frame frame(int t) override {
    if (t < 0 || t >= size()) throw InvalidConfigError("frame index outside stream");
    char name[16];
    std::snprintf(name, sizeof(name), "%06d", t);
    const std::string scan = scan_dir_ + "/" + name + ".bin";
    const std::string label =
        label_dir_.empty() ? "" : label_dir_ + "/" + name + ".label";
    geom::Frame f = stream::load_kitti_frame(scan, label, map_);
    f.frame_id = t;
    f.pose = poses_[static_cast<std::size_t>(t)];
    return f;
  }

 private:
  std::string scan_dir_, label_dir_;
  std::vector<geom::RigidTransform> poses_;
  stream::ClassMap map_;
};

}  // namespace

std::unique_ptr<FrameStream> open_stream(const RunConfig& cfg) {
  if (cfg.scan_dir.empty())
    return std::make_unique<GeneratorStream>(cfg.scene);
  return std::make_unique<KittiStream>(cfg);
}

std::uint64_t model_checksum(segnet::SegModel& model) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& named : model.parameters()) {
    h = fnv1a(named.name.data(), named.name.size(), h);
    h = fnv1a(named.value->data(),
              sizeof(double) * static_cast<std::size_t>(named.value->size()), h);
  }
  return h;
}

namespace {

std::uint64_t prediction_hash(const std::vector<int>& pred) {
  return fnv1a(pred.data(), pred.size() * sizeof(int));
}

struct Scored {
  std::vector<int> pred;  // class ids 1..C
  Matrix features;        // backbone output, eval mode
  Matrix probs;           // deterministic softmax, eval mode
  double miou = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd per_class;
};

Scored score_frame(segnet::SegModel& model, const Matrix& input,
                   const geom::Frame& frame) {
  autodiff::Tape tape(false);
  segnet::BoundModel bound(tape, model, /*training=*/false);
  auto fwd = bound.forward(input);
  const Matrix probs = fwd.probs.value();
  Scored out;
  out.features = fwd.features.value();
  out.probs = probs;
  out.pred.resize(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    probs.row(i).maxCoeff(&best);
    out.pred[static_cast<std::size_t>(i)] = static_cast<int>(best) + 1;
  }
  out.per_class = Eigen::VectorXd::Constant(
      geom::kClassCount, std::numeric_limits<double>::quiet_NaN());
  bool any_gt = false;
  if (frame.has_labels())
    for (int l : frame.labels)
      if (l != geom::kUnlabelled) {
        any_gt = true;
        break;
      }
  if (any_gt) {
    evalkit::ConfusionMatrix cm;
    cm.add(frame.labels, out.pred);
    const auto rep = evalkit::iou(cm);
    out.miou = rep.miou;
    out.per_class = rep.per_class;
  }
  return out;
}

double mean_defined(const std::vector<evalkit::MetricRecord>& records,
                    double evalkit::MetricRecord::* field) {
  double s = 0.0;
  long n = 0;
  for (const auto& r : records) {
    const double v = r.*field;
    if (!std::isnan(v)) {
      s += v;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN() : s / n;
}

}  // namespace

AdaptationResult run_adaptation(const RunConfig& cfg,
                                const segnet::SegModel& source,
                                FrameStream& stream) {
  cfg.validate();
  const int total = stream.size();
  if (total < cfg.frame_gap + 1)
    throw StreamTooShortError("stream of " + std::to_string(total) +
                              " frames cannot support frame gap " +
                              std::to_string(cfg.frame_gap));
  if (source.config().input_dim != segnet::feature_dim(cfg.descriptor))
    throw CheckpointMismatchError(
        "checkpoint expects input width " +
        std::to_string(source.config().input_dim) + ", descriptors yield " +
        std::to_string(segnet::feature_dim(cfg.descriptor)));
  if (source.config().class_count != geom::kClassCount)
    throw CheckpointMismatchError("checkpoint class count differs from label set");

  segnet::SegModel frozen = source;
  segnet::SegModel adapted = source;
  adapted.set_dropout_rate(cfg.dropout_rate);
  Rng rng_adapt(split_seed(cfg.seed, 2));

  AdaptationResult res;
  res.frozen_checksum_before = model_checksum(frozen);

  auto desc_fn = descriptor::make_default_descriptor(cfg.descriptor);
  propagation::PropagationConfig prop = cfg.propagation;
  prop.k = cfg.k_neighbors;

  autodiff::OptimizerState opt;
  opt.learning_rate = cfg.learning_rate;
  opt.weight_decay = cfg.weight_decay;

  struct Past {
    geom::Frame frame;
    Matrix input;
  };
  std::deque<Past> window;

  for (int t = 0; t < total; ++t) {
    const auto started = std::chrono::steady_clock::now();
    geom::Frame frame = stream.frame(t);
    res.log.record(t, "pull");
    const auto desc = desc_fn(frame);
    const Matrix input = segnet::build_input_features(frame, desc);

    // score with the model adapted through frame t-1, before any update
    Scored scored = score_frame(adapted, input, frame);
    res.log.record(t, "predict", prediction_hash(scored.pred));
    Scored baseline = score_frame(frozen, input, frame);
    res.log.record(t, "frozen_predict", prediction_hash(baseline.pred));

    evalkit::MetricRecord rec;
    rec.frame_id = t;
    rec.miou = scored.miou;
    rec.frozen_miou = baseline.miou;
    rec.improvement = scored.miou - baseline.miou;
    rec.per_class_iou = scored.per_class;
    rec.thresholds = Eigen::VectorXd::Constant(
        geom::kClassCount, std::numeric_limits<double>::quiet_NaN());

    const bool has_gap = t >= cfg.frame_gap;
    if (cfg.steps_per_frame > 0 && (has_gap || cfg.adapt_before_gap)) {
      auto mc = selection::mc_mean_distribution(adapted, input, cfg.mc_passes,
                                                rng_adapt);
      const Eigen::VectorXd nu =
          selection::uncertainty_index(mc, cfg.uncertainty_mode);
      const std::vector<int> predicted = selection::predicted_classes(mc.mean);
      const Eigen::VectorXd lambda = selection::per_class_thresholds(
          nu, predicted, cfg.percentile, geom::kClassCount);
      rec.thresholds = lambda;

      selection::PseudoLabelSet pseudo;
      switch (cfg.selector) {
        case Selector::kUncertainty:
          pseudo = selection::select_seeds(mc.mean, nu, lambda, cfg.percentile);
          break;
        case Selector::kConfidence:
          pseudo = selection::confidence_select(mc.mean, cfg.percentile);
          break;
        case Selector::kCentroid:
          pseudo = selection::centroid_select(scored.features, mc.mean,
                                              cfg.percentile);
          break;
      }
      if (cfg.ablation == Ablation::kATP && !pseudo.empty())
        pseudo = propagation::propagate(pseudo, desc, prop);
      rec.seed_count = pseudo.count(selection::Provenance::kSeed);
      rec.propagated_count = pseudo.count(selection::Provenance::kPropagated);

      objective::CorrespondenceSet corr;
      const Past* past = nullptr;
      if (cfg.ablation != Ablation::kA && has_gap) {
        past = &window.front();  // exactly frame t - w here
        const geom::RigidTransform rel =
            frame.pose.inverse().compose(past->frame.pose);
        corr = objective::find_correspondences(frame, past->frame, rel, cfg.tau);
        corr.frame_gap = cfg.frame_gap;
        rec.correspondence_count = static_cast<long>(corr.size());
      }

      for (int s = 0; s < cfg.steps_per_frame; ++s) {
        autodiff::Tape tape;
        segnet::BoundModel bound(tape, adapted, /*training=*/true);
        // the update runs in train mode, dropout included: each step fits a
        // sampled sub-network, which keeps the sparse dice term from pinning
        // the handful of seed points and then feeding noise to the optimizer
        auto fwd = bound.forward(input, /*dropout_on=*/true, &rng_adapt);

        Tensor loss;
        bool have_loss = false;
        if (!pseudo.empty()) {
          Tensor dice = objective::soft_dice_loss(fwd.logits, pseudo);
          if (s == 0) rec.dice_loss = dice.value()(0, 0);
          loss = dice;
          have_loss = true;
        } else if (s == 0) {
          warn("frame " + std::to_string(t) +
               ": empty pseudo-label set, segmentation loss skipped");
        }
        if (past != nullptr && !corr.empty()) {
          // consistency compares representations of the same world points at
          // two times; both forwards run clean so the loss tracks the scene,
          // not the dropout masks
          auto fwd_curr = bound.forward(input, /*dropout_on=*/false);
          auto fwd_prev = bound.forward(past->input, /*dropout_on=*/false);
          auto heads_t = bound.heads(fwd_curr.features);
          auto heads_p = bound.heads(fwd_prev.features);
          Tensor reg = objective::temporal_loss(heads_t.q, heads_t.z,
                                                heads_p.q, heads_p.z, corr);
          if (s == 0) rec.reg_loss = reg.value()(0, 0);
          loss = have_loss ? objective::total_loss(loss, reg) : reg;
          have_loss = true;
        } else if (past != nullptr && s == 0) {
          warn("frame " + std::to_string(t) +
               ": empty correspondence set, consistency loss skipped");
        }
        if (!have_loss) {
          if (s == 0) res.log.record(t, "skip");
          break;
        }
        tape.backward(loss);
        const std::vector<Matrix> grads = bound.grads();
        auto named = adapted.parameters();
        std::vector<Matrix*> params;
        params.reserve(named.size());
        for (auto& p : named) params.push_back(p.value);
        autodiff::adam_step(params, grads, opt);
        res.log.record(t, "update", static_cast<std::uint64_t>(s));
      }
    }

    rec.wall_clock_ms =
        std::chrono::duration<double, std::milli>(
            std::chrono::steady_clock::now() - started)
            .count();
    res.records.push_back(std::move(rec));

    window.push_back({std::move(frame), input});
    if (static_cast<int>(window.size()) > cfg.frame_gap) window.pop_front();
  }

  res.frozen_checksum_after = model_checksum(frozen);
  if (res.frozen_checksum_after != res.frozen_checksum_before)
    throw Error("frozen baseline parameters were mutated during the run");
  res.mean_miou = mean_defined(res.records, &evalkit::MetricRecord::miou);
  res.mean_frozen_miou =
      mean_defined(res.records, &evalkit::MetricRecord::frozen_miou);
  res.mean_improvement =
      mean_defined(res.records, &evalkit::MetricRecord::improvement);
  res.final_model = std::move(adapted);
  return res;
}

AdaptationResult run_adaptation(const RunConfig& cfg,
                                const segnet::SegModel& source) {
  auto stream = open_stream(cfg);
  return run_adaptation(cfg, source, *stream);
}

AdaptationResult run_ablation(const RunConfig& cfg,
                              const segnet::SegModel& source, Ablation mode) {
  RunConfig c = cfg;
  c.ablation = mode;
  return run_adaptation(c, source);
}

OracleStudy run_oracle_study(const RunConfig& cfg,
                             const segnet::SegModel& source,
                             FrameStream& stream) {
  cfg.validate();
  segnet::SegModel model = source;
  model.set_dropout_rate(cfg.dropout_rate);
  Rng rng(split_seed(cfg.seed, 3));
  auto desc_fn = descriptor::make_default_descriptor(cfg.descriptor);
  propagation::PropagationConfig prop = cfg.propagation;
  prop.k = cfg.k_neighbors;

  OracleStudy study;
  const int total = stream.size();
  for (int t = 0; t < total; ++t) {
    geom::Frame frame = stream.frame(t);
    if (!frame.has_labels())
      throw NoGroundTruthError("oracle study needs labelled frames, frame " +
                               std::to_string(t) + " has no labels");
    const auto desc = desc_fn(frame);
    const Matrix input = segnet::build_input_features(frame, desc);

    Scored scored = score_frame(model, input, frame);
    auto mc = selection::mc_mean_distribution(model, input, cfg.mc_passes, rng);
    const Eigen::VectorXd nu = selection::uncertainty_index(mc, cfg.uncertainty_mode);
    const std::vector<int> predicted = selection::predicted_classes(mc.mean);
    const Eigen::VectorXd lambda = selection::per_class_thresholds(
        nu, predicted, cfg.percentile, geom::kClassCount);

    // the confidence and centroid baselines rank deterministic inference
    // outputs, as in the methods they stand in for; only the uncertainty
    // selector sees the stochastic passes
    const std::array<selection::PseudoLabelSet, 3> seed_sets = {
        selection::select_seeds(mc.mean, nu, lambda, cfg.percentile),
        selection::confidence_select(scored.probs, cfg.percentile),
        selection::centroid_select(scored.features, scored.probs,
                                   cfg.percentile)};
    for (std::size_t s = 0; s < seed_sets.size(); ++s) {
      if (seed_sets[s].empty()) continue;
      const auto expanded = propagation::propagate(seed_sets[s], desc, prop);
      study.top1[s] += evalkit::pseudo_label_tally(expanded, frame.labels, 1);
      study.top10[s] += evalkit::pseudo_label_tally(expanded, frame.labels, 10);
    }
  }
  return study;
}

OracleStudy run_oracle_study(const RunConfig& cfg,
                             const segnet::SegModel& source) {
  auto stream = open_stream(cfg);
  return run_oracle_study(cfg, source, *stream);
}

std::vector<SweepRow> run_sweep(const RunConfig& cfg,
                                const segnet::SegModel& source,
                                const std::string& parameter,
                                const std::vector<double>& values) {
  if (values.empty()) throw InvalidConfigError("sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (double v : values) {
    RunConfig c = cfg;
    if (parameter == "K")
      c.k_neighbors = static_cast<int>(std::lround(v));
    else if (parameter == "w")
      c.frame_gap = static_cast<int>(std::lround(v));
    else
      throw InvalidConfigError("sweep parameter must be K or w, got '" +
                               parameter + "'");
    const AdaptationResult res = run_adaptation(c, source);
    rows.push_back({v, res.mean_miou, res.mean_frozen_miou, res.mean_improvement});
  }
  return rows;
}

void write_sweep_csv(const std::string& path, const std::string& parameter,
                     const std::vector<SweepRow>& rows) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw MalformedFileError("sweep csv: cannot open " + path);
  os << parameter << ",mean_miou,mean_frozen_miou,mean_improvement\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%g,%.9f,%.9f,%.9f\n", r.value, r.mean_miou,
                  r.mean_frozen_miou, r.mean_improvement);
    os << buf;
  }
  if (!os) throw MalformedFileError("sweep csv: write failed for " + path);
}

namespace {

// Trains only the projection/prediction heads with the temporal objective on
// consecutive source frames; the segmentation path stays fixed.
void warmup_heads(segnet::SegModel& model, const std::vector<geom::Frame>& frames,
                  const std::vector<Matrix>& inputs, const RunConfig& cfg,
                  Rng& rng) {
  if (cfg.pretrain.head_epochs <= 0 || frames.size() < 2) return;
  const std::size_t seg_param_count = model.backbone.size() * 2 + 2;
  autodiff::OptimizerState opt;
  opt.learning_rate = cfg.pretrain.head_learning_rate;
  opt.weight_decay = cfg.pretrain.weight_decay;

  std::vector<std::size_t> order(frames.size() - 1);
  std::iota(order.begin(), order.end(), 1);
  for (int epoch = 0; epoch < cfg.pretrain.head_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t t : order) {
      const geom::RigidTransform rel =
          frames[t].pose.inverse().compose(frames[t - 1].pose);
      const auto corr =
          objective::find_correspondences(frames[t], frames[t - 1], rel, cfg.tau);
      if (corr.empty()) continue;
      autodiff::Tape tape;
      segnet::BoundModel bound(tape, model, /*training=*/true);
      auto fwd_t = bound.forward(inputs[t], /*dropout_on=*/false);
      auto fwd_p = bound.forward(inputs[t - 1], /*dropout_on=*/false);
      auto heads_t = bound.heads(fwd_t.features);
      auto heads_p = bound.heads(fwd_p.features);
      Tensor loss = objective::temporal_loss(heads_t.q, heads_t.z, heads_p.q,
                                             heads_p.z, corr);
      tape.backward(loss);
      auto grads = bound.grads();
      auto named = model.parameters();
      std::vector<Matrix*> params;
      std::vector<Matrix> head_grads;
      params.reserve(named.size() - seg_param_count);
      head_grads.reserve(named.size() - seg_param_count);
      for (std::size_t i = seg_param_count; i < named.size(); ++i) {
        params.push_back(named[i].value);
        head_grads.push_back(grads[i]);
      }
      autodiff::adam_step(params, head_grads, opt);
    }
  }
}

}  // namespace

PretrainOutput pretrain_from_config(const RunConfig& cfg) {
  cfg.validate();
  auto stream = open_stream(cfg);
  const int total = stream->size();
  if (total < 1) throw EmptyStreamError("pretraining stream is empty");

  auto desc_fn = descriptor::make_default_descriptor(cfg.descriptor);
  std::vector<geom::Frame> frames;
  std::vector<Matrix> inputs;
  std::vector<std::vector<int>> labels;
  frames.reserve(static_cast<std::size_t>(total));
  inputs.reserve(static_cast<std::size_t>(total));
  for (int t = 0; t < total; ++t) {
    geom::Frame frame = stream->frame(t);
    if (!frame.has_labels())
      throw NoGroundTruthError("pretraining needs labels, frame " +
                               std::to_string(t) + " has none");
    const auto desc = desc_fn(frame);
    inputs.push_back(segnet::build_input_features(frame, desc));
    labels.push_back(frame.labels);
    frames.push_back(std::move(frame));
  }

  segnet::ModelConfig mc;
  mc.input_dim = segnet::feature_dim(cfg.descriptor);
  mc.dropout_rate = cfg.dropout_rate;
  Rng rng(split_seed(cfg.seed, 0));
  PretrainOutput out{segnet::SegModel::init(mc, rng), {}};
  out.report = segnet::pretrain_source(out.model, inputs, labels, cfg.pretrain, rng);
  warmup_heads(out.model, frames, inputs, cfg, rng);
  return out;
}

}  // namespace streamseg::pipeline
