#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "streamseg/descriptor.hpp"
#include "streamseg/evalkit.hpp"
#include "streamseg/objective.hpp"
#include "streamseg/propagation.hpp"
#include "streamseg/segnet.hpp"
#include "streamseg/selection.hpp"
#include "streamseg/stream.hpp"

namespace streamseg::pipeline {

enum class Ablation { kA, kAT, kATP };
enum class Selector { kUncertainty, kConfidence, kCentroid };

const char* ablation_name(Ablation a);
const char* selector_name(Selector s);
Ablation parse_ablation(const std::string& s);  // "A", "AT"/"A+T", "ATP"/"A+T+P"
Selector parse_selector(const std::string& s);

struct RunConfig {
  int mc_passes = 5;        // dropout forward passes per frame
  double percentile = 1.0;  // per-class selection percentile
  double dropout_rate = 0.5;
  int k_neighbors = 10;  // propagation fan-out per seed
  int frame_gap = 5;     // temporal window w
  double tau = 0.3;      // correspondence radius, meters
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  int steps_per_frame = 1;
  bool adapt_before_gap = false;  // Dice-only updates while t < w
  Ablation ablation = Ablation::kATP;
  Selector selector = Selector::kUncertainty;
  selection::UncertaintyMode uncertainty_mode =
      selection::UncertaintyMode::kDropoutVariance;
  propagation::PropagationConfig propagation;  // k is overridden by k_neighbors
  descriptor::DescriptorConfig descriptor;
  segnet::PretrainConfig pretrain;
  unsigned long long seed = 0;

  // stream source: generator scene by default, KITTI-format files when
  // scan_dir is set (poses required; labels optional)
  stream::SceneConfig scene;
  std::string scan_dir;
  std::string label_dir;
  std::string pose_file;
  std::string class_map_file;

  std::string output_dir;

  void validate() const;
};

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);  // summary echo

// Pull-based frame source; the adaptation loop only ever asks for t in
// ascending order, which the instrumentation below asserts.
class FrameStream {
 public:
  virtual ~FrameStream() = default;
  virtual int size() const = 0;
  virtual geom::Frame frame(int t) = 0;
};

std::unique_ptr<FrameStream> open_stream(const RunConfig& cfg);

struct Event {
  int frame_id = 0;
  std::string kind;  // "pull", "predict", "frozen_predict", "update", "skip"
  std::uint64_t hash = 0;
};

struct EventLog {
  std::vector<Event> events;
  void record(int frame_id, std::string kind, std::uint64_t hash = 0) {
    events.push_back({frame_id, std::move(kind), hash});
  }
};

std::uint64_t model_checksum(segnet::SegModel& model);

struct AdaptationResult {
  std::vector<evalkit::MetricRecord> records;
  segnet::SegModel final_model;
  EventLog log;
  double mean_miou = 0.0;
  double mean_frozen_miou = 0.0;
  double mean_improvement = 0.0;
  std::uint64_t frozen_checksum_before = 0;
  std::uint64_t frozen_checksum_after = 0;
};

// The online loop: per frame, score with the adapted model, score the frozen
// source baseline, then (t >= w) select seeds, propagate, match against the
// frame w steps back and take optimizer steps on Dice + temporal consistency.
AdaptationResult run_adaptation(const RunConfig& cfg,
                                const segnet::SegModel& source);
AdaptationResult run_adaptation(const RunConfig& cfg,
                                const segnet::SegModel& source,
                                FrameStream& stream);

AdaptationResult run_ablation(const RunConfig& cfg,
                              const segnet::SegModel& source, Ablation mode);

struct OracleStudy {
  // indexed by Selector; accuracies of pseudo-labels from the frozen source
  std::array<evalkit::LabelTally, 3> top1;
  std::array<evalkit::LabelTally, 3> top10;
};

OracleStudy run_oracle_study(const RunConfig& cfg,
                             const segnet::SegModel& source);
OracleStudy run_oracle_study(const RunConfig& cfg,
                             const segnet::SegModel& source,
                             FrameStream& stream);

struct SweepRow {
  double value = 0.0;
  double mean_miou = 0.0;
  double mean_frozen_miou = 0.0;
  double mean_improvement = 0.0;
};

std::vector<SweepRow> run_sweep(const RunConfig& cfg,
                                const segnet::SegModel& source,
                                const std::string& parameter,  // "K" or "w"
                                const std::vector<double>& values);
void write_sweep_csv(const std::string& path, const std::string& parameter,
                     const std::vector<SweepRow>& rows);

struct PretrainOutput {
  segnet::SegModel model;
  segnet::PretrainReport report;
};

// Supervised source training on the configured stream.
PretrainOutput pretrain_from_config(const RunConfig& cfg);

}  // namespace streamseg::pipeline
