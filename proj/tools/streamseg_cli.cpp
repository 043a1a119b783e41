// Command-line front end: pretraining, online adaptation, ablations, the
// selector study and K/w sweeps.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "streamseg/pipeline.hpp"

namespace ss = streamseg;
namespace fs = std::filesystem;

namespace {

struct Overrides {
  CLI::App* cmd = nullptr;
  std::string config_path;
  unsigned long long seed = 0;
  int mc_passes = 0, k = 0, w = 0, steps = 0, frames = 0;
  double percentile = 0, tau = 0, lr = 0, dropout = 0;

  void attach(CLI::App* app, bool seed_required) {
    cmd = app;
    app->add_option("--config", config_path, "JSON run configuration")
        ->required()
        ->check(CLI::ExistingFile);
    auto* s = app->add_option("--seed", seed, "run seed (also seeds the scene)");
    if (seed_required) s->required();
    app->add_option("--mc-passes", mc_passes, "dropout passes per frame");
    app->add_option("--percentile", percentile, "per-class selection percentile");
    app->add_option("--k", k, "propagation neighbors per seed");
    app->add_option("--w", w, "temporal frame gap");
    app->add_option("--tau", tau, "correspondence radius, meters");
    app->add_option("--lr", lr, "adaptation learning rate");
    app->add_option("--steps-per-frame", steps, "optimizer steps per frame");
    app->add_option("--frames", frames, "generator stream length");
    app->add_option("--dropout", dropout, "dropout probability");
  }

  ss::pipeline::RunConfig resolve() const {
    ss::pipeline::RunConfig cfg = ss::pipeline::load_run_config(config_path);
    if (cmd->count("--seed")) {
      cfg.seed = seed;
      cfg.scene.seed = seed;
    }
    if (cmd->count("--mc-passes")) cfg.mc_passes = mc_passes;
    if (cmd->count("--percentile")) cfg.percentile = percentile;
    if (cmd->count("--k")) cfg.k_neighbors = k;
    if (cmd->count("--w")) cfg.frame_gap = w;
    if (cmd->count("--tau")) cfg.tau = tau;
    if (cmd->count("--lr")) cfg.learning_rate = lr;
    if (cmd->count("--steps-per-frame")) cfg.steps_per_frame = steps;
    if (cmd->count("--frames")) cfg.scene.frames = frames;
    if (cmd->count("--dropout")) cfg.dropout_rate = dropout;
    return cfg;
  }
};

nlohmann::json study_json(const ss::pipeline::OracleStudy& study) {
  nlohmann::json rows = nlohmann::json::array();
  for (int s = 0; s < 3; ++s) {
    const auto sel = static_cast<ss::pipeline::Selector>(s);
    rows.push_back({{"selector", ss::pipeline::selector_name(sel)},
                    {"top1_percent", study.top1[s].percent()},
                    {"top1_correct", study.top1[s].correct},
                    {"top1_total", study.top1[s].total},
                    {"top10_percent", study.top10[s].percent()},
                    {"top10_correct", study.top10[s].correct},
                    {"top10_total", study.top10[s].total}});
  }
  return rows;
}

void write_adaptation_outputs(const ss::pipeline::RunConfig& cfg,
                              ss::pipeline::AdaptationResult& res,
                              const std::string& out_dir) {
  fs::create_directories(out_dir);
  ss::evalkit::write_metrics_csv(out_dir + "/metrics.csv", res.records);
  nlohmann::json summary = ss::evalkit::summarize_records(res.records);
  summary["config"] = ss::pipeline::run_config_to_json(cfg);
  summary["ablation"] = ss::pipeline::ablation_name(cfg.ablation);
  summary["frozen_checksum_before"] = res.frozen_checksum_before;
  summary["frozen_checksum_after"] = res.frozen_checksum_after;
  ss::evalkit::write_summary_json(out_dir + "/summary.json", summary);
  ss::segnet::save_checkpoint(out_dir + "/final.ckpt", res.final_model);
  std::printf("frames=%zu mean_miou=%.4f frozen=%.4f improvement=%+.4f\n",
              res.records.size(), res.mean_miou, res.mean_frozen_miou,
              res.mean_improvement);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"streaming point-cloud segmentation lab"};
  app.require_subcommand(1);

  Overrides pre_ov, adapt_ov, ablate_ov, oracle_ov, sweep_ov;
  std::string out_ckpt, out_dir, mode = "ATP", selector = "all", param;
  std::vector<double> values;

  auto* pre = app.add_subcommand("pretrain", "supervised source training");
  pre_ov.attach(pre, /*seed_required=*/false);
  pre->add_option("--out", out_ckpt, "checkpoint path")->required();

  auto* adapt = app.add_subcommand("adapt", "online adaptation over a stream");
  adapt_ov.attach(adapt, /*seed_required=*/true);
  adapt->add_option("--ckpt", out_ckpt, "source checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  adapt->add_option("--out-dir", out_dir, "output directory")->required();

  auto* ablate = app.add_subcommand("ablate", "adaptation with a reduced loss");
  ablate_ov.attach(ablate, /*seed_required=*/true);
  std::string ablate_ckpt;
  ablate->add_option("--ckpt", ablate_ckpt, "source checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  ablate->add_option("--out-dir", out_dir, "output directory")->required();
  ablate->add_option("--mode", mode, "A, AT or ATP")->required();

  auto* oracle = app.add_subcommand("oracle", "pseudo-label selector study");
  oracle_ov.attach(oracle, /*seed_required=*/true);
  std::string oracle_ckpt;
  oracle->add_option("--ckpt", oracle_ckpt, "source checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  oracle->add_option("--out-dir", out_dir, "output directory")->required();
  oracle->add_option("--selector", selector,
                     "uncertainty, confidence, centroid or all");

  auto* sweep = app.add_subcommand("sweep", "one adaptation run per value");
  sweep_ov.attach(sweep, /*seed_required=*/true);
  std::string sweep_ckpt;
  sweep->add_option("--ckpt", sweep_ckpt, "source checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--out-dir", out_dir, "output directory")->required();
  sweep->add_option("--param", param, "K or w")->required();
  sweep->add_option("--values", values, "list of swept values")
      ->required()
      ->delimiter(',');

  CLI11_PARSE(app, argc, argv);

  try {
    if (pre->parsed()) {
      ss::pipeline::RunConfig cfg = pre_ov.resolve();
      auto out = ss::pipeline::pretrain_from_config(cfg);
      if (auto dir = fs::path(out_ckpt).parent_path(); !dir.empty())
        fs::create_directories(dir);
      ss::segnet::save_checkpoint(out_ckpt, out.model);
      std::printf("epochs=%zu final_loss=%.6f ckpt=%s\n",
                  out.report.epoch_loss.size(),
                  out.report.epoch_loss.empty() ? 0.0 : out.report.epoch_loss.back(),
                  out_ckpt.c_str());
    } else if (adapt->parsed()) {
      ss::pipeline::RunConfig cfg = adapt_ov.resolve();
      auto source = ss::segnet::load_checkpoint(out_ckpt);
      auto res = ss::pipeline::run_adaptation(cfg, source);
      write_adaptation_outputs(cfg, res, out_dir);
    } else if (ablate->parsed()) {
      ss::pipeline::RunConfig cfg = ablate_ov.resolve();
      cfg.ablation = ss::pipeline::parse_ablation(mode);
      auto source = ss::segnet::load_checkpoint(ablate_ckpt);
      auto res = ss::pipeline::run_adaptation(cfg, source);
      write_adaptation_outputs(cfg, res, out_dir);
    } else if (oracle->parsed()) {
      if (selector != "all") ss::pipeline::parse_selector(selector);  // validate
      ss::pipeline::RunConfig cfg = oracle_ov.resolve();
      auto source = ss::segnet::load_checkpoint(oracle_ckpt);
      auto study = ss::pipeline::run_oracle_study(cfg, source);
      fs::create_directories(out_dir);
      std::ofstream os(out_dir + "/oracle.csv", std::ios::binary);
      os << "selector,top1_percent,top1_correct,top1_total,"
            "top10_percent,top10_correct,top10_total\n";
      for (int s = 0; s < 3; ++s) {
        const char* name =
            ss::pipeline::selector_name(static_cast<ss::pipeline::Selector>(s));
        if (selector != "all" && selector != name) continue;
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%.9f,%ld,%ld,%.9f,%ld,%ld\n", name,
                      study.top1[s].percent(), study.top1[s].correct,
                      study.top1[s].total, study.top10[s].percent(),
                      study.top10[s].correct, study.top10[s].total);
        os << buf;
        std::printf("%s top1=%.2f top10=%.2f\n", name, study.top1[s].percent(),
                    study.top10[s].percent());
      }
      ss::evalkit::write_summary_json(out_dir + "/oracle.json", study_json(study));
    } else if (sweep->parsed()) {
      ss::pipeline::RunConfig cfg = sweep_ov.resolve();
      auto source = ss::segnet::load_checkpoint(sweep_ckpt);
      auto rows = ss::pipeline::run_sweep(cfg, source, param, values);
      fs::create_directories(out_dir);
      ss::pipeline::write_sweep_csv(out_dir + "/sweep.csv", param, rows);
      for (const auto& r : rows)
        std::printf("%s=%g mean_miou=%.4f improvement=%+.4f\n", param.c_str(),
                    r.value, r.mean_miou, r.mean_improvement);
    }
  } catch (const std::exception& e) {
    nlohmann::json err{{"error", true}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
