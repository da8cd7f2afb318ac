#pragma once

// Counting metrics, the K-shot adaptation protocol and report rendering.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metacount/density.hpp"
#include "metacount/nn.hpp"
#include "metacount/scenes.hpp"

namespace metacount::eval {

struct MetricTriple {
  double mae = 0.0;
  double rmse = 0.0;
  double mde = 0.0;  // mean |pred - gt| / gt over images with gt > 0
  std::size_t n_images = 0;
  std::size_t n_skipped_mde = 0;  // images with a zero ground-truth count
};

MetricTriple metrics_from_counts(std::span<const double> pred, std::span<const double> gt);

// Counts are taken with density::count under the (optional) roi.
MetricTriple metrics(std::span<const density::DensityMap> preds,
                     std::span<const density::DensityMap> gts,
                     const std::optional<density::RoiMask>& roi = {});

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population form: divides by n
};
Summary summarize(std::span<const double> values);

struct ProtocolConfig {
  std::size_t k = 5;
  std::size_t steps = 10;
  std::size_t trials = 5;
  double alpha = 0.001;
  bool use_roi = false;
  std::uint64_t seed = 0;
};

struct TrialResult {
  std::uint64_t seed = 0;
  std::vector<std::size_t> shots;  // image indices used for adaptation
  MetricTriple final;
  std::vector<double> curve;  // MAE on the remainder after 0..steps updates
};

struct AdaptationReport {
  int scene_id = 0;
  ProtocolConfig protocol;
  std::vector<TrialResult> trials;
  Summary mae, rmse, mde;
};

// The scene roi at the network's output resolution, if the scene has one.
std::optional<density::RoiMask> output_roi(const scenes::Scene& scene, std::size_t downsample);

// Per trial: draw K shots with the trial seed, fine-tune the estimator for
// `steps` SGD steps and score the remaining images after every step. With
// cfg.use_roi the scene roi masks both the fine-tuning loss and the counts.
AdaptationReport run_adaptation_protocol(const nn::ModelParams& model, const scenes::Scene& scene,
                                         const ProtocolConfig& cfg);

// Same, with an explicit output-resolution roi (cfg.use_roi is ignored).
AdaptationReport run_adaptation_protocol(const nn::ModelParams& model, const scenes::Scene& scene,
                                         const ProtocolConfig& cfg,
                                         const std::optional<density::RoiMask>& roi);

std::uint64_t trial_seed(std::uint64_t seed, int scene_id, std::size_t trial);

// ---------------------------------------------------------------------------
// Method comparison. Each method carries one report per held-out scene; all
// reports share the protocol and the scene order.

using MethodReports = std::vector<std::pair<std::string, std::vector<AdaptationReport>>>;

struct ComparisonRow {
  std::string label;  // "scene <id>" or "average"
  Summary mae, rmse, mde;
};

struct ComparisonTable {
  ProtocolConfig protocol;
  std::vector<std::string> methods;
  // rows[m] holds one row per scene followed by the average row.
  std::vector<std::vector<ComparisonRow>> rows;

  const ComparisonRow& average(std::size_t method) const { return rows.at(method).back(); }
};

// The average row averages each metric over scenes within a trial, then
// summarizes over trials.
ComparisonTable compare_methods(const MethodReports& reports);

std::string render_text(const ComparisonTable& table);
std::string render_json(const ComparisonTable& table);
std::string render_json(const AdaptationReport& report);
// trial,step,mae
std::string render_curves_csv(const AdaptationReport& report);

}  // namespace metacount::eval
