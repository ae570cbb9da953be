#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rlab/config.hpp"
#include "rlab/model.hpp"
#include "rlab/trainer.hpp"

namespace rlab {

// One run's score series: (global_step, score) sorted by step.
struct ScoreSeries {
  std::string label;
  std::vector<std::pair<long, real>> points;
};

// Per-seed series aligned onto a common step grid plus pointwise envelopes.
struct CurveBundle {
  std::vector<long> steps;
  std::vector<std::string> labels;            // one per series
  std::vector<std::vector<real>> per_series;  // [series][grid point]
  std::vector<real> min_env, mean_env, max_env;
};

// Aligns the series with stepwise last-value-carried-forward onto the
// sorted union of steps; values before a series' first point carry its
// first value backward.
CurveBundle aggregate_curves(const std::vector<ScoreSeries>& series);

std::string curve_bundle_csv(const CurveBundle& b);
CurveBundle parse_curve_bundle_csv(const std::string& text);

ScoreSeries parse_eval_csv(const std::string& text, const std::string& label);

struct ModeSummary {
  std::string label;
  long median_steps_to_threshold = 0;
  bool censored = false;  // threshold never reached within the budget
  real final_mean = 0.0;
  real final_spread = 0.0;  // max-min across seeds over the final window
};

struct CompareReport {
  ModeSummary a, b;
  std::optional<real> speedup_ratio;  // b.median / a.median, absent when censored
};

// Per-seed first crossing of the threshold (LVCF series), median over
// seeds; final-window statistics over the last `final_window_frac` of the
// grid.
CompareReport compare_report(const CurveBundle& a, const CurveBundle& b,
                             real threshold, real final_window_frac = 0.1);

std::string compare_report_csv(const CompareReport& r, real threshold);

// --- feature-map export ----------------------------------------------------

struct FeatureMapExport {
  int height = 0, width = 0;
  std::vector<real> raw;             // row-major map values
  std::vector<unsigned char> image;  // min-max normalized to 0..255
};

enum class MapKind { kValue, kVariance };

// Eval-mode forward; constant maps normalize to mid-gray 128.
FeatureMapExport export_feature_map(AbnNet& net, const Tensor& obs, MapKind which);

std::string feature_map_csv(const FeatureMapExport& e);
// 8-bit binary portable graymap (P5)
std::string feature_map_pgm(const FeatureMapExport& e);
// nearest-neighbor upsample to the observation extents, alpha 0.5 blend
// with the newest frame
std::string feature_map_overlay_pgm(const FeatureMapExport& e, const Tensor& obs);

// --- experiment driver ------------------------------------------------------

struct ExperimentResult {
  std::vector<std::string> artifacts;  // paths relative to out_dir
  std::string manifest_path;
};

// Trains every (seed, mode) cell, writing metrics/eval CSVs, checkpoints,
// feature-map dumps and a manifest with the config hash.
ExperimentResult run_experiment(const RunConfig& cfg);

}  // namespace rlab
