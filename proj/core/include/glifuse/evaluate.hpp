#pragma once

// Per-case evaluation reports covering the full metric set (per-class
// and macro rates, smoothed Dice, total Dice, whole-tumor Hausdorff)
// and their JSON serialization with a fixed key schema.

#include <optional>
#include <string>
#include <vector>

#include "glifuse/metrics.hpp"
#include "glifuse/volume.hpp"

namespace glifuse {

struct EvalReport {
  std::vector<double> dice_per_class;  // smoothed, one per class
  double dice_macro = 0.0;
  double total_dice = 0.0;
  ClassificationMetrics rates;
  double hausdorff_distance = 0.0;
};

struct EvalOptions {
  double smooth = 1.0;
  int num_classes = 4;
  // Physical spacing for the Hausdorff term; unset = voxel units.
  std::optional<std::array<double, 3>> spacing;
};

// Compares two label masks. The Hausdorff term uses the whole-tumor
// (nonzero) voxel sets; when both are empty it is 0, and when exactly
// one is empty it falls back to the grid diagonal as the worst case.
EvalReport evaluate_labels(const LabelMask& pred, const LabelMask& truth,
                           const EvalOptions& options = {});

// Arithmetic mean of every field over per-case reports.
EvalReport aggregate_reports(const std::vector<EvalReport>& reports);

// JSON object with exactly the keys {dice, total_dice, accuracy,
// precision, recall, f1, iou, specificity, hausdorff}; rate metrics
// carry {"macro": x, "per_class": [...]} values.
std::string eval_report_json(const EvalReport& report);

// Extracts a named metric (macro value for the rate metrics) from a
// serialized report; used by run comparisons.
double eval_report_metric(const std::string& json_text,
                          const std::string& metric);

}  // namespace glifuse
