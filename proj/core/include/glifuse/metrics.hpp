#pragma once

// Segmentation/classification evaluation: one-vs-rest confusion counts,
// rate metrics with deterministic zero-denominator conventions,
// smoothed Dice, total (4-class mean) Dice, and the exact symmetric
// Hausdorff distance between voxel sets.

#include <array>
#include <cstdint>
#include <vector>

namespace glifuse {

struct ConfusionCounts {
  int num_classes = 0;
  std::uint64_t total = 0;
  std::vector<std::uint64_t> tp, fp, fn, tn;
};

ConfusionCounts confusion_counts(const std::vector<std::uint8_t>& pred,
                                 const std::vector<std::uint8_t>& truth,
                                 int num_classes = 4);

struct RateSet {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double iou = 0.0;
  double specificity = 0.0;
};

struct ClassificationMetrics {
  std::vector<RateSet> per_class;
  RateSet macro;  // unweighted mean over classes
};

// precision = TP/(TP+FP), recall = TP/(TP+FN), f1 = 2PR/(P+R),
// iou = TP/(TP+FP+FN), specificity = TN/(TN+FP),
// accuracy = (TP+TN)/total. A zero denominator yields 0, except
// specificity which yields 1 (no negatives were mislabeled).
ClassificationMetrics classification_metrics(const ConfusionCounts& counts);

// Smoothed overlap (2*|A and B| + s) / (|A| + |B| + s) of binary masks.
double dice_coefficient(const std::vector<std::uint8_t>& pred,
                        const std::vector<std::uint8_t>& truth,
                        double smooth = 1.0);

// Mean of the per-class smoothed Dice over all `num_classes` labels
// (background included).
double total_dice(const std::vector<std::uint8_t>& pred_labels,
                  const std::vector<std::uint8_t>& truth_labels,
                  double smooth = 1.0, int num_classes = 4);

// Mean smoothed Dice over the foreground classes 1..num_classes-1.
double mean_foreground_dice(const std::vector<std::uint8_t>& pred_labels,
                            const std::vector<std::uint8_t>& truth_labels,
                            double smooth = 1.0, int num_classes = 4);

using VoxelPoint = std::array<std::int64_t, 3>;
using VoxelSet = std::vector<VoxelPoint>;

enum class HausdorffMethod { kAuto, kBruteForce, kGrid };

// Symmetric Hausdorff distance max(h(A,B), h(B,A)) with
// h(A,B) = max_a min_b ||a-b||. kAuto picks the grid-accelerated exact
// path (per-axis distance transform over the joint bounding box) when
// the box is small enough and brute force otherwise; all methods return
// identical values. `spacing` weights the axes in physical units.
double hausdorff(const VoxelSet& a, const VoxelSet& b,
                 const std::array<double, 3>& spacing = {1.0, 1.0, 1.0},
                 HausdorffMethod method = HausdorffMethod::kAuto);

// All nonzero voxels of a label grid as points (used for whole-tumor
// surface distance).
VoxelSet foreground_voxels(const std::vector<std::uint8_t>& labels,
                           const std::array<std::size_t, 3>& shape);

}  // namespace glifuse
