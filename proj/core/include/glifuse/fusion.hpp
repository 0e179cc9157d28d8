#pragma once

// Weighted-average fusion of slice-wise and volumetric class
// probabilities: fused = alpha * s2d + (1 - alpha) * s3d, plus the grid
// search selecting alpha on a validation set.

#include <vector>

#include "glifuse/volume.hpp"

namespace glifuse {

struct FusionParams {
  double alpha = 0.6;  // grid-searched optimum reported for this pipeline
};

// Voxelwise, classwise convex combination. Inputs must have identical
// shapes and alpha must lie in [0, 1].
ProbVolume fuse(const ProbVolume& s2d, const ProbVolume& s3d, double alpha);

struct FusionCase {
  ProbVolume s2d;
  ProbVolume s3d;
  LabelMask truth;
};

struct AlphaScore {
  double alpha = 0.0;
  double mean_dice = 0.0;
};

struct GridSearchResult {
  double best_alpha = 0.0;
  std::vector<AlphaScore> table;  // one row per candidate, input order
};

// Mean foreground Dice (classes 1..3 of the fused argmax labels against
// the truth) for one candidate alpha, averaged over cases.
double fusion_score(const std::vector<FusionCase>& cases, double alpha);

// Scores every candidate and returns the best. Ties break toward the
// candidate closest to 0.5, then toward the smaller value.
GridSearchResult grid_search_alpha(const std::vector<FusionCase>& cases,
                                   const std::vector<double>& candidates);

// The default candidate grid {0.0, 0.1, ..., 1.0}.
std::vector<double> default_alpha_grid();

}  // namespace glifuse
