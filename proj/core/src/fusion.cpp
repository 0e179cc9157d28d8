#include "glifuse/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include "glifuse/metrics.hpp"

namespace glifuse {

ProbVolume fuse(const ProbVolume& s2d, const ProbVolume& s3d, double alpha) {
  if (s2d.shape != s3d.shape) {
    throw std::invalid_argument("fuse: shape mismatch");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw std::invalid_argument("fuse: alpha must be in [0,1]");
  }
  ProbVolume out;
  out.shape = s2d.shape;
  out.values.resize(s2d.values.size());
  const float a = static_cast<float>(alpha);
  const float b = 1.0f - a;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = a * s2d.values[i] + b * s3d.values[i];
  }
  return out;
}

double fusion_score(const std::vector<FusionCase>& cases, double alpha) {
  if (cases.empty()) {
    throw std::invalid_argument("fusion_score: need at least one case");
  }
  double total = 0.0;
  for (const auto& fc : cases) {
    const LabelMask pred = fuse(fc.s2d, fc.s3d, alpha).argmax_labels();
    if (pred.shape != fc.truth.shape) {
      throw std::invalid_argument("fusion_score: truth shape mismatch");
    }
    total += mean_foreground_dice(pred.labels, fc.truth.labels);
  }
  return total / static_cast<double>(cases.size());
}

GridSearchResult grid_search_alpha(const std::vector<FusionCase>& cases,
                                   const std::vector<double>& candidates) {
  if (candidates.empty()) {
    throw std::invalid_argument("grid_search_alpha: empty candidate list");
  }
  GridSearchResult result;
  result.table.reserve(candidates.size());
  bool have_best = false;
  double best_score = 0.0;
  for (double alpha : candidates) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) {
      throw std::invalid_argument("grid_search_alpha: candidate out of [0,1]");
    }
    const double score = fusion_score(cases, alpha);
    result.table.push_back({alpha, score});
    bool better = false;
    if (!have_best || score > best_score) {
      better = true;
    } else if (score == best_score) {
      const double d_new = std::abs(alpha - 0.5);
      const double d_old = std::abs(result.best_alpha - 0.5);
      better = d_new < d_old || (d_new == d_old && alpha < result.best_alpha);
    }
    if (better) {
      have_best = true;
      best_score = score;
      result.best_alpha = alpha;
    }
  }
  return result;
}

std::vector<double> default_alpha_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) {
    grid.push_back(static_cast<double>(i) / 10.0);
  }
  return grid;
}

}  // namespace glifuse
