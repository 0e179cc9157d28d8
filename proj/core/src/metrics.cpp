#include "glifuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace glifuse {

ConfusionCounts confusion_counts(const std::vector<std::uint8_t>& pred,
                                 const std::vector<std::uint8_t>& truth,
                                 int num_classes) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("confusion_counts: shape mismatch");
  }
  if (num_classes < 1) {
    throw std::invalid_argument("confusion_counts: need at least one class");
  }
  ConfusionCounts c;
  c.num_classes = num_classes;
  c.total = pred.size();
  const auto k = static_cast<std::size_t>(num_classes);
  c.tp.assign(k, 0);
  c.fp.assign(k, 0);
  c.fn.assign(k, 0);
  c.tn.assign(k, 0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::uint8_t p = pred[i];
    const std::uint8_t t = truth[i];
    if (p >= k || t >= k) {
      throw std::invalid_argument("confusion_counts: label out of range");
    }
    if (p == t) {
      ++c.tp[p];
    } else {
      ++c.fp[p];
      ++c.fn[t];
    }
  }
  // One-vs-rest: everything not TP/FP/FN for a class is its TN.
  for (std::size_t cls = 0; cls < k; ++cls) {
    c.tn[cls] = c.total - c.tp[cls] - c.fp[cls] - c.fn[cls];
  }
  return c;
}

namespace {

double ratio(std::uint64_t num, std::uint64_t den, double when_empty) {
  return den == 0 ? when_empty
                  : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ClassificationMetrics classification_metrics(const ConfusionCounts& counts) {
  ClassificationMetrics m;
  const auto k = static_cast<std::size_t>(counts.num_classes);
  m.per_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    const std::uint64_t tp = counts.tp[c], fp = counts.fp[c], fn = counts.fn[c],
                        tn = counts.tn[c];
    RateSet& r = m.per_class[c];
    r.accuracy = ratio(tp + tn, counts.total, 0.0);
    r.precision = ratio(tp, tp + fp, 0.0);
    r.recall = ratio(tp, tp + fn, 0.0);
    r.f1 = (r.precision + r.recall) == 0.0
               ? 0.0
               : 2.0 * r.precision * r.recall / (r.precision + r.recall);
    r.iou = ratio(tp, tp + fp + fn, 0.0);
    r.specificity = ratio(tn, tn + fp, 1.0);
    m.macro.accuracy += r.accuracy;
    m.macro.precision += r.precision;
    m.macro.recall += r.recall;
    m.macro.f1 += r.f1;
    m.macro.iou += r.iou;
    m.macro.specificity += r.specificity;
  }
  const double inv = 1.0 / static_cast<double>(k);
  m.macro.accuracy *= inv;
  m.macro.precision *= inv;
  m.macro.recall *= inv;
  m.macro.f1 *= inv;
  m.macro.iou *= inv;
  m.macro.specificity *= inv;
  return m;
}

double dice_coefficient(const std::vector<std::uint8_t>& pred,
                        const std::vector<std::uint8_t>& truth, double smooth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("dice_coefficient: shape mismatch");
  }
  if (smooth <= 0.0) {
    throw std::invalid_argument("dice_coefficient: smoothing must be positive");
  }
  std::uint64_t inter = 0, p = 0, t = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool pp = pred[i] != 0;
    const bool tt = truth[i] != 0;
    inter += pp && tt;
    p += pp;
    t += tt;
  }
  return (2.0 * static_cast<double>(inter) + smooth) /
         (static_cast<double>(t) + static_cast<double>(p) + smooth);
}

namespace {

double per_class_dice(const std::vector<std::uint8_t>& pred,
                      const std::vector<std::uint8_t>& truth, std::uint8_t cls,
                      double smooth) {
  std::uint64_t inter = 0, p = 0, t = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool pp = pred[i] == cls;
    const bool tt = truth[i] == cls;
    inter += pp && tt;
    p += pp;
    t += tt;
  }
  return (2.0 * static_cast<double>(inter) + smooth) /
         (static_cast<double>(t) + static_cast<double>(p) + smooth);
}

}  // namespace

double total_dice(const std::vector<std::uint8_t>& pred_labels,
                  const std::vector<std::uint8_t>& truth_labels, double smooth,
                  int num_classes) {
  if (pred_labels.size() != truth_labels.size()) {
    throw std::invalid_argument("total_dice: shape mismatch");
  }
  double acc = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    acc += per_class_dice(pred_labels, truth_labels,
                          static_cast<std::uint8_t>(c), smooth);
  }
  return acc / static_cast<double>(num_classes);
}

double mean_foreground_dice(const std::vector<std::uint8_t>& pred_labels,
                            const std::vector<std::uint8_t>& truth_labels,
                            double smooth, int num_classes) {
  if (pred_labels.size() != truth_labels.size()) {
    throw std::invalid_argument("mean_foreground_dice: shape mismatch");
  }
  double acc = 0.0;
  for (int c = 1; c < num_classes; ++c) {
    acc += per_class_dice(pred_labels, truth_labels,
                          static_cast<std::uint8_t>(c), smooth);
  }
  return acc / static_cast<double>(num_classes - 1);
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double squared_distance(const VoxelPoint& a, const VoxelPoint& b,
                        const std::array<double, 3>& spacing) {
  double acc = 0.0;
  for (int i = 0; i < 3; ++i) {
    const double d = static_cast<double>(a[i] - b[i]) * spacing[i];
    acc += d * d;
  }
  return acc;
}

double directed_squared_brute(const VoxelSet& a, const VoxelSet& b,
                              const std::array<double, 3>& spacing) {
  double worst = 0.0;
  for (const auto& pa : a) {
    double best = kInf;
    for (const auto& pb : b) {
      best = std::min(best, squared_distance(pa, pb, spacing));
      if (best == 0.0) break;
    }
    worst = std::max(worst, best);
  }
  return worst;
}

// Exact 1D squared-distance transform (lower envelope of parabolas with
// axis weight w = spacing^2). Cells with f == inf contribute no
// parabola, so rows without seeds stay at inf.
void dt1d(std::vector<double>& f, double w, std::vector<int>& v,
          std::vector<double>& z, std::vector<double>& d) {
  const int n = static_cast<int>(f.size());
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + w * q * q) - (f[p] + w * p * p)) /
          (2.0 * w * (q - p));
      if (s <= z[k]) {
        --k;
        if (k < 0) {
          k = 0;
          v[0] = q;
          z[0] = -kInf;
          z[1] = kInf;
          s = kInf;
          break;
        }
      } else {
        break;
      }
    }
    if (s != kInf) {
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = kInf;
    }
  }
  if (k < 0) {
    std::fill(d.begin(), d.begin() + n, kInf);
    return;
  }
  int j = 0;
  for (int q = 0; q < n; ++q) {
    while (z[j + 1] < q) ++j;
    const double dq = w * (q - v[j]) * (q - v[j]) + f[v[j]];
    d[q] = dq;
  }
}

struct Box {
  std::array<std::int64_t, 3> lo{};
  std::array<std::int64_t, 3> hi{};
  std::array<std::size_t, 3> extent{};
  std::size_t cells = 0;
};

Box joint_box(const VoxelSet& a, const VoxelSet& b) {
  Box box;
  for (int i = 0; i < 3; ++i) {
    box.lo[i] = std::numeric_limits<std::int64_t>::max();
    box.hi[i] = std::numeric_limits<std::int64_t>::min();
  }
  for (const VoxelSet* set : {&a, &b}) {
    for (const auto& p : *set) {
      for (int i = 0; i < 3; ++i) {
        box.lo[i] = std::min(box.lo[i], p[i]);
        box.hi[i] = std::max(box.hi[i], p[i]);
      }
    }
  }
  box.cells = 1;
  for (int i = 0; i < 3; ++i) {
    box.extent[i] = static_cast<std::size_t>(box.hi[i] - box.lo[i] + 1);
    box.cells *= box.extent[i];
  }
  return box;
}

// Squared distance to the nearest seed for every cell of the box.
std::vector<double> grid_edt(const VoxelSet& seeds, const Box& box,
                             const std::array<double, 3>& spacing) {
  const std::size_t e0 = box.extent[0], e1 = box.extent[1], e2 = box.extent[2];
  std::vector<double> dist(box.cells, kInf);
  for (const auto& p : seeds) {
    const std::size_t i = static_cast<std::size_t>(p[0] - box.lo[0]);
    const std::size_t j = static_cast<std::size_t>(p[1] - box.lo[1]);
    const std::size_t k = static_cast<std::size_t>(p[2] - box.lo[2]);
    dist[(i * e1 + j) * e2 + k] = 0.0;
  }
  const std::size_t max_extent = std::max({e0, e1, e2});
  std::vector<double> f(max_extent), d(max_extent), z(max_extent + 1);
  std::vector<int> v(max_extent);

  // Axis 2 (contiguous rows).
  for (std::size_t i = 0; i < e0; ++i) {
    for (std::size_t j = 0; j < e1; ++j) {
      double* row = dist.data() + (i * e1 + j) * e2;
      f.assign(row, row + e2);
      dt1d(f, spacing[2] * spacing[2], v, z, d);
      std::copy(d.begin(), d.begin() + e2, row);
    }
  }
  // Axis 1.
  for (std::size_t i = 0; i < e0; ++i) {
    for (std::size_t k = 0; k < e2; ++k) {
      for (std::size_t j = 0; j < e1; ++j) {
        f[j] = dist[(i * e1 + j) * e2 + k];
      }
      dt1d(f, spacing[1] * spacing[1], v, z, d);
      for (std::size_t j = 0; j < e1; ++j) {
        dist[(i * e1 + j) * e2 + k] = d[j];
      }
    }
  }
  // Axis 0.
  for (std::size_t j = 0; j < e1; ++j) {
    for (std::size_t k = 0; k < e2; ++k) {
      for (std::size_t i = 0; i < e0; ++i) {
        f[i] = dist[(i * e1 + j) * e2 + k];
      }
      dt1d(f, spacing[0] * spacing[0], v, z, d);
      for (std::size_t i = 0; i < e0; ++i) {
        dist[(i * e1 + j) * e2 + k] = d[i];
      }
    }
  }
  return dist;
}

double directed_squared_grid(const VoxelSet& a, const std::vector<double>& edt,
                             const Box& box) {
  double worst = 0.0;
  for (const auto& p : a) {
    const std::size_t i = static_cast<std::size_t>(p[0] - box.lo[0]);
    const std::size_t j = static_cast<std::size_t>(p[1] - box.lo[1]);
    const std::size_t k = static_cast<std::size_t>(p[2] - box.lo[2]);
    worst = std::max(worst, edt[(i * box.extent[1] + j) * box.extent[2] + k]);
  }
  return worst;
}

}  // namespace

double hausdorff(const VoxelSet& a, const VoxelSet& b,
                 const std::array<double, 3>& spacing,
                 HausdorffMethod method) {
  if (a.empty() || b.empty()) {
    throw std::invalid_argument("hausdorff: point sets must be nonempty");
  }
  bool use_grid = false;
  if (method == HausdorffMethod::kGrid) {
    use_grid = true;
  } else if (method == HausdorffMethod::kAuto) {
    const std::size_t pairwise = a.size() * b.size();
    use_grid = pairwise > (std::size_t(1) << 18);
  }
  if (use_grid) {
    const Box box = joint_box(a, b);
    if (box.cells <= (std::size_t(1) << 26)) {
      const std::vector<double> to_b = grid_edt(b, box, spacing);
      const double ab = directed_squared_grid(a, to_b, box);
      const std::vector<double> to_a = grid_edt(a, box, spacing);
      const double ba = directed_squared_grid(b, to_a, box);
      return std::sqrt(std::max(ab, ba));
    }
    if (method == HausdorffMethod::kGrid) {
      throw std::invalid_argument(
          "hausdorff: bounding box too large for the grid method");
    }
  }
  const double ab = directed_squared_brute(a, b, spacing);
  const double ba = directed_squared_brute(b, a, spacing);
  return std::sqrt(std::max(ab, ba));
}

VoxelSet foreground_voxels(const std::vector<std::uint8_t>& labels,
                           const std::array<std::size_t, 3>& shape) {
  if (labels.size() != shape[0] * shape[1] * shape[2]) {
    throw std::invalid_argument("foreground_voxels: shape mismatch");
  }
  VoxelSet points;
  std::size_t at = 0;
  for (std::size_t i = 0; i < shape[0]; ++i) {
    for (std::size_t j = 0; j < shape[1]; ++j) {
      for (std::size_t k = 0; k < shape[2]; ++k, ++at) {
        if (labels[at] != 0) {
          points.push_back({static_cast<std::int64_t>(i),
                            static_cast<std::int64_t>(j),
                            static_cast<std::int64_t>(k)});
        }
      }
    }
  }
  return points;
}

}  // namespace glifuse
