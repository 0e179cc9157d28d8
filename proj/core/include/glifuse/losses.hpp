#pragma once

// Training losses: smoothed Dice loss over class maps, focal loss for
// class distributions (batched and voxelwise), and the L2 weight
// penalty. All are composed from differentiable graph primitives.

#include <cstdint>
#include <vector>

#include "glifuse/nn_ops.hpp"
#include "glifuse/tensor.hpp"

namespace glifuse {

// loss = 1 - (1/C) * sum_c (2*I_c + S) / (T_c + P_c + S), with the
// per-class sums taken over batch and spatial axes. `pred` is
// [N, C, spatial...] and `truth_onehot` must be a one-hot map of the
// same shape.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& pred, const Tensor<T>& truth_onehot,
                    T smooth) {
  if (smooth <= T(0)) {
    throw std::invalid_argument("dice_loss: smoothing term must be positive");
  }
  if (pred.shape() != truth_onehot.shape()) {
    throw std::invalid_argument("dice_loss: shape mismatch");
  }
  if (pred.rank() < 2) {
    throw std::invalid_argument("dice_loss: inputs must be [N, C, ...]");
  }
  {
    const auto s = detail::split_at(truth_onehot, 1);
    const auto& tv = truth_onehot.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        T acc = T(0);
        for (std::size_t c = 0; c < s.axis; ++c) {
          const T v = tv[(o * s.axis + c) * s.inner + in];
          if (v != T(0) && v != T(1)) {
            throw std::invalid_argument("dice_loss: truth is not one-hot");
          }
          acc += v;
        }
        if (acc != T(1)) {
          throw std::invalid_argument("dice_loss: truth is not one-hot");
        }
      }
    }
  }
  Tensor<T> inter = sum_except(mul(pred, truth_onehot), 1);
  Tensor<T> pred_sum = sum_except(pred, 1);
  Tensor<T> truth_sum = sum_except(truth_onehot, 1);
  Tensor<T> numer = add_scalar(scale(inter, T(2)), smooth);
  Tensor<T> denom = add_scalar(add(truth_sum, pred_sum), smooth);
  Tensor<T> total = mean(divide(numer, denom));
  return add_scalar(scale(total, T(-1)), T(1));
}

// FL = -w_t * (1 - p_t)^gamma * ln(p_t) averaged over the batch.
// `probs` is [N, K]; `targets` holds one class index per row; `weights`
// is empty (unit weights) or a length-K vector. p_t is clamped below at
// 1e-12 before the logarithm.
template <typename T>
Tensor<T> focal_loss(const Tensor<T>& probs, const std::vector<int>& targets,
                     T gamma, const std::vector<T>& weights = {}) {
  if (probs.rank() != 2) {
    throw std::invalid_argument("focal_loss: probs must be [N, K]");
  }
  const std::size_t n = probs.extent(0);
  const std::size_t k = probs.extent(1);
  if (targets.size() != n) {
    throw std::invalid_argument("focal_loss: one target per row required");
  }
  if (!weights.empty() && weights.size() != k) {
    throw std::invalid_argument("focal_loss: weights must have K entries");
  }
  std::vector<T> onehot(n * k, T(0));
  std::vector<T> w(n, T(1));
  for (std::size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= k) {
      throw std::invalid_argument("focal_loss: target index out of range");
    }
    onehot[i * k + static_cast<std::size_t>(targets[i])] = T(1);
    if (!weights.empty()) {
      w[i] = weights[static_cast<std::size_t>(targets[i])];
    }
  }
  Tensor<T> mask = Tensor<T>::from({n, k}, std::move(onehot));
  Tensor<T> pt = sum_along(mul(probs, mask), 1);  // [N]
  Tensor<T> focus = pow_scalar(sub(Tensor<T>::full({n}, T(1)), pt), gamma);
  Tensor<T> log_pt = log_clamped(pt, T(1e-12));
  Tensor<T> weighted =
      mul(Tensor<T>::from({n}, std::move(w)), mul(focus, log_pt));
  return scale(mean(weighted), T(-1));
}

// Voxelwise focal term for segmentation: `probs` is [N, C, spatial...],
// `labels` one class per voxel (row-major over batch then spatial);
// result is the mean over all voxels.
template <typename T>
Tensor<T> focal_loss_map(const Tensor<T>& probs,
                         const std::vector<std::uint8_t>& labels, T gamma,
                         const std::vector<T>& weights = {}) {
  if (probs.rank() < 3) {
    throw std::invalid_argument("focal_loss_map: probs must be [N, C, ...]");
  }
  const std::size_t n = probs.extent(0);
  const std::size_t k = probs.extent(1);
  std::vector<std::size_t> spatial(probs.shape().begin() + 2,
                                   probs.shape().end());
  std::size_t plane = 1;
  for (auto e : spatial) plane *= e;
  if (labels.size() != n * plane) {
    throw std::invalid_argument("focal_loss_map: label count mismatch");
  }
  if (!weights.empty() && weights.size() != k) {
    throw std::invalid_argument("focal_loss_map: weights must have K entries");
  }
  Tensor<T> mask = one_hot_map<T>(labels, n, k, spatial);
  Tensor<T> pt = sum_along(mul(probs, mask), 1);  // [N, spatial...]
  Tensor<T> ones = Tensor<T>::full(pt.shape(), T(1));
  Tensor<T> focus = pow_scalar(sub(ones, pt), gamma);
  Tensor<T> log_pt = log_clamped(pt, T(1e-12));
  Tensor<T> fl = mul(focus, log_pt);
  if (!weights.empty()) {
    std::vector<T> w(n * plane);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      w[i] = weights[labels[i]];
    }
    fl = mul(Tensor<T>::from(pt.shape(), std::move(w)), fl);
  }
  return scale(mean(fl), T(-1));
}

// lambda * sum of squares over the given weight tensors (callers pass
// convolution/affine weights only; biases and normalization parameters
// stay unpenalized).
template <typename T>
Tensor<T> l2_penalty(const std::vector<Tensor<T>>& weights, T lambda) {
  if (lambda < T(0)) {
    throw std::invalid_argument("l2_penalty: lambda must be >= 0");
  }
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (const auto& w : weights) {
    total = add(total, sum(mul(w, w)));
  }
  return scale(total, lambda);
}

}  // namespace glifuse
