#include "glifuse/resnet.hpp"

#include <algorithm>

namespace glifuse {

Classification classify(ClassifierModel<float>& model,
                        const Tensor<float>& slice, Mode mode) {
  if (slice.rank() != 3) {
    throw std::invalid_argument("classify: slice must be [C, H, W]");
  }
  Tensor<float> batch = Tensor<float>::from(
      {1, slice.extent(0), slice.extent(1), slice.extent(2)}, slice.data());
  Tensor<float> logits = resnet_forward(model, batch, mode);
  Tensor<float> probs = softmax(logits, 1);
  Classification result;
  const auto& pv = probs.data();
  std::size_t best = 0;
  for (std::size_t c = 0; c < pv.size() && c < 4; ++c) {
    result.probabilities[c] = pv[c];
    if (pv[c] > pv[best]) {
      best = c;  // strict >, so ties keep the lowest index
    }
  }
  result.label = static_cast<SubclassLabel>(best);
  return result;
}

SubclassLabel derive_subclass_label(
    const std::vector<std::uint8_t>& slice_labels) {
  std::array<std::size_t, 4> counts{};
  for (std::uint8_t v : slice_labels) {
    if (v > 3) {
      throw std::invalid_argument("derive_subclass_label: label out of range");
    }
    ++counts[v];
  }
  std::size_t best = 0;
  std::size_t best_count = 0;
  for (std::size_t c = 1; c <= 3; ++c) {
    if (counts[c] > best_count) {
      best_count = counts[c];
      best = c;
    }
  }
  return best_count == 0 ? SubclassLabel::kNoTumor
                         : static_cast<SubclassLabel>(best);
}

Tensor<float> prob_slice(const ProbVolume& probs, std::size_t k) {
  const std::size_t c = probs.shape[0], d = probs.shape[1], h = probs.shape[2],
                    w = probs.shape[3];
  if (k >= w) {
    throw std::out_of_range("prob_slice: slice index out of range");
  }
  std::vector<float> data(c * d * h);
  for (std::size_t cc = 0; cc < c; ++cc) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < h; ++j) {
        data[(cc * d + i) * h + j] = probs.values[((cc * d + i) * h + j) * w + k];
      }
    }
  }
  return Tensor<float>::from({c, d, h}, std::move(data));
}

}  // namespace glifuse
