#include "glifuse/unet.hpp"

namespace glifuse {

ProbVolume segment_volume(UnetModel<float>& model, const CaseRecord& record,
                          SegMode mode) {
  const auto shape = record.shape();
  const auto classes = static_cast<std::size_t>(model.spec.out_channels);
  ProbVolume out;
  out.shape = {classes, shape[0], shape[1], shape[2]};
  out.values.resize(out.count());

  if (mode == SegMode::k3D) {
    if (model.spec.spatial_rank != 3) {
      throw std::invalid_argument("segment_volume: model is not volumetric");
    }
    Tensor<float> stack = modality_stack<float>(record);
    Tensor<float> batch = Tensor<float>::from(
        {1, 4, shape[0], shape[1], shape[2]}, stack.data());
    Tensor<float> probs = unet_forward(model, batch, Mode::kEval);
    // [1, C, D, H, W] lines up with the (C, D, H, W) output layout.
    std::copy(probs.data().begin(), probs.data().end(), out.values.begin());
    return out;
  }

  if (model.spec.spatial_rank != 2) {
    throw std::invalid_argument("segment_volume: model is not slice-wise");
  }
  const std::size_t d = shape[0], h = shape[1], w = shape[2];
  const std::size_t plane = d * h;
  constexpr std::size_t kChunk = 8;
  for (std::size_t k0 = 0; k0 < w; k0 += kChunk) {
    const std::size_t n = std::min(kChunk, w - k0);
    std::vector<float> data(n * 4 * plane);
    for (std::size_t s = 0; s < n; ++s) {
      Tensor<float> slice = modality_slice<float>(record, k0 + s);
      std::copy(slice.data().begin(), slice.data().end(),
                data.begin() + s * 4 * plane);
    }
    Tensor<float> batch = Tensor<float>::from({n, 4, d, h}, std::move(data));
    Tensor<float> probs = unet_forward(model, batch, Mode::kEval);
    const auto& pv = probs.data();
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t k = k0 + s;
      for (std::size_t c = 0; c < classes; ++c) {
        const float* src = pv.data() + (s * classes + c) * plane;
        for (std::size_t i = 0; i < d; ++i) {
          for (std::size_t j = 0; j < h; ++j) {
            out.values[((c * d + i) * h + j) * w + k] = src[i * h + j];
          }
        }
      }
    }
  }
  return out;
}

}  // namespace glifuse
