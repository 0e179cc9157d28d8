#pragma once

// Encoder-decoder segmentation network, rank-generic over 2D (slice)
// and 3D (volume) inputs. Encoder levels are two conv/norm/relu blocks
// followed by 2x max pooling; the decoder mirrors them with
// nearest-neighbor upsampling, a channel-halving convolution, and a
// skip concatenation; a final 1x1 convolution and per-voxel softmax
// produce class probabilities.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "glifuse/nn_ops.hpp"
#include "glifuse/optimizer.hpp"
#include "glifuse/rng.hpp"
#include "glifuse/tensor.hpp"
#include "glifuse/volume.hpp"

namespace glifuse {

struct UnetSpec {
  int spatial_rank = 2;  // 2 or 3
  int depth = 4;         // pooling levels
  int base_channels = 16;
  int in_channels = 4;
  int out_channels = 4;
  double dropout_rate = 0.1;

  void validate() const {
    if (spatial_rank != 2 && spatial_rank != 3) {
      throw std::invalid_argument("UnetSpec: spatial_rank must be 2 or 3");
    }
    if (depth < 1 || base_channels < 1 || in_channels < 1 || out_channels < 1) {
      throw std::invalid_argument("UnetSpec: all sizes must be positive");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
      throw std::invalid_argument("UnetSpec: dropout_rate must be in [0,1)");
    }
  }

  int channels_at(int level) const { return base_channels << level; }
};

template <typename T>
struct UnetModel {
  UnetSpec spec;
  ParamList<T> params;
  std::vector<BatchNormState<T>> norm_states;

  Tensor<T>& param(const std::string& name) {
    for (auto& p : params) {
      if (p.name == name) return p.tensor;
    }
    throw std::out_of_range("unet parameter not found: " + name);
  }
  std::vector<Tensor<T>> decaying_weights() const {
    std::vector<Tensor<T>> w;
    for (const auto& p : params) {
      if (p.decay) w.push_back(p.tensor);
    }
    return w;
  }
};

namespace detail {

template <typename T>
Tensor<T> init_conv_weight(Rng& rng, std::size_t out_ch, std::size_t in_ch,
                           std::size_t spatial_rank, std::size_t k) {
  std::vector<std::size_t> shape{out_ch, in_ch};
  std::size_t fan_in = in_ch;
  for (std::size_t i = 0; i < spatial_rank; ++i) {
    shape.push_back(k);
    fan_in *= k;
  }
  // Fan-in scaled uniform with ReLU gain: Var(w) = 2/fan_in.
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::size_t n = out_ch * in_ch;
  for (std::size_t i = 0; i < spatial_rank; ++i) n *= k;
  std::vector<T> data(n);
  for (auto& v : data) {
    v = static_cast<T>(rng.uniform(-bound, bound));
  }
  return Tensor<T>::from(std::move(shape), std::move(data));
}

template <typename T>
void add_conv(UnetModel<T>& model, Rng& rng, const std::string& name,
              int in_ch, int out_ch, int k) {
  model.params.push_back(
      {name + ".w",
       init_conv_weight<T>(rng, static_cast<std::size_t>(out_ch),
                           static_cast<std::size_t>(in_ch),
                           static_cast<std::size_t>(model.spec.spatial_rank),
                           static_cast<std::size_t>(k)),
       true});
  model.params.push_back(
      {name + ".b", Tensor<T>::zeros({static_cast<std::size_t>(out_ch)}),
       false});
}

template <typename T>
void add_norm(UnetModel<T>& model, const std::string& name, int channels) {
  model.params.push_back(
      {name + ".gamma",
       Tensor<T>::full({static_cast<std::size_t>(channels)}, T(1)), false});
  model.params.push_back(
      {name + ".beta", Tensor<T>::zeros({static_cast<std::size_t>(channels)}),
       false});
  model.norm_states.emplace_back(static_cast<std::size_t>(channels));
}

}  // namespace detail

// Deterministic construction under `seed`. Parameter order (and thus
// checkpoint layout) is encoder top-down, bottleneck, decoder bottom-up,
// output head.
template <typename T>
UnetModel<T> build_unet(const UnetSpec& spec, std::uint64_t seed) {
  spec.validate();
  UnetModel<T> model;
  model.spec = spec;
  Rng rng(derive_seed(seed, "unet-init"));

  int in_ch = spec.in_channels;
  for (int l = 0; l < spec.depth; ++l) {
    const int ch = spec.channels_at(l);
    const std::string base = "enc" + std::to_string(l);
    detail::add_conv(model, rng, base + ".conv1", in_ch, ch, 3);
    detail::add_norm(model, base + ".bn1", ch);
    detail::add_conv(model, rng, base + ".conv2", ch, ch, 3);
    detail::add_norm(model, base + ".bn2", ch);
    in_ch = ch;
  }
  const int mid_ch = spec.channels_at(spec.depth);
  detail::add_conv(model, rng, "mid.conv1", in_ch, mid_ch, 3);
  detail::add_norm(model, "mid.bn1", mid_ch);
  detail::add_conv(model, rng, "mid.conv2", mid_ch, mid_ch, 3);
  detail::add_norm(model, "mid.bn2", mid_ch);

  for (int l = spec.depth - 1; l >= 0; --l) {
    const int ch = spec.channels_at(l);
    const int above = spec.channels_at(l + 1);
    const std::string base = "dec" + std::to_string(l);
    detail::add_conv(model, rng, base + ".up", above, ch, 3);
    detail::add_conv(model, rng, base + ".conv1", 2 * ch, ch, 3);
    detail::add_norm(model, base + ".bn1", ch);
    detail::add_conv(model, rng, base + ".conv2", ch, ch, 3);
    detail::add_norm(model, base + ".bn2", ch);
  }
  detail::add_conv(model, rng, "head.conv", spec.base_channels,
                   spec.out_channels, 1);
  return model;
}

// Forward pass over a batch [N, in_channels, spatial...]; spatial
// extents must be divisible by 2^depth. Output matches the input
// spatial extents with per-voxel class probabilities along axis 1.
template <typename T>
Tensor<T> unet_forward(UnetModel<T>& model, const Tensor<T>& batch, Mode mode,
                       std::uint64_t dropout_seed = 0) {
  const auto& spec = model.spec;
  if (batch.rank() != static_cast<std::size_t>(spec.spatial_rank) + 2) {
    throw std::invalid_argument("unet_forward: input rank mismatch");
  }
  if (batch.extent(1) != static_cast<std::size_t>(spec.in_channels)) {
    throw std::invalid_argument("unet_forward: expected " +
                                std::to_string(spec.in_channels) +
                                " input channels");
  }
  const std::size_t div = std::size_t(1) << spec.depth;
  for (std::size_t i = 2; i < batch.rank(); ++i) {
    if (batch.extent(i) % div != 0) {
      throw std::invalid_argument(
          "unet_forward: spatial extents must be divisible by 2^depth");
    }
  }

  std::size_t pi = 0;  // parameter cursor
  std::size_t ni = 0;  // norm-state cursor
  auto next_param = [&]() -> Tensor<T>& { return model.params.at(pi++).tensor; };
  auto conv_norm_relu = [&](const Tensor<T>& x) {
    Tensor<T>& w = next_param();
    Tensor<T>& b = next_param();
    Tensor<T> y = conv(x, w, b, 1, 1);
    Tensor<T>& gamma = next_param();
    Tensor<T>& beta = next_param();
    y = batch_norm(y, gamma, beta, model.norm_states.at(ni++), mode);
    return relu(y);
  };

  std::vector<Tensor<T>> skips;
  Tensor<T> x = batch;
  for (int l = 0; l < spec.depth; ++l) {
    x = conv_norm_relu(x);
    x = conv_norm_relu(x);
    skips.push_back(x);
    x = maxpool(x, 2, 2);
  }
  x = conv_norm_relu(x);
  x = conv_norm_relu(x);
  if (spec.dropout_rate > 0.0) {
    x = dropout(x, spec.dropout_rate, derive_seed(dropout_seed, "unet-drop"),
                mode);
  }
  for (int l = spec.depth - 1; l >= 0; --l) {
    Tensor<T>& up_w = next_param();
    Tensor<T>& up_b = next_param();
    x = conv(upsample(x, 2), up_w, up_b, 1, 1);
    x = concat(x, skips[static_cast<std::size_t>(l)], 1);
    x = conv_norm_relu(x);
    x = conv_norm_relu(x);
  }
  Tensor<T>& head_w = next_param();
  Tensor<T>& head_b = next_param();
  x = conv(x, head_w, head_b, 1, 0);
  return softmax(x, 1);
}

enum class SegMode { k2D, k3D };

// Extracts axial slice k (third spatial axis) of all four modalities
// as a [4, D, H] sample.
template <typename T>
Tensor<T> modality_slice(const CaseRecord& record, std::size_t k) {
  const auto shape = record.shape();
  std::vector<T> data;
  data.reserve(4 * shape[0] * shape[1]);
  for (Modality m : kAllModalities) {
    const Volume& vol = record.modality(m);
    for (std::size_t i = 0; i < shape[0]; ++i) {
      for (std::size_t j = 0; j < shape[1]; ++j) {
        data.push_back(static_cast<T>(vol.at(i, j, k)));
      }
    }
  }
  return Tensor<T>::from({4, shape[0], shape[1]}, std::move(data));
}

// Stacks all four modalities of a case as a [4, D, H, W] tensor.
template <typename T>
Tensor<T> modality_stack(const CaseRecord& record) {
  const auto shape = record.shape();
  std::vector<T> data;
  data.reserve(4 * shape[0] * shape[1] * shape[2]);
  for (Modality m : kAllModalities) {
    const Volume& vol = record.modality(m);
    data.insert(data.end(), vol.data.begin(), vol.data.end());
  }
  return Tensor<T>::from({4, shape[0], shape[1], shape[2]}, std::move(data));
}

// Runs a preprocessed case through the model. 2D mode feeds axial
// slices (batched) and restacks them in slice order; 3D mode feeds the
// whole volume. Both produce an aligned [4, D, H, W] probability
// volume.
ProbVolume segment_volume(UnetModel<float>& model, const CaseRecord& record,
                          SegMode mode);

}  // namespace glifuse
