#pragma once

// Bottleneck residual classifier over 4-channel fused probability
// slices. Stem: 7x7 stride-2 convolution, then 3x3 stride-2 max pool;
// four stages of bottleneck blocks (1x1 reduce, 3x3, 1x1 expand,
// identity or projection shortcut); global average pooling and an
// affine head of num_classes outputs. At width_scale = 1 the stage
// output channels are 256/512/1024/2048.

#include <array>
#include <cmath>
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

struct ResNetSpec {
  std::array<int, 4> stage_blocks{3, 4, 6, 3};
  int stem_channels = 64;
  int expansion = 4;
  int num_classes = 4;
  int in_channels = 4;
  double width_scale = 1.0;

  void validate() const {
    for (int b : stage_blocks) {
      if (b < 1) {
        throw std::invalid_argument("ResNetSpec: stage_blocks must be positive");
      }
    }
    if (stem_channels < 1 || expansion < 1 || num_classes < 1 ||
        in_channels < 1) {
      throw std::invalid_argument("ResNetSpec: all sizes must be positive");
    }
    if (width_scale <= 0.0) {
      throw std::invalid_argument("ResNetSpec: width_scale must be positive");
    }
    if (scaled(stem_channels) < 1) {
      throw std::invalid_argument("ResNetSpec: width_scale shrinks stem to zero");
    }
  }

  int scaled(int channels) const {
    const int c = static_cast<int>(std::lround(channels * width_scale));
    return c < 1 ? 1 : c;
  }
  // Bottleneck width of stage i (0-based): 64*2^i before expansion.
  int stage_width(int stage) const { return scaled(64 << stage); }
  int stage_out_channels(int stage) const {
    return stage_width(stage) * expansion;
  }
};

enum class SubclassLabel : std::uint8_t {
  kNoTumor = 0,
  kNcrNet = 1,
  kEdema = 2,
  kEnhancing = 3,
};

template <typename T>
struct ClassifierModel {
  ResNetSpec spec;
  ParamList<T> params;
  std::vector<BatchNormState<T>> norm_states;

  std::vector<Tensor<T>> decaying_weights() const {
    std::vector<Tensor<T>> w;
    for (const auto& p : params) {
      if (p.decay) w.push_back(p.tensor);
    }
    return w;
  }
};

template <typename T>
ClassifierModel<T> build_resnet(const ResNetSpec& spec, std::uint64_t seed);

// Logits [N, num_classes] for a batch of fused slices
// [N, in_channels, H, W].
template <typename T>
Tensor<T> resnet_forward(ClassifierModel<T>& model, const Tensor<T>& batch,
                         Mode mode);

struct Classification {
  std::array<float, 4> probabilities{};
  SubclassLabel label = SubclassLabel::kNoTumor;
};

// Softmax over the logits of one fused slice [4, H, W]; ties break
// toward the lowest class index.
Classification classify(ClassifierModel<float>& model,
                        const Tensor<float>& slice, Mode mode = Mode::kEval);

// Ground-truth subclass of a mask slice: background-only slices are
// NoTumor, otherwise the non-background label with the highest voxel
// count (count ties resolve to the lowest label).
SubclassLabel derive_subclass_label(const std::vector<std::uint8_t>& slice_labels);

// Slice k of a probability volume as a [C, D, H] tensor.
Tensor<float> prob_slice(const ProbVolume& probs, std::size_t k);

// ---- implementation ----

namespace detail {

template <typename T>
struct ResBuild {
  ClassifierModel<T>* model;
  Rng rng;

  void conv(const std::string& name, int in_ch, int out_ch, int k) {
    model->params.push_back(
        {name + ".w",
         init_conv_weight<T>(rng, static_cast<std::size_t>(out_ch),
                             static_cast<std::size_t>(in_ch), 2,
                             static_cast<std::size_t>(k)),
         true});
  }
  void norm(const std::string& name, int channels) {
    model->params.push_back(
        {name + ".gamma",
         Tensor<T>::full({static_cast<std::size_t>(channels)}, T(1)), false});
    model->params.push_back(
        {name + ".beta",
         Tensor<T>::zeros({static_cast<std::size_t>(channels)}), false});
    model->norm_states.emplace_back(static_cast<std::size_t>(channels));
  }
};

}  // namespace detail

template <typename T>
ClassifierModel<T> build_resnet(const ResNetSpec& spec, std::uint64_t seed) {
  spec.validate();
  ClassifierModel<T> model;
  model.spec = spec;
  detail::ResBuild<T> b{&model, Rng(derive_seed(seed, "resnet-init"))};

  const int stem = spec.scaled(spec.stem_channels);
  b.conv("stem.conv", spec.in_channels, stem, 7);
  b.norm("stem.bn", stem);

  int in_ch = stem;
  for (int s = 0; s < 4; ++s) {
    const int width = spec.stage_width(s);
    const int out_ch = spec.stage_out_channels(s);
    for (int blk = 0; blk < spec.stage_blocks[static_cast<std::size_t>(s)];
         ++blk) {
      const std::string base =
          "stage" + std::to_string(s) + ".block" + std::to_string(blk);
      b.conv(base + ".conv1", in_ch, width, 1);
      b.norm(base + ".bn1", width);
      b.conv(base + ".conv2", width, width, 3);
      b.norm(base + ".bn2", width);
      b.conv(base + ".conv3", width, out_ch, 1);
      b.norm(base + ".bn3", out_ch);
      const bool project = blk == 0 && (in_ch != out_ch || s > 0);
      if (project) {
        b.conv(base + ".down", in_ch, out_ch, 1);
        b.norm(base + ".down_bn", out_ch);
      }
      in_ch = out_ch;
    }
  }

  // Affine head replaces the 1000-way pretraining head.
  const std::size_t d = static_cast<std::size_t>(in_ch);
  const std::size_t m = static_cast<std::size_t>(spec.num_classes);
  const double bound = std::sqrt(6.0 / static_cast<double>(d));
  std::vector<T> w(d * m);
  for (auto& v : w) v = static_cast<T>(b.rng.uniform(-bound, bound));
  model.params.push_back({"head.fc.w", Tensor<T>::from({d, m}, std::move(w)), true});
  model.params.push_back({"head.fc.b", Tensor<T>::zeros({m}), false});
  return model;
}

template <typename T>
Tensor<T> resnet_forward(ClassifierModel<T>& model, const Tensor<T>& batch,
                         Mode mode) {
  const auto& spec = model.spec;
  if (batch.rank() != 4) {
    throw std::invalid_argument("resnet_forward: input must be [N, C, H, W]");
  }
  if (batch.extent(1) != static_cast<std::size_t>(spec.in_channels)) {
    throw std::invalid_argument("resnet_forward: expected " +
                                std::to_string(spec.in_channels) +
                                " input channels");
  }
  if (batch.extent(2) < 8 || batch.extent(3) < 8) {
    throw std::invalid_argument(
        "resnet_forward: spatial extents below stem requirements");
  }

  std::size_t pi = 0;
  std::size_t ni = 0;
  auto next_param = [&]() -> Tensor<T>& { return model.params.at(pi++).tensor; };
  Tensor<T> none;
  auto conv_bn = [&](const Tensor<T>& x, std::size_t stride, std::size_t pad) {
    Tensor<T>& w = next_param();
    Tensor<T> y = conv(x, w, none, stride, pad);
    Tensor<T>& gamma = next_param();
    Tensor<T>& beta = next_param();
    return batch_norm(y, gamma, beta, model.norm_states.at(ni++), mode);
  };

  Tensor<T> x = relu(conv_bn(batch, 2, 3));
  x = maxpool(x, 3, 2, 1);

  int in_ch = spec.scaled(spec.stem_channels);
  for (int s = 0; s < 4; ++s) {
    const int out_ch = spec.stage_out_channels(s);
    for (int blk = 0; blk < spec.stage_blocks[static_cast<std::size_t>(s)];
         ++blk) {
      const std::size_t stride = (blk == 0 && s > 0) ? 2 : 1;
      Tensor<T> y = relu(conv_bn(x, 1, 0));
      y = relu(conv_bn(y, stride, 1));
      y = conv_bn(y, 1, 0);
      Tensor<T> shortcut = x;
      const bool project = blk == 0 && (in_ch != out_ch || s > 0);
      if (project) {
        shortcut = conv_bn(x, stride, 0);
      }
      x = relu(add(y, shortcut));
      in_ch = out_ch;
    }
  }

  Tensor<T> pooled = global_avg_pool(x);
  Tensor<T>& w = next_param();
  Tensor<T>& bias = next_param();
  return affine(pooled, w, bias);
}

}  // namespace glifuse
