#pragma once

// Synthetic multimodal tumor cases: concentric spherical regions
// (necrotic core inside r_ncr, enhancing shell to r_et, edema shell to
// r_ed) rendered into four modalities with qualitative clinical
// contrast, plus the training-time augmentation transforms (in-plane
// rotation and scaling, Gaussian noise, gamma contrast).

#include <array>
#include <cstdint>

#include "glifuse/volume.hpp"

namespace glifuse {

struct PhantomSpec {
  std::array<std::size_t, 3> shape{64, 64, 64};
  std::array<double, 3> tumor_center{32.0, 32.0, 32.0};
  // r_ncr < r_et < r_ed, in voxels.
  std::array<double, 3> radii{6.0, 10.0, 16.0};
  double noise_sigma = 0.02;  // fraction of the intensity range
  std::uint64_t seed = 0;

  void validate() const;
};

// Deterministic under (spec, spec.seed). Labels: 1 inside r_ncr,
// 3 in [r_ncr, r_et), 2 in [r_et, r_ed), 0 outside. Modalities are
// min-max normalized to [0,1].
CaseRecord generate_case(const PhantomSpec& spec);

// Draws a case spec with jittered center/radii for case index `index`
// under a dataset-level seed; used to build multi-case phantom sets.
PhantomSpec phantom_for_case(const std::array<std::size_t, 3>& shape,
                             std::uint64_t dataset_seed, std::size_t index,
                             double noise_sigma = 0.02);

struct AugmentConfig {
  double rotation_degrees = 10.0;       // max |angle|, in-plane
  std::array<double, 2> scale_range{0.9, 1.1};
  double noise_sigma = 0.01;
  std::array<double, 2> contrast_range{0.8, 1.2};  // gamma
  std::uint64_t seed = 0;

  void validate() const;
};

// Samples one rotation angle, scale factor, noise level and contrast
// gamma under `draw_seed`, then applies the identical in-plane
// geometric transform to all four modalities (bilinear) and the mask
// (nearest neighbor), followed by clamped noise and gamma adjustment on
// the images only.
CaseRecord augment_case(const CaseRecord& record, const AugmentConfig& config,
                        std::uint64_t draw_seed);

}  // namespace glifuse
