#include "glifuse/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "glifuse/rng.hpp"

namespace glifuse {

namespace {

// Region order: background, NCR, ED, ET. Values are spaced >= 0.2
// within each modality so the classes stay separable at small scale:
// FLAIR shows edema bright, T1CE shows enhancing tumor bright and the
// necrotic core dark, T2 shows edema and core bright, T1 shows tumor
// mildly hypointense.
constexpr std::array<std::array<double, 4>, 4> kIntensity{{
    // bg    NCR   ED    ET
    {0.10, 0.50, 0.90, 0.70},  // FLAIR
    {0.80, 0.20, 0.60, 0.40},  // T1
    {0.30, 0.00, 0.55, 0.95},  // T1CE
    {0.15, 0.75, 0.95, 0.45},  // T2
}};

std::size_t modality_index(Modality m) {
  switch (m) {
    case Modality::kFlair:
      return 0;
    case Modality::kT1:
      return 1;
    case Modality::kT1ce:
      return 2;
    case Modality::kT2:
      return 3;
  }
  return 0;
}

double clamped_gaussian(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  double g = rng.gaussian() * sigma;
  // Truncate at 4 sigma so intensities stay near the nominal range.
  return std::clamp(g, -4.0 * sigma, 4.0 * sigma);
}

}  // namespace

void PhantomSpec::validate() const {
  if (shape[0] == 0 || shape[1] == 0 || shape[2] == 0) {
    throw std::invalid_argument("PhantomSpec: empty volume");
  }
  if (!(radii[0] > 0.0 && radii[0] < radii[1] && radii[1] < radii[2])) {
    throw std::invalid_argument("PhantomSpec: radii must be strictly increasing");
  }
  for (int a = 0; a < 3; ++a) {
    if (tumor_center[a] - radii[2] < 0.0 ||
        tumor_center[a] + radii[2] > static_cast<double>(shape[a] - 1)) {
      throw std::invalid_argument("PhantomSpec: tumor extends outside the volume");
    }
  }
}

CaseRecord generate_case(const PhantomSpec& spec) {
  spec.validate();
  const std::size_t n = spec.shape[0] * spec.shape[1] * spec.shape[2];

  // Label geometry first; shared by every modality.
  LabelMask mask;
  mask.shape = spec.shape;
  mask.labels.resize(n);
  std::size_t at = 0;
  for (std::size_t i = 0; i < spec.shape[0]; ++i) {
    for (std::size_t j = 0; j < spec.shape[1]; ++j) {
      for (std::size_t k = 0; k < spec.shape[2]; ++k, ++at) {
        const double di = static_cast<double>(i) - spec.tumor_center[0];
        const double dj = static_cast<double>(j) - spec.tumor_center[1];
        const double dk = static_cast<double>(k) - spec.tumor_center[2];
        const double r = std::sqrt(di * di + dj * dj + dk * dk);
        std::uint8_t label = 0;
        if (r < spec.radii[0]) {
          label = 1;  // necrotic core
        } else if (r < spec.radii[1]) {
          label = 3;  // enhancing shell
        } else if (r < spec.radii[2]) {
          label = 2;  // edema shell
        }
        mask.labels[at] = label;
      }
    }
  }

  CaseRecord record;
  record.case_id = "phantom";
  for (Modality m : kAllModalities) {
    Rng rng(derive_seed(spec.seed, modality_name(m)));
    const auto& table = kIntensity[modality_index(m)];
    Volume vol;
    vol.shape = spec.shape;
    vol.data.resize(n);
    float lo = 1e30f, hi = -1e30f;
    for (std::size_t v = 0; v < n; ++v) {
      // Label -> intensity table index: 0->bg, 1->NCR, 2->ED, 3->ET.
      const double base = table[mask.labels[v]];
      const float x =
          static_cast<float>(base + clamped_gaussian(rng, spec.noise_sigma));
      vol.data[v] = x;
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
    const float range = hi - lo;
    if (range > 0.0f) {
      for (auto& x : vol.data) {
        x = (x - lo) / range;
      }
    } else {
      for (auto& x : vol.data) {
        x = 0.0f;
      }
    }
    record.modalities.emplace(m, std::move(vol));
  }
  record.mask = std::move(mask);
  return record;
}

PhantomSpec phantom_for_case(const std::array<std::size_t, 3>& shape,
                             std::uint64_t dataset_seed, std::size_t index,
                             double noise_sigma) {
  Rng rng(derive_seed(dataset_seed, "phantom-case-" + std::to_string(index)));
  PhantomSpec spec;
  spec.shape = shape;
  spec.noise_sigma = noise_sigma;
  spec.seed = rng.next_u64();
  const double min_extent = static_cast<double>(
      std::min({shape[0], shape[1], shape[2]}));
  // Radii scaled to the volume, then the center jittered while keeping
  // the outer shell inside.
  const double r_ed = min_extent * rng.uniform(0.20, 0.26);
  const double r_et = r_ed * rng.uniform(0.55, 0.70);
  const double r_ncr = r_et * rng.uniform(0.45, 0.65);
  spec.radii = {r_ncr, r_et, r_ed};
  for (int a = 0; a < 3; ++a) {
    const double half = static_cast<double>(shape[a] - 1) / 2.0;
    const double slack = half - r_ed - 1.0;
    const double jitter = slack > 0.0 ? rng.uniform(-slack * 0.5, slack * 0.5)
                                      : 0.0;
    spec.tumor_center[a] = half + jitter;
  }
  return spec;
}

void AugmentConfig::validate() const {
  if (rotation_degrees < 0.0) {
    throw std::invalid_argument("AugmentConfig: rotation range must be >= 0");
  }
  if (!(scale_range[0] <= 1.0 && 1.0 <= scale_range[1])) {
    throw std::invalid_argument("AugmentConfig: scale range must bracket 1");
  }
  if (!(contrast_range[0] <= 1.0 && 1.0 <= contrast_range[1])) {
    throw std::invalid_argument("AugmentConfig: contrast range must bracket 1");
  }
  if (noise_sigma < 0.0) {
    throw std::invalid_argument("AugmentConfig: noise sigma must be >= 0");
  }
}

namespace {

struct InPlaneTransform {
  // Inverse map coefficients: source = center + M * (dest - center).
  double m00, m01, m10, m11;
  bool identity;
};

InPlaneTransform make_transform(double angle_rad, double scale) {
  InPlaneTransform t{};
  t.identity = angle_rad == 0.0 && scale == 1.0;
  const double c = std::cos(angle_rad);
  const double s = std::sin(angle_rad);
  // Inverse of rotate-then-scale: rotate by -angle, scale by 1/scale.
  t.m00 = c / scale;
  t.m01 = s / scale;
  t.m10 = -s / scale;
  t.m11 = c / scale;
  return t;
}

Volume warp_volume(const Volume& in, const InPlaneTransform& t) {
  if (t.identity) return in;
  Volume out;
  out.shape = in.shape;
  out.spacing = in.spacing;
  out.data.assign(in.data.size(), 0.0f);
  const double ci = static_cast<double>(in.shape[0] - 1) / 2.0;
  const double cj = static_cast<double>(in.shape[1] - 1) / 2.0;
  for (std::size_t i = 0; i < in.shape[0]; ++i) {
    for (std::size_t j = 0; j < in.shape[1]; ++j) {
      const double di = static_cast<double>(i) - ci;
      const double dj = static_cast<double>(j) - cj;
      const double si = ci + t.m00 * di + t.m01 * dj;
      const double sj = cj + t.m10 * di + t.m11 * dj;
      const auto i0 = static_cast<std::ptrdiff_t>(std::floor(si));
      const auto j0 = static_cast<std::ptrdiff_t>(std::floor(sj));
      const double fi = si - static_cast<double>(i0);
      const double fj = sj - static_cast<double>(j0);
      for (std::size_t k = 0; k < in.shape[2]; ++k) {
        double acc = 0.0;
        for (int a = 0; a < 2; ++a) {
          for (int b = 0; b < 2; ++b) {
            const std::ptrdiff_t ii = i0 + a;
            const std::ptrdiff_t jj = j0 + b;
            if (ii < 0 || jj < 0 ||
                ii >= static_cast<std::ptrdiff_t>(in.shape[0]) ||
                jj >= static_cast<std::ptrdiff_t>(in.shape[1])) {
              continue;  // zero fill outside
            }
            const double w = (a == 0 ? 1.0 - fi : fi) * (b == 0 ? 1.0 - fj : fj);
            acc += w * in.at(static_cast<std::size_t>(ii),
                             static_cast<std::size_t>(jj), k);
          }
        }
        out.at(i, j, k) = static_cast<float>(acc);
      }
    }
  }
  return out;
}

LabelMask warp_mask(const LabelMask& in, const InPlaneTransform& t) {
  if (t.identity) return in;
  LabelMask out;
  out.shape = in.shape;
  out.labels.assign(in.labels.size(), 0);
  const double ci = static_cast<double>(in.shape[0] - 1) / 2.0;
  const double cj = static_cast<double>(in.shape[1] - 1) / 2.0;
  for (std::size_t i = 0; i < in.shape[0]; ++i) {
    for (std::size_t j = 0; j < in.shape[1]; ++j) {
      const double di = static_cast<double>(i) - ci;
      const double dj = static_cast<double>(j) - cj;
      const double si = ci + t.m00 * di + t.m01 * dj;
      const double sj = cj + t.m10 * di + t.m11 * dj;
      const auto ii = static_cast<std::ptrdiff_t>(std::lround(si));
      const auto jj = static_cast<std::ptrdiff_t>(std::lround(sj));
      if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(in.shape[0]) ||
          jj >= static_cast<std::ptrdiff_t>(in.shape[1])) {
        continue;
      }
      for (std::size_t k = 0; k < in.shape[2]; ++k) {
        out.at(i, j, k) = in.at(static_cast<std::size_t>(ii),
                                static_cast<std::size_t>(jj), k);
      }
    }
  }
  return out;
}

}  // namespace

CaseRecord augment_case(const CaseRecord& record, const AugmentConfig& config,
                        std::uint64_t draw_seed) {
  config.validate();
  Rng rng(derive_seed(draw_seed, "augment"));
  const double angle_deg =
      config.rotation_degrees == 0.0
          ? 0.0
          : rng.uniform(-config.rotation_degrees, config.rotation_degrees);
  const double scale =
      config.scale_range[0] == config.scale_range[1]
          ? config.scale_range[0]
          : rng.uniform(config.scale_range[0], config.scale_range[1]);
  const double sigma =
      config.noise_sigma == 0.0 ? 0.0 : rng.uniform(0.0, config.noise_sigma);
  const double gamma =
      config.contrast_range[0] == config.contrast_range[1]
          ? config.contrast_range[0]
          : rng.uniform(config.contrast_range[0], config.contrast_range[1]);

  const auto t = make_transform(angle_deg * std::numbers::pi / 180.0, scale);

  CaseRecord out;
  out.case_id = record.case_id;
  for (const auto& [m, vol] : record.modalities) {
    Volume v = warp_volume(vol, t);
    if (sigma > 0.0) {
      for (auto& x : v.data) {
        x = static_cast<float>(x + clamped_gaussian(rng, sigma));
      }
    }
    if (gamma != 1.0) {
      for (auto& x : v.data) {
        x = std::pow(std::max(x, 0.0f), static_cast<float>(gamma));
      }
    }
    if (sigma > 0.0 || gamma != 1.0) {
      for (auto& x : v.data) {
        x = std::clamp(x, 0.0f, 1.0f);
      }
    }
    out.modalities.emplace(m, std::move(v));
  }
  if (record.mask) {
    out.mask = warp_mask(*record.mask, t);
  }
  return out;
}

}  // namespace glifuse
