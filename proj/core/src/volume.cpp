#include "glifuse/volume.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "glifuse/nifti.hpp"
#include "glifuse/rng.hpp"

namespace fs = std::filesystem;

namespace glifuse {

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::kFlair:
      return "flair";
    case Modality::kT1:
      return "t1";
    case Modality::kT1ce:
      return "t1ce";
    case Modality::kT2:
      return "t2";
  }
  return "?";
}

LabelMask ProbVolume::argmax_labels() const {
  const std::size_t classes = shape[0];
  const std::size_t voxels = shape[1] * shape[2] * shape[3];
  LabelMask mask;
  mask.shape = {shape[1], shape[2], shape[3]};
  mask.labels.resize(voxels);
  for (std::size_t v = 0; v < voxels; ++v) {
    std::size_t best = 0;
    float best_val = values[v];
    for (std::size_t c = 1; c < classes; ++c) {
      const float x = values[c * voxels + v];
      if (x > best_val) {
        best_val = x;
        best = c;
      }
    }
    mask.labels[v] = static_cast<std::uint8_t>(best);
  }
  return mask;
}

std::array<std::size_t, 3> CaseRecord::shape() const {
  if (modalities.empty()) {
    throw std::runtime_error("case " + case_id + " has no modalities");
  }
  return modalities.begin()->second.shape;
}

namespace {

void check_case_shapes(const CaseRecord& record) {
  if (record.modalities.size() != kAllModalities.size()) {
    throw std::invalid_argument("case " + record.case_id +
                                ": all four modalities must be present");
  }
  const auto shape = record.modalities.begin()->second.shape;
  for (const auto& [m, vol] : record.modalities) {
    if (vol.shape != shape) {
      throw std::invalid_argument("case " + record.case_id +
                                  ": modality shape mismatch");
    }
    if (vol.data.size() != vol.voxel_count()) {
      throw std::invalid_argument("case " + record.case_id +
                                  ": voxel buffer size mismatch");
    }
  }
  if (record.mask && record.mask->shape != shape) {
    throw std::invalid_argument("case " + record.case_id +
                                ": mask shape mismatch");
  }
}

Volume normalize_min_max(const Volume& in) {
  Volume out;
  out.shape = in.shape;
  out.spacing = in.spacing;
  out.data.resize(in.data.size());
  float lo = in.data.empty() ? 0.0f : in.data[0];
  float hi = lo;
  for (float v : in.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float range = hi - lo;
  if (range <= 0.0f) {
    // Degenerate constant modality: defined as all zeros.
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  }
  for (std::size_t i = 0; i < in.data.size(); ++i) {
    out.data[i] = (in.data[i] - lo) / range;
  }
  return out;
}

std::array<std::size_t, 3> crop_offsets(const std::array<std::size_t, 3>& in,
                                        const std::array<std::size_t, 3>& out) {
  std::array<std::size_t, 3> off{};
  for (int a = 0; a < 3; ++a) {
    if (out[a] > in[a]) {
      throw std::invalid_argument("crop target larger than input extent");
    }
    if (out[a] == 0) {
      throw std::invalid_argument("crop target extent must be positive");
    }
    off[a] = (in[a] - out[a]) / 2;
  }
  return off;
}

template <typename T>
std::vector<T> crop_grid(const std::vector<T>& data,
                         const std::array<std::size_t, 3>& in,
                         const std::array<std::size_t, 3>& out,
                         const std::array<std::size_t, 3>& off) {
  std::vector<T> result(out[0] * out[1] * out[2]);
  for (std::size_t i = 0; i < out[0]; ++i) {
    for (std::size_t j = 0; j < out[1]; ++j) {
      const T* src =
          data.data() + ((i + off[0]) * in[1] + (j + off[1])) * in[2] + off[2];
      T* dst = result.data() + (i * out[1] + j) * out[2];
      std::copy(src, src + out[2], dst);
    }
  }
  return result;
}

}  // namespace

CaseRecord preprocess_case(const CaseRecord& record,
                           const std::array<std::size_t, 3>& target) {
  check_case_shapes(record);
  const auto in_shape = record.shape();
  const auto off = crop_offsets(in_shape, target);

  CaseRecord out;
  out.case_id = record.case_id;
  for (const auto& [m, vol] : record.modalities) {
    Volume normalized = normalize_min_max(vol);
    Volume cropped;
    cropped.shape = target;
    cropped.spacing = vol.spacing;
    cropped.data = crop_grid(normalized.data, in_shape, target, off);
    out.modalities.emplace(m, std::move(cropped));
  }
  if (record.mask) {
    LabelMask mask;
    mask.shape = target;
    mask.labels = crop_grid(record.mask->labels, in_shape, target, off);
    for (auto& v : mask.labels) {
      if (v == 4) {
        v = 3;
      } else if (v > 4) {
        throw std::invalid_argument("case " + record.case_id +
                                    ": unexpected label " + std::to_string(v));
      }
    }
    out.mask = std::move(mask);
  }
  return out;
}

RegionMasks derive_regions(const LabelMask& mask) {
  RegionMasks r;
  r.wt.shape = r.tc.shape = r.et.shape = mask.shape;
  const std::size_t n = mask.voxel_count();
  r.wt.labels.resize(n);
  r.tc.labels.resize(n);
  r.et.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t v = mask.labels[i];
    if (v > 3) {
      throw std::invalid_argument("derive_regions: label out of range: " +
                                  std::to_string(v));
    }
    r.wt.labels[i] = v != 0;
    r.tc.labels[i] = v == 1 || v == 3;
    r.et.labels[i] = v == 3;
  }
  return r;
}

DatasetSplit split_dataset(std::vector<std::string> case_ids, double ratio,
                           std::uint64_t seed) {
  if (case_ids.size() < 2) {
    throw std::invalid_argument("split_dataset: need at least 2 cases");
  }
  if (!(ratio > 0.0 && ratio < 1.0)) {
    throw std::invalid_argument("split_dataset: ratio must be in (0,1)");
  }
  std::sort(case_ids.begin(), case_ids.end());
  Rng rng(seed);
  rng.shuffle(case_ids);
  const auto n_train = static_cast<std::size_t>(
      std::lround(ratio * static_cast<double>(case_ids.size())));
  DatasetSplit split;
  split.seed = seed;
  split.train.assign(case_ids.begin(), case_ids.begin() + n_train);
  split.validation.assign(case_ids.begin() + n_train, case_ids.end());
  return split;
}

std::vector<std::uint8_t> mask_slice(const LabelMask& mask, std::size_t k) {
  if (k >= mask.shape[2]) {
    throw std::out_of_range("mask_slice: slice index out of range");
  }
  std::vector<std::uint8_t> out(mask.shape[0] * mask.shape[1]);
  for (std::size_t i = 0; i < mask.shape[0]; ++i) {
    for (std::size_t j = 0; j < mask.shape[1]; ++j) {
      out[i * mask.shape[1] + j] = mask.at(i, j, k);
    }
  }
  return out;
}

namespace {

std::array<std::size_t, 3> shape3(const NiftiImage& img,
                                  const std::string& path) {
  if (img.header.rank() != 3) {
    throw std::runtime_error("expected a rank-3 image: " + path);
  }
  const auto e = img.header.extents();
  return {e[0], e[1], e[2]};
}

}  // namespace

Volume read_volume(const std::string& path) {
  NiftiImage img = read_nifti(path);
  Volume v;
  v.shape = shape3(img, path);
  v.spacing = {img.header.pixdim[1], img.header.pixdim[2],
               img.header.pixdim[3]};
  v.data = std::move(img.values);
  return v;
}

LabelMask read_mask(const std::string& path) {
  NiftiImage img = read_nifti(path);
  LabelMask m;
  m.shape = shape3(img, path);
  m.labels.resize(img.values.size());
  for (std::size_t i = 0; i < img.values.size(); ++i) {
    const float v = img.values[i];
    const float r = std::nearbyint(v);
    if (r < 0.0f || r > 255.0f || std::abs(v - r) > 1e-3f) {
      throw std::runtime_error("mask voxels must be small integers: " + path);
    }
    m.labels[i] = static_cast<std::uint8_t>(r);
  }
  return m;
}

ProbVolume read_prob_volume(const std::string& path) {
  NiftiImage img = read_nifti(path);
  if (img.header.rank() != 4) {
    throw std::runtime_error("expected a rank-4 image: " + path);
  }
  const auto e = img.header.extents();
  ProbVolume p;
  p.shape = {e[0], e[1], e[2], e[3]};
  p.values = std::move(img.values);
  return p;
}

void write_volume(const std::string& path, const Volume& volume) {
  NiftiHeader h = make_nifti_header(
      {volume.shape[0], volume.shape[1], volume.shape[2]}, kNiftiFloat32,
      {volume.spacing[0], volume.spacing[1], volume.spacing[2]});
  write_nifti(path, h, volume.data);
}

void write_mask(const std::string& path, const LabelMask& mask) {
  NiftiHeader h = make_nifti_header(
      {mask.shape[0], mask.shape[1], mask.shape[2]}, kNiftiUint8);
  std::vector<float> values(mask.labels.begin(), mask.labels.end());
  write_nifti(path, h, values);
}

void write_prob_volume(const std::string& path, const ProbVolume& probs) {
  NiftiHeader h = make_nifti_header(
      {probs.shape[0], probs.shape[1], probs.shape[2], probs.shape[3]},
      kNiftiFloat32);
  write_nifti(path, h, probs.values);
}

namespace {

// Returns the path to "<dir>/<id>_<suffix>.nii" or its .gz twin, empty
// string when neither exists.
std::string find_component(const fs::path& dir, const std::string& id,
                           const std::string& suffix) {
  fs::path plain = dir / (id + "_" + suffix + ".nii");
  if (fs::exists(plain)) {
    return plain.string();
  }
  fs::path gz = dir / (id + "_" + suffix + ".nii.gz");
  if (fs::exists(gz)) {
    return gz.string();
  }
  return {};
}

}  // namespace

std::vector<CasePaths> discover_cases(const std::string& data_dir) {
  if (!fs::is_directory(data_dir)) {
    throw std::runtime_error("data directory not found: " + data_dir);
  }
  std::vector<CasePaths> cases;
  for (const auto& entry : fs::directory_iterator(data_dir)) {
    if (!entry.is_directory()) {
      continue;
    }
    const std::string id = entry.path().filename().string();
    CasePaths cp;
    cp.case_id = id;
    bool complete = true;
    for (Modality m : kAllModalities) {
      std::string p = find_component(entry.path(), id, modality_name(m));
      if (p.empty()) {
        complete = false;
        break;
      }
      cp.modality_paths[m] = std::move(p);
    }
    if (!complete) {
      continue;
    }
    std::string seg = find_component(entry.path(), id, "seg");
    if (!seg.empty()) {
      cp.seg_path = std::move(seg);
    }
    cases.push_back(std::move(cp));
  }
  std::sort(cases.begin(), cases.end(),
            [](const CasePaths& a, const CasePaths& b) {
              return a.case_id < b.case_id;
            });
  return cases;
}

CaseRecord load_case(const CasePaths& paths) {
  CaseRecord record;
  record.case_id = paths.case_id;
  for (const auto& [m, p] : paths.modality_paths) {
    record.modalities.emplace(m, read_volume(p));
  }
  if (paths.seg_path) {
    record.mask = read_mask(*paths.seg_path);
  }
  check_case_shapes(record);
  return record;
}

void write_case(const std::string& data_dir, const CaseRecord& record,
                bool brats_raw_labels) {
  check_case_shapes(record);
  fs::path dir = fs::path(data_dir) / record.case_id;
  fs::create_directories(dir);
  for (const auto& [m, vol] : record.modalities) {
    write_volume(
        (dir / (record.case_id + "_" + modality_name(m) + ".nii")).string(),
        vol);
  }
  if (record.mask) {
    LabelMask mask = *record.mask;
    if (brats_raw_labels) {
      for (auto& v : mask.labels) {
        if (v == 3) {
          v = 4;
        }
      }
    }
    write_mask((dir / (record.case_id + "_seg.nii")).string(), mask);
  }
}

}  // namespace glifuse
