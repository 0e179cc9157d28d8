#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace glifuse {

enum class Modality { kFlair, kT1, kT1ce, kT2 };

constexpr std::array<Modality, 4> kAllModalities = {
    Modality::kFlair, Modality::kT1, Modality::kT1ce, Modality::kT2};

// File-name suffix for a modality ("flair", "t1", "t1ce", "t2").
const char* modality_name(Modality m);

// One MRI modality as a (D, H, W) voxel grid, row-major with W fastest.
struct Volume {
  std::array<std::size_t, 3> shape{};
  std::array<float, 3> spacing{1.0f, 1.0f, 1.0f};
  std::vector<float> data;

  std::size_t voxel_count() const { return shape[0] * shape[1] * shape[2]; }
  float& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  float at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
};

// Integer segmentation labels on the same grid. After preprocessing,
// labels are restricted to {0 background, 1 NCR/NET, 2 ED, 3 ET}.
struct LabelMask {
  std::array<std::size_t, 3> shape{};
  std::vector<std::uint8_t> labels;

  std::size_t voxel_count() const { return shape[0] * shape[1] * shape[2]; }
  std::uint8_t& at(std::size_t i, std::size_t j, std::size_t k) {
    return labels[(i * shape[1] + j) * shape[2] + k];
  }
  std::uint8_t at(std::size_t i, std::size_t j, std::size_t k) const {
    return labels[(i * shape[1] + j) * shape[2] + k];
  }
};

// Per-voxel class probabilities, shape (C, D, H, W) row-major.
struct ProbVolume {
  std::array<std::size_t, 4> shape{};
  std::vector<float> values;

  std::size_t count() const {
    return shape[0] * shape[1] * shape[2] * shape[3];
  }
  float at(std::size_t c, std::size_t i, std::size_t j, std::size_t k) const {
    return values[((c * shape[1] + i) * shape[2] + j) * shape[3] + k];
  }
  // Per-voxel argmax over the class axis (lowest index wins ties).
  LabelMask argmax_labels() const;
};

// One subject: four co-registered modalities plus an optional label mask.
struct CaseRecord {
  std::string case_id;
  std::map<Modality, Volume> modalities;
  std::optional<LabelMask> mask;

  const Volume& modality(Modality m) const { return modalities.at(m); }
  std::array<std::size_t, 3> shape() const;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::uint64_t seed = 0;
};

// Binary region masks derived from a label mask: enhancing tumor {3},
// tumor core {1,3}, whole tumor {1,2,3}. Nested ET <= TC <= WT.
struct RegionMasks {
  LabelMask wt;
  LabelMask tc;
  LabelMask et;
};

// ---- preprocessing ----

// Independent per-modality min-max normalization to [0,1] (a constant
// modality maps to all zeros), then a symmetric center crop to `target`
// with per-axis offset floor((in-out)/2). The mask is cropped with the
// same offsets and label 4 is reassigned to 3.
CaseRecord preprocess_case(const CaseRecord& record,
                           const std::array<std::size_t, 3>& target);

RegionMasks derive_regions(const LabelMask& mask);

// Deterministic shuffle of the ids under `seed`; the first
// round(ratio*N) ids become the training set.
DatasetSplit split_dataset(std::vector<std::string> case_ids, double ratio,
                           std::uint64_t seed);

// Axial slice k (third axis) of a label mask as a flat (D*H) row-major
// label vector.
std::vector<std::uint8_t> mask_slice(const LabelMask& mask, std::size_t k);

// ---- typed NIfTI helpers ----

Volume read_volume(const std::string& path);
LabelMask read_mask(const std::string& path);
ProbVolume read_prob_volume(const std::string& path);
void write_volume(const std::string& path, const Volume& volume);
void write_mask(const std::string& path, const LabelMask& mask);
void write_prob_volume(const std::string& path, const ProbVolume& probs);

// ---- BraTS-style directory layout ----
// One folder per case holding <id>_flair.nii, <id>_t1.nii, <id>_t1ce.nii,
// <id>_t2.nii and optionally <id>_seg.nii (each optionally .gz).

struct CasePaths {
  std::string case_id;
  std::map<Modality, std::string> modality_paths;
  std::optional<std::string> seg_path;
};

// Scans `data_dir` for complete case folders; results sorted by id.
std::vector<CasePaths> discover_cases(const std::string& data_dir);

CaseRecord load_case(const CasePaths& paths);

// Writes a case folder. When `brats_raw_labels` is set, enhancing tumor
// is stored as label 4 in the seg file (the on-disk convention of the
// source datasets); in-memory masks always use label 3.
void write_case(const std::string& data_dir, const CaseRecord& record,
                bool brats_raw_labels = true);

}  // namespace glifuse
