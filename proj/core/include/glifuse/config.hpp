#pragma once

// Run configuration with JSON load/save. Defaults follow the published
// training setup: segmentation lr 5e-4, batch 8, 100 epochs; classifier
// lr 1e-3, batch 32, weight decay 1e-5 with cosine annealing; fusion
// weight 0.6.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "glifuse/phantom.hpp"
#include "glifuse/resnet.hpp"
#include "glifuse/unet.hpp"

namespace glifuse {

struct LossSettings {
  double smooth = 1.0;       // Dice smoothing term
  double focal_gamma = 2.0;  // focusing exponent
  std::vector<double> focal_weights;  // empty = unit class weights
  double l2_lambda = 0.0;
  double dice_weight = 1.0;
  double focal_weight = 1.0;
};

struct SegSettings {
  std::string mode = "2d";  // "2d" or "3d"
  double lr = 5e-4;
  double eta_min = 0.0;
  int batch = 8;
  int epochs = 100;
  // depth/base_channels < 0 pick the per-mode defaults: depth 4 /
  // base 16 for 2d, depth 3 / base 8 for 3d.
  int depth = -1;
  int base_channels = -1;
  double dropout = 0.1;
  bool augment = true;

  UnetSpec unet_spec() const;
};

struct ClsSettings {
  double lr = 1e-3;
  double eta_min = 0.0;
  int batch = 32;
  int epochs = 100;
  double weight_decay = 1e-5;
  double width_scale = 1.0;
  std::array<int, 4> stage_blocks{3, 4, 6, 3};

  ResNetSpec resnet_spec() const;
};

struct FusionSettings {
  double alpha = 0.6;
  bool grid_search = false;
  std::vector<double> grid;  // empty = default 0.0..1.0 step 0.1
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::string data_dir;
  std::string output_dir;
  std::array<std::size_t, 3> crop_target{128, 128, 128};
  SegSettings seg;
  ClsSettings cls;
  FusionSettings fusion;
  LossSettings loss;
  AugmentConfig augment;
};

// Parses a JSON config file; unknown keys are rejected so typos fail
// loudly. Missing keys keep their defaults.
RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& config);
RunConfig parse_config_json(const std::string& text);
std::string config_to_json(const RunConfig& config);

// Verifies that a default-constructed RunConfig carries the reference
// hyperparameters; returns a list of mismatches (empty = ok).
std::vector<std::string> config_default_mismatches();

}  // namespace glifuse
