#pragma once

// Training loops shared by the two segmentation paths and the
// classifier: per-epoch cosine learning rate, Adam updates, CSV
// logging (epoch,lr,train_loss,val_metric,wall_seconds), divergence
// detection, and best-validation checkpoint retention. Everything is
// deterministic given the seed.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "glifuse/checkpoint.hpp"
#include "glifuse/config.hpp"
#include "glifuse/resnet.hpp"
#include "glifuse/unet.hpp"

namespace glifuse {

struct SegSample {
  Tensor<float> image;               // [4, spatial...]
  std::vector<std::uint8_t> labels;  // flattened spatial
};

struct ClsSample {
  Tensor<float> image;  // [4, H, W]
  int label = 0;
};

struct EpochRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_metric = 0.0;
  double wall_seconds = 0.0;
};

struct TrainOptions {
  int epochs = 1;
  int batch = 1;
  double lr = 1e-3;
  double eta_min = 0.0;
  double weight_decay = 0.0;
  LossSettings loss;
  std::uint64_t seed = 0;
  std::string log_path;         // empty = no CSV written
  std::string checkpoint_path;  // empty = no checkpoint written
};

struct TrainResult {
  std::vector<EpochRow> log;
  double best_val = 0.0;
  int best_epoch = -1;
  Checkpoint best_checkpoint;
};

// Per-epoch sample provider; receives the epoch index so augmentation
// can redraw. Must be deterministic in (epoch).
using SegSampleProvider = std::function<std::vector<SegSample>(int epoch)>;

// Trains a segmentation model. Validation metric: mean foreground Dice
// of the argmax labels (classes 1..3). With an empty validation set the
// training samples of the current epoch are scored instead.
TrainResult train_segmentation(UnetModel<float>& model,
                               const SegSampleProvider& train_provider,
                               const std::vector<SegSample>& validation,
                               const TrainOptions& options,
                               const std::string& checkpoint_kind);

// Trains the subclass classifier with class-balanced batches.
// Validation metric: accuracy.
TrainResult train_classifier(ClassifierModel<float>& model,
                             const std::vector<ClsSample>& train,
                             const std::vector<ClsSample>& validation,
                             const TrainOptions& options);

// ---- model <-> checkpoint plumbing ----

Checkpoint snapshot_unet(const UnetModel<float>& model,
                         const std::string& kind, std::uint64_t epoch,
                         const Adam<float>* optimizer,
                         const std::string& rng_state);
Checkpoint snapshot_resnet(const ClassifierModel<float>& model,
                           std::uint64_t epoch, const Adam<float>* optimizer,
                           const std::string& rng_state);
UnetModel<float> unet_from_checkpoint(const Checkpoint& checkpoint);
ClassifierModel<float> resnet_from_checkpoint(const Checkpoint& checkpoint);

// Mean foreground Dice of a model over samples (eval mode).
double segmentation_dice(UnetModel<float>& model,
                         const std::vector<SegSample>& samples);
// Classification accuracy over samples (eval mode).
double classifier_accuracy(ClassifierModel<float>& model,
                           const std::vector<ClsSample>& samples);

// Slice/volume sample builders from preprocessed cases.
std::vector<SegSample> slice_samples(const CaseRecord& record);
SegSample volume_sample(const CaseRecord& record);

}  // namespace glifuse
