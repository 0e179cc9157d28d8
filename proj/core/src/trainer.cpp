#include "glifuse/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "glifuse/losses.hpp"
#include "glifuse/metrics.hpp"
#include "glifuse/rng.hpp"

namespace glifuse {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void write_log_csv(const std::string& path, const std::vector<EpochRow>& rows) {
  if (path.empty()) return;
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write training log: " + path);
  }
  out << "epoch,lr,train_loss,val_metric,wall_seconds\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%d,%.10g,%.10g,%.10g,%.3f\n", r.epoch,
                  r.lr, r.train_loss, r.val_metric, r.wall_seconds);
    out << line;
  }
}

// Norm-state names are recovered from the parameter list: every
// "<base>.gamma" parameter owns the next state slot, matching the
// construction order of both networks.
std::vector<std::string> norm_base_names(const ParamList<float>& params) {
  std::vector<std::string> names;
  for (const auto& p : params) {
    const std::string suffix = ".gamma";
    if (p.name.size() > suffix.size() &&
        p.name.compare(p.name.size() - suffix.size(), suffix.size(), suffix) ==
            0) {
      names.push_back(p.name.substr(0, p.name.size() - suffix.size()));
    }
  }
  return names;
}

void append_state_tensors(Checkpoint& ck, const ParamList<float>& params,
                          const std::vector<BatchNormState<float>>& states,
                          const Adam<float>* optimizer) {
  for (const auto& p : params) {
    ck.tensors.push_back({p.name, p.tensor.shape(), p.tensor.data()});
  }
  const auto bases = norm_base_names(params);
  if (bases.size() != states.size()) {
    throw std::logic_error("checkpoint: norm state count mismatch");
  }
  for (std::size_t i = 0; i < states.size(); ++i) {
    ck.tensors.push_back({bases[i] + ".running_mean",
                          {states[i].running_mean.size()},
                          states[i].running_mean});
    ck.tensors.push_back({bases[i] + ".running_var",
                          {states[i].running_var.size()},
                          states[i].running_var});
  }
  if (optimizer != nullptr && !optimizer->slots().empty()) {
    const auto& slots = optimizer->slots();
    for (std::size_t i = 0; i < params.size(); ++i) {
      ck.tensors.push_back(
          {"adam.m." + params[i].name, params[i].tensor.shape(), slots[i].m});
      ck.tensors.push_back(
          {"adam.v." + params[i].name, params[i].tensor.shape(), slots[i].v});
    }
    ck.optimizer_step = optimizer->step_count();
  }
}

const TensorBlob* find_tensor(const Checkpoint& ck, const std::string& name) {
  for (const auto& t : ck.tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void load_state_tensors(const Checkpoint& ck, ParamList<float>& params,
                        std::vector<BatchNormState<float>>& states) {
  for (auto& p : params) {
    const TensorBlob* t = find_tensor(ck, p.name);
    if (t == nullptr) {
      throw std::runtime_error("checkpoint missing tensor: " + p.name);
    }
    if (t->shape != p.tensor.shape()) {
      throw std::runtime_error("checkpoint tensor shape mismatch: " + p.name);
    }
    p.tensor.mutable_data() = t->values;
  }
  const auto bases = norm_base_names(params);
  for (std::size_t i = 0; i < states.size(); ++i) {
    const TensorBlob* mean = find_tensor(ck, bases[i] + ".running_mean");
    const TensorBlob* var = find_tensor(ck, bases[i] + ".running_var");
    if (mean == nullptr || var == nullptr) {
      throw std::runtime_error("checkpoint missing norm state: " + bases[i]);
    }
    states[i].running_mean = mean->values;
    states[i].running_var = var->values;
  }
}

// Shared epoch machinery: one batched update step plus loss bookkeeping.
bool finite(double v) { return std::isfinite(v); }

}  // namespace

Checkpoint snapshot_unet(const UnetModel<float>& model, const std::string& kind,
                         std::uint64_t epoch, const Adam<float>* optimizer,
                         const std::string& rng_state) {
  Checkpoint ck;
  ck.kind = kind;
  nlohmann::json spec;
  spec["spatial_rank"] = model.spec.spatial_rank;
  spec["depth"] = model.spec.depth;
  spec["base_channels"] = model.spec.base_channels;
  spec["in_channels"] = model.spec.in_channels;
  spec["out_channels"] = model.spec.out_channels;
  spec["dropout_rate"] = model.spec.dropout_rate;
  ck.spec_json = spec.dump();
  ck.epoch = epoch;
  ck.rng_state = rng_state;
  append_state_tensors(ck, model.params, model.norm_states, optimizer);
  return ck;
}

Checkpoint snapshot_resnet(const ClassifierModel<float>& model,
                           std::uint64_t epoch, const Adam<float>* optimizer,
                           const std::string& rng_state) {
  Checkpoint ck;
  ck.kind = "cls";
  nlohmann::json spec;
  spec["stage_blocks"] = model.spec.stage_blocks;
  spec["stem_channels"] = model.spec.stem_channels;
  spec["expansion"] = model.spec.expansion;
  spec["num_classes"] = model.spec.num_classes;
  spec["in_channels"] = model.spec.in_channels;
  spec["width_scale"] = model.spec.width_scale;
  ck.spec_json = spec.dump();
  ck.epoch = epoch;
  ck.rng_state = rng_state;
  append_state_tensors(ck, model.params, model.norm_states, optimizer);
  return ck;
}

UnetModel<float> unet_from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "seg2d" && checkpoint.kind != "seg3d") {
    throw std::runtime_error("checkpoint is not a segmentation model: " +
                             checkpoint.kind);
  }
  const nlohmann::json spec_json = nlohmann::json::parse(checkpoint.spec_json);
  UnetSpec spec;
  spec.spatial_rank = spec_json.at("spatial_rank").get<int>();
  spec.depth = spec_json.at("depth").get<int>();
  spec.base_channels = spec_json.at("base_channels").get<int>();
  spec.in_channels = spec_json.at("in_channels").get<int>();
  spec.out_channels = spec_json.at("out_channels").get<int>();
  spec.dropout_rate = spec_json.at("dropout_rate").get<double>();
  UnetModel<float> model = build_unet<float>(spec, 0);
  load_state_tensors(checkpoint, model.params, model.norm_states);
  return model;
}

ClassifierModel<float> resnet_from_checkpoint(const Checkpoint& checkpoint) {
  if (checkpoint.kind != "cls") {
    throw std::runtime_error("checkpoint is not a classifier: " +
                             checkpoint.kind);
  }
  const nlohmann::json spec_json = nlohmann::json::parse(checkpoint.spec_json);
  ResNetSpec spec;
  auto blocks = spec_json.at("stage_blocks").get<std::vector<int>>();
  if (blocks.size() != 4) {
    throw std::runtime_error("checkpoint spec: stage_blocks needs 4 entries");
  }
  std::copy(blocks.begin(), blocks.end(), spec.stage_blocks.begin());
  spec.stem_channels = spec_json.at("stem_channels").get<int>();
  spec.expansion = spec_json.at("expansion").get<int>();
  spec.num_classes = spec_json.at("num_classes").get<int>();
  spec.in_channels = spec_json.at("in_channels").get<int>();
  spec.width_scale = spec_json.at("width_scale").get<double>();
  ClassifierModel<float> model = build_resnet<float>(spec, 0);
  load_state_tensors(checkpoint, model.params, model.norm_states);
  return model;
}

namespace {

struct SegBatch {
  Tensor<float> images;
  std::vector<std::uint8_t> labels;
  std::vector<std::size_t> spatial;
};

SegBatch make_seg_batch(const std::vector<SegSample>& samples,
                        const std::vector<std::size_t>& order,
                        std::size_t begin, std::size_t end) {
  const auto& first = samples[order[begin]].image;
  std::vector<std::size_t> spatial(first.shape().begin() + 1,
                                   first.shape().end());
  const std::size_t plane = first.numel() / first.extent(0);
  const std::size_t n = end - begin;
  std::vector<float> data(n * first.numel());
  SegBatch batch;
  batch.labels.reserve(n * plane);
  for (std::size_t s = begin; s < end; ++s) {
    const auto& sample = samples[order[s]];
    if (sample.image.shape() != first.shape()) {
      throw std::invalid_argument("training samples must share one shape");
    }
    std::copy(sample.image.data().begin(), sample.image.data().end(),
              data.begin() + (s - begin) * first.numel());
    if (sample.labels.size() != plane) {
      throw std::invalid_argument("training labels must match the grid");
    }
    batch.labels.insert(batch.labels.end(), sample.labels.begin(),
                        sample.labels.end());
  }
  std::vector<std::size_t> shape{n, first.extent(0)};
  shape.insert(shape.end(), spatial.begin(), spatial.end());
  batch.images = Tensor<float>::from(std::move(shape), std::move(data));
  batch.spatial = std::move(spatial);
  return batch;
}

std::vector<float> focal_weights_of(const LossSettings& loss) {
  return std::vector<float>(loss.focal_weights.begin(),
                            loss.focal_weights.end());
}

}  // namespace

double segmentation_dice(UnetModel<float>& model,
                         const std::vector<SegSample>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("segmentation_dice: no samples");
  }
  double acc = 0.0;
  constexpr std::size_t kChunk = 8;
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const std::size_t end = std::min(begin + kChunk, samples.size());
    SegBatch batch = make_seg_batch(samples, order, begin, end);
    Tensor<float> probs = unet_forward(model, batch.images, Mode::kEval);
    const std::size_t n = end - begin;
    const std::size_t classes = probs.extent(1);
    const std::size_t plane = probs.numel() / (n * classes);
    const auto& pv = probs.data();
    for (std::size_t s = 0; s < n; ++s) {
      std::vector<std::uint8_t> pred(plane);
      for (std::size_t i = 0; i < plane; ++i) {
        std::size_t best = 0;
        float best_val = pv[(s * classes) * plane + i];
        for (std::size_t c = 1; c < classes; ++c) {
          const float v = pv[(s * classes + c) * plane + i];
          if (v > best_val) {
            best_val = v;
            best = c;
          }
        }
        pred[i] = static_cast<std::uint8_t>(best);
      }
      acc += mean_foreground_dice(pred, samples[order[begin + s]].labels);
    }
  }
  return acc / static_cast<double>(samples.size());
}

TrainResult train_segmentation(UnetModel<float>& model,
                               const SegSampleProvider& train_provider,
                               const std::vector<SegSample>& validation,
                               const TrainOptions& options,
                               const std::string& checkpoint_kind) {
  if (options.epochs < 1 || options.batch < 1) {
    throw std::invalid_argument("train_segmentation: bad epoch/batch counts");
  }
  for (auto& p : model.params) {
    p.tensor.set_requires_grad(true);
  }
  Rng rng(derive_seed(options.seed, "seg-train"));
  Adam<float> adam;
  const CosineSchedule schedule{options.lr, options.eta_min,
                                static_cast<std::uint64_t>(options.epochs)};
  const auto weights = model.decaying_weights();
  const auto focal_w = focal_weights_of(options.loss);

  TrainResult result;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const auto start = Clock::now();
    std::vector<SegSample> samples = train_provider(epoch);
    if (samples.empty()) {
      throw std::invalid_argument("train_segmentation: empty dataset");
    }
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    const double lr = cosine_lr(schedule, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    std::size_t step = 0;
    for (std::size_t begin = 0; begin < samples.size();
         begin += static_cast<std::size_t>(options.batch), ++step) {
      const std::size_t end = std::min(
          begin + static_cast<std::size_t>(options.batch), samples.size());
      SegBatch batch = make_seg_batch(samples, order, begin, end);
      for (auto& p : model.params) {
        p.tensor.zero_grad();
      }
      const std::uint64_t drop_seed = derive_seed(
          options.seed, "drop-" + std::to_string(epoch) + "-" +
                            std::to_string(step));
      Tensor<float> probs =
          unet_forward(model, batch.images, Mode::kTrain, drop_seed);
      Tensor<float> onehot = one_hot_map<float>(
          batch.labels, end - begin, probs.extent(1), batch.spatial);
      Tensor<float> loss =
          scale(dice_loss(probs, onehot, static_cast<float>(options.loss.smooth)),
                static_cast<float>(options.loss.dice_weight));
      if (options.loss.focal_weight != 0.0) {
        Tensor<float> focal = focal_loss_map(
            probs, batch.labels, static_cast<float>(options.loss.focal_gamma),
            focal_w);
        loss = add(loss, scale(focal, static_cast<float>(options.loss.focal_weight)));
      }
      if (options.loss.l2_lambda > 0.0) {
        loss = add(loss, l2_penalty(weights,
                                    static_cast<float>(options.loss.l2_lambda)));
      }
      const double loss_value = loss.item();
      if (!finite(loss_value)) {
        throw std::runtime_error(
            "train_segmentation: loss diverged (NaN/inf) at epoch " +
            std::to_string(epoch) + ", step " + std::to_string(step));
      }
      loss_sum += loss_value * static_cast<double>(end - begin);
      loss.backward();
      adam.step(model.params, static_cast<float>(lr),
                static_cast<float>(options.weight_decay));
    }

    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(samples.size());
    row.val_metric = validation.empty()
                         ? segmentation_dice(model, samples)
                         : segmentation_dice(model, validation);
    row.wall_seconds = seconds_since(start);
    result.log.push_back(row);

    if (result.best_epoch < 0 || row.val_metric > result.best_val) {
      result.best_val = row.val_metric;
      result.best_epoch = epoch;
      result.best_checkpoint =
          snapshot_unet(model, checkpoint_kind,
                        static_cast<std::uint64_t>(epoch), &adam,
                        rng.serialize());
    }
  }
  write_log_csv(options.log_path, result.log);
  if (!options.checkpoint_path.empty()) {
    save_checkpoint(options.checkpoint_path, result.best_checkpoint);
  }
  return result;
}

double classifier_accuracy(ClassifierModel<float>& model,
                           const std::vector<ClsSample>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("classifier_accuracy: no samples");
  }
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 16;
  for (std::size_t begin = 0; begin < samples.size(); begin += kChunk) {
    const std::size_t end = std::min(begin + kChunk, samples.size());
    const auto& first = samples[begin].image;
    std::vector<float> data((end - begin) * first.numel());
    for (std::size_t s = begin; s < end; ++s) {
      if (samples[s].image.shape() != first.shape()) {
        throw std::invalid_argument("classifier samples must share one shape");
      }
      std::copy(samples[s].image.data().begin(), samples[s].image.data().end(),
                data.begin() + (s - begin) * first.numel());
    }
    Tensor<float> batch = Tensor<float>::from(
        {end - begin, first.extent(0), first.extent(1), first.extent(2)},
        std::move(data));
    Tensor<float> logits = resnet_forward(model, batch, Mode::kEval);
    const std::size_t k = logits.extent(1);
    const auto& lv = logits.data();
    for (std::size_t s = 0; s < end - begin; ++s) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c) {
        if (lv[s * k + c] > lv[s * k + best]) best = c;
      }
      correct += static_cast<int>(best) == samples[begin + s].label;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

TrainResult train_classifier(ClassifierModel<float>& model,
                             const std::vector<ClsSample>& train,
                             const std::vector<ClsSample>& validation,
                             const TrainOptions& options) {
  if (options.epochs < 1 || options.batch < 1) {
    throw std::invalid_argument("train_classifier: bad epoch/batch counts");
  }
  if (train.empty()) {
    throw std::invalid_argument("train_classifier: empty dataset");
  }
  for (auto& p : model.params) {
    p.tensor.set_requires_grad(true);
  }
  Rng rng(derive_seed(options.seed, "cls-train"));
  Adam<float> adam;
  const CosineSchedule schedule{options.lr, options.eta_min,
                                static_cast<std::uint64_t>(options.epochs)};
  const auto weights = model.decaying_weights();
  const auto focal_w = focal_weights_of(options.loss);

  // Class pools for balanced batch composition.
  std::vector<std::vector<std::size_t>> pools(
      static_cast<std::size_t>(model.spec.num_classes));
  for (std::size_t i = 0; i < train.size(); ++i) {
    const int label = train[i].label;
    if (label < 0 || label >= model.spec.num_classes) {
      throw std::invalid_argument("train_classifier: label out of range");
    }
    pools[static_cast<std::size_t>(label)].push_back(i);
  }
  std::vector<std::size_t> present;
  for (std::size_t c = 0; c < pools.size(); ++c) {
    if (!pools[c].empty()) present.push_back(c);
  }

  const std::size_t steps_per_epoch =
      (train.size() + static_cast<std::size_t>(options.batch) - 1) /
      static_cast<std::size_t>(options.batch);

  TrainResult result;
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const auto start = Clock::now();
    const double lr = cosine_lr(schedule, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::size_t b = static_cast<std::size_t>(options.batch);
      const auto& first = train.front().image;
      std::vector<float> data(b * first.numel());
      std::vector<int> targets(b);
      for (std::size_t i = 0; i < b; ++i) {
        // Cycle classes; sample uniformly inside the class pool. Minority
        // classes repeat, which is the point of balanced batching.
        const std::size_t cls = present[i % present.size()];
        const auto& pool = pools[cls];
        const std::size_t idx = pool[rng.index(pool.size())];
        std::copy(train[idx].image.data().begin(),
                  train[idx].image.data().end(),
                  data.begin() + i * first.numel());
        targets[i] = train[idx].label;
      }
      Tensor<float> batch = Tensor<float>::from(
          {b, first.extent(0), first.extent(1), first.extent(2)},
          std::move(data));
      for (auto& p : model.params) {
        p.tensor.zero_grad();
      }
      Tensor<float> probs = softmax(resnet_forward(model, batch, Mode::kTrain), 1);
      Tensor<float> loss = focal_loss(
          probs, targets, static_cast<float>(options.loss.focal_gamma), focal_w);
      if (options.loss.l2_lambda > 0.0) {
        loss = add(loss, l2_penalty(weights,
                                    static_cast<float>(options.loss.l2_lambda)));
      }
      const double loss_value = loss.item();
      if (!finite(loss_value)) {
        throw std::runtime_error(
            "train_classifier: loss diverged (NaN/inf) at epoch " +
            std::to_string(epoch) + ", step " + std::to_string(step));
      }
      loss_sum += loss_value;
      loss.backward();
      adam.step(model.params, static_cast<float>(lr),
                static_cast<float>(options.weight_decay));
    }

    EpochRow row;
    row.epoch = epoch;
    row.lr = lr;
    row.train_loss = loss_sum / static_cast<double>(steps_per_epoch);
    row.val_metric = classifier_accuracy(
        model, validation.empty() ? train : validation);
    row.wall_seconds = seconds_since(start);
    result.log.push_back(row);

    if (result.best_epoch < 0 || row.val_metric > result.best_val) {
      result.best_val = row.val_metric;
      result.best_epoch = epoch;
      result.best_checkpoint = snapshot_resnet(
          model, static_cast<std::uint64_t>(epoch), &adam, rng.serialize());
    }
  }
  write_log_csv(options.log_path, result.log);
  if (!options.checkpoint_path.empty()) {
    save_checkpoint(options.checkpoint_path, result.best_checkpoint);
  }
  return result;
}

std::vector<SegSample> slice_samples(const CaseRecord& record) {
  if (!record.mask) {
    throw std::invalid_argument("slice_samples: case has no mask");
  }
  const auto shape = record.shape();
  std::vector<SegSample> samples;
  samples.reserve(shape[2]);
  for (std::size_t k = 0; k < shape[2]; ++k) {
    samples.push_back(
        {modality_slice<float>(record, k), mask_slice(*record.mask, k)});
  }
  return samples;
}

SegSample volume_sample(const CaseRecord& record) {
  if (!record.mask) {
    throw std::invalid_argument("volume_sample: case has no mask");
  }
  return {modality_stack<float>(record), record.mask->labels};
}

}  // namespace glifuse
