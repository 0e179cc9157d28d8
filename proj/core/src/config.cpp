#include "glifuse/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace glifuse {

using nlohmann::json;

UnetSpec SegSettings::unet_spec() const {
  UnetSpec spec;
  if (mode == "2d") {
    spec.spatial_rank = 2;
    spec.depth = depth < 0 ? 4 : depth;
    spec.base_channels = base_channels < 0 ? 16 : base_channels;
  } else if (mode == "3d") {
    spec.spatial_rank = 3;
    spec.depth = depth < 0 ? 3 : depth;
    spec.base_channels = base_channels < 0 ? 8 : base_channels;
  } else {
    throw std::invalid_argument("seg mode must be \"2d\" or \"3d\"");
  }
  spec.dropout_rate = dropout;
  return spec;
}

ResNetSpec ClsSettings::resnet_spec() const {
  ResNetSpec spec;
  spec.stage_blocks = stage_blocks;
  spec.width_scale = width_scale;
  return spec;
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) {
      if (key == k) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw std::invalid_argument("config: unknown key \"" + key + "\" in " +
                                  where);
    }
  }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) {
    out = j.at(key).get<T>();
  }
}

void parse_loss(const json& j, LossSettings& loss) {
  reject_unknown(j,
                 {"smooth", "focal_gamma", "focal_weights", "l2_lambda",
                  "dice_weight", "focal_weight"},
                 "loss");
  maybe(j, "smooth", loss.smooth);
  maybe(j, "focal_gamma", loss.focal_gamma);
  maybe(j, "focal_weights", loss.focal_weights);
  maybe(j, "l2_lambda", loss.l2_lambda);
  maybe(j, "dice_weight", loss.dice_weight);
  maybe(j, "focal_weight", loss.focal_weight);
}

void parse_seg(const json& j, SegSettings& seg) {
  reject_unknown(j,
                 {"mode", "lr", "eta_min", "batch", "epochs", "depth",
                  "base_channels", "dropout", "augment"},
                 "seg");
  maybe(j, "mode", seg.mode);
  maybe(j, "lr", seg.lr);
  maybe(j, "eta_min", seg.eta_min);
  maybe(j, "batch", seg.batch);
  maybe(j, "epochs", seg.epochs);
  maybe(j, "depth", seg.depth);
  maybe(j, "base_channels", seg.base_channels);
  maybe(j, "dropout", seg.dropout);
  maybe(j, "augment", seg.augment);
}

void parse_cls(const json& j, ClsSettings& cls) {
  reject_unknown(j,
                 {"lr", "eta_min", "batch", "epochs", "weight_decay",
                  "width_scale", "stage_blocks"},
                 "cls");
  maybe(j, "lr", cls.lr);
  maybe(j, "eta_min", cls.eta_min);
  maybe(j, "batch", cls.batch);
  maybe(j, "epochs", cls.epochs);
  maybe(j, "weight_decay", cls.weight_decay);
  maybe(j, "width_scale", cls.width_scale);
  if (j.contains("stage_blocks")) {
    auto v = j.at("stage_blocks").get<std::vector<int>>();
    if (v.size() != 4) {
      throw std::invalid_argument("config: stage_blocks needs 4 entries");
    }
    std::copy(v.begin(), v.end(), cls.stage_blocks.begin());
  }
}

void parse_fusion(const json& j, FusionSettings& fusion) {
  reject_unknown(j, {"alpha", "grid_search", "grid"}, "fusion");
  maybe(j, "alpha", fusion.alpha);
  maybe(j, "grid_search", fusion.grid_search);
  maybe(j, "grid", fusion.grid);
}

void parse_augment(const json& j, AugmentConfig& aug) {
  reject_unknown(j,
                 {"rotation_degrees", "scale_range", "noise_sigma",
                  "contrast_range", "seed"},
                 "augment");
  maybe(j, "rotation_degrees", aug.rotation_degrees);
  maybe(j, "noise_sigma", aug.noise_sigma);
  maybe(j, "seed", aug.seed);
  if (j.contains("scale_range")) {
    auto v = j.at("scale_range").get<std::vector<double>>();
    if (v.size() != 2) {
      throw std::invalid_argument("config: scale_range needs 2 entries");
    }
    aug.scale_range = {v[0], v[1]};
  }
  if (j.contains("contrast_range")) {
    auto v = j.at("contrast_range").get<std::vector<double>>();
    if (v.size() != 2) {
      throw std::invalid_argument("config: contrast_range needs 2 entries");
    }
    aug.contrast_range = {v[0], v[1]};
  }
}

}  // namespace

RunConfig parse_config_json(const std::string& text) {
  json j = json::parse(text);
  reject_unknown(j,
                 {"seed", "data_dir", "output_dir", "crop_target", "seg",
                  "cls", "fusion", "loss", "augment"},
                 "top level");
  RunConfig config;
  maybe(j, "seed", config.seed);
  maybe(j, "data_dir", config.data_dir);
  maybe(j, "output_dir", config.output_dir);
  if (j.contains("crop_target")) {
    auto v = j.at("crop_target").get<std::vector<std::size_t>>();
    if (v.size() != 3) {
      throw std::invalid_argument("config: crop_target needs 3 entries");
    }
    config.crop_target = {v[0], v[1], v[2]};
  }
  if (j.contains("seg")) parse_seg(j.at("seg"), config.seg);
  if (j.contains("cls")) parse_cls(j.at("cls"), config.cls);
  if (j.contains("fusion")) parse_fusion(j.at("fusion"), config.fusion);
  if (j.contains("loss")) parse_loss(j.at("loss"), config.loss);
  if (j.contains("augment")) parse_augment(j.at("augment"), config.augment);
  return config;
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  j["data_dir"] = c.data_dir;
  j["output_dir"] = c.output_dir;
  j["crop_target"] = {c.crop_target[0], c.crop_target[1], c.crop_target[2]};
  j["seg"] = {{"mode", c.seg.mode},
              {"lr", c.seg.lr},
              {"eta_min", c.seg.eta_min},
              {"batch", c.seg.batch},
              {"epochs", c.seg.epochs},
              {"depth", c.seg.depth},
              {"base_channels", c.seg.base_channels},
              {"dropout", c.seg.dropout},
              {"augment", c.seg.augment}};
  j["cls"] = {{"lr", c.cls.lr},
              {"eta_min", c.cls.eta_min},
              {"batch", c.cls.batch},
              {"epochs", c.cls.epochs},
              {"weight_decay", c.cls.weight_decay},
              {"width_scale", c.cls.width_scale},
              {"stage_blocks", c.cls.stage_blocks}};
  j["fusion"] = {{"alpha", c.fusion.alpha},
                 {"grid_search", c.fusion.grid_search},
                 {"grid", c.fusion.grid}};
  j["loss"] = {{"smooth", c.loss.smooth},
               {"focal_gamma", c.loss.focal_gamma},
               {"focal_weights", c.loss.focal_weights},
               {"l2_lambda", c.loss.l2_lambda},
               {"dice_weight", c.loss.dice_weight},
               {"focal_weight", c.loss.focal_weight}};
  j["augment"] = {{"rotation_degrees", c.augment.rotation_degrees},
                  {"scale_range", c.augment.scale_range},
                  {"noise_sigma", c.augment.noise_sigma},
                  {"contrast_range", c.augment.contrast_range},
                  {"seed", c.augment.seed}};
  return j.dump(2);
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open config file: " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str());
}

void save_config(const std::string& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("cannot write config file: " + path);
  }
  out << config_to_json(config) << "\n";
}

std::vector<std::string> config_default_mismatches() {
  const RunConfig c;
  std::vector<std::string> bad;
  auto expect = [&bad](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  expect(c.seg.lr == 5e-4, "seg.lr != 5e-4");
  expect(c.seg.batch == 8, "seg.batch != 8");
  expect(c.seg.epochs == 100, "seg.epochs != 100");
  expect(c.cls.lr == 1e-3, "cls.lr != 1e-3");
  expect(c.cls.batch == 32, "cls.batch != 32");
  expect(c.cls.weight_decay == 1e-5, "cls.weight_decay != 1e-5");
  expect(c.fusion.alpha == 0.6, "fusion.alpha != 0.6");
  expect(c.loss.focal_gamma == 2.0, "loss.focal_gamma != 2.0");
  expect(c.loss.smooth == 1.0, "loss.smooth != 1.0");
  return bad;
}

}  // namespace glifuse
