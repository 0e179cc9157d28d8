#include "glifuse/evaluate.hpp"

#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace glifuse {

namespace {

double per_class_dice_value(const std::vector<std::uint8_t>& pred,
                            const std::vector<std::uint8_t>& truth,
                            std::uint8_t cls, double smooth) {
  std::uint64_t inter = 0, p = 0, t = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool pp = pred[i] == cls;
    const bool tt = truth[i] == cls;
    inter += pp && tt;
    p += pp;
    t += tt;
  }
  return (2.0 * static_cast<double>(inter) + smooth) /
         (static_cast<double>(t) + static_cast<double>(p) + smooth);
}

}  // namespace

EvalReport evaluate_labels(const LabelMask& pred, const LabelMask& truth,
                           const EvalOptions& options) {
  if (pred.shape != truth.shape) {
    throw std::invalid_argument("evaluate_labels: shape mismatch");
  }
  EvalReport report;
  report.dice_per_class.resize(static_cast<std::size_t>(options.num_classes));
  for (int c = 0; c < options.num_classes; ++c) {
    report.dice_per_class[static_cast<std::size_t>(c)] = per_class_dice_value(
        pred.labels, truth.labels, static_cast<std::uint8_t>(c),
        options.smooth);
    report.dice_macro += report.dice_per_class[static_cast<std::size_t>(c)];
  }
  report.dice_macro /= static_cast<double>(options.num_classes);
  report.total_dice =
      total_dice(pred.labels, truth.labels, options.smooth, options.num_classes);
  report.rates = classification_metrics(
      confusion_counts(pred.labels, truth.labels, options.num_classes));

  const VoxelSet pred_fg = foreground_voxels(pred.labels, pred.shape);
  const VoxelSet truth_fg = foreground_voxels(truth.labels, truth.shape);
  const std::array<double, 3> spacing =
      options.spacing.value_or(std::array<double, 3>{1.0, 1.0, 1.0});
  if (pred_fg.empty() && truth_fg.empty()) {
    report.hausdorff_distance = 0.0;
  } else if (pred_fg.empty() || truth_fg.empty()) {
    // Worst case stand-in: the grid diagonal.
    double acc = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double d = static_cast<double>(pred.shape[static_cast<std::size_t>(a)] - 1) *
                       spacing[static_cast<std::size_t>(a)];
      acc += d * d;
    }
    report.hausdorff_distance = std::sqrt(acc);
  } else {
    report.hausdorff_distance = hausdorff(pred_fg, truth_fg, spacing);
  }
  return report;
}

EvalReport aggregate_reports(const std::vector<EvalReport>& reports) {
  if (reports.empty()) {
    throw std::invalid_argument("aggregate_reports: no reports");
  }
  EvalReport agg;
  const std::size_t classes = reports.front().dice_per_class.size();
  agg.dice_per_class.assign(classes, 0.0);
  agg.rates.per_class.assign(classes, RateSet{});
  const double inv = 1.0 / static_cast<double>(reports.size());
  for (const auto& r : reports) {
    if (r.dice_per_class.size() != classes) {
      throw std::invalid_argument("aggregate_reports: class count mismatch");
    }
    agg.dice_macro += r.dice_macro * inv;
    agg.total_dice += r.total_dice * inv;
    agg.hausdorff_distance += r.hausdorff_distance * inv;
    for (std::size_t c = 0; c < classes; ++c) {
      agg.dice_per_class[c] += r.dice_per_class[c] * inv;
      agg.rates.per_class[c].accuracy += r.rates.per_class[c].accuracy * inv;
      agg.rates.per_class[c].precision += r.rates.per_class[c].precision * inv;
      agg.rates.per_class[c].recall += r.rates.per_class[c].recall * inv;
      agg.rates.per_class[c].f1 += r.rates.per_class[c].f1 * inv;
      agg.rates.per_class[c].iou += r.rates.per_class[c].iou * inv;
      agg.rates.per_class[c].specificity +=
          r.rates.per_class[c].specificity * inv;
    }
    agg.rates.macro.accuracy += r.rates.macro.accuracy * inv;
    agg.rates.macro.precision += r.rates.macro.precision * inv;
    agg.rates.macro.recall += r.rates.macro.recall * inv;
    agg.rates.macro.f1 += r.rates.macro.f1 * inv;
    agg.rates.macro.iou += r.rates.macro.iou * inv;
    agg.rates.macro.specificity += r.rates.macro.specificity * inv;
  }
  return agg;
}

std::string eval_report_json(const EvalReport& report) {
  using nlohmann::json;
  auto rate_entry = [&report](double RateSet::*field, double macro) {
    json per_class = json::array();
    for (const auto& r : report.rates.per_class) {
      per_class.push_back(r.*field);
    }
    return json{{"macro", macro}, {"per_class", per_class}};
  };

  json j;
  j["dice"] = {{"macro", report.dice_macro},
               {"per_class", report.dice_per_class}};
  j["total_dice"] = report.total_dice;
  j["accuracy"] = rate_entry(&RateSet::accuracy, report.rates.macro.accuracy);
  j["precision"] =
      rate_entry(&RateSet::precision, report.rates.macro.precision);
  j["recall"] = rate_entry(&RateSet::recall, report.rates.macro.recall);
  j["f1"] = rate_entry(&RateSet::f1, report.rates.macro.f1);
  j["iou"] = rate_entry(&RateSet::iou, report.rates.macro.iou);
  j["specificity"] =
      rate_entry(&RateSet::specificity, report.rates.macro.specificity);
  j["hausdorff"] = report.hausdorff_distance;
  return j.dump(2);
}

double eval_report_metric(const std::string& json_text,
                          const std::string& metric) {
  const nlohmann::json j = nlohmann::json::parse(json_text);
  if (!j.contains(metric)) {
    throw std::invalid_argument("report metric not found: " + metric);
  }
  const auto& v = j.at(metric);
  if (v.is_number()) {
    return v.get<double>();
  }
  return v.at("macro").get<double>();
}

}  // namespace glifuse
