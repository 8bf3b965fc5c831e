#pragma once

// Classification metrics over bag scores and detection metrics over boxes.
// All functions that need both classes throw ConfigError when one is absent.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace milpf {

// Mann-Whitney: (concordant + 0.5 * tied) / (n_pos * n_neg).
double auc(std::span<const double> scores, std::span<const int> labels);

// (sensitivity + specificity) / 2 with score >= threshold predicted positive.
double balanced_accuracy(std::span<const double> scores, std::span<const int> labels,
                         double threshold);

struct OperatingPoint {
  double value = 0.0;
  double threshold = 0.0;
};

// Largest empirical threshold whose sensitivity reaches target_sens, and the
// specificity there. No ROC interpolation.
OperatingPoint spec_at_sens(std::span<const double> scores, std::span<const int> labels,
                            double target_sens = 0.9);

// Threshold (one of the observed scores) maximizing balanced accuracy; ties
// go to the lowest threshold.
OperatingPoint best_bacc_threshold(std::span<const double> scores, std::span<const int> labels);

struct EvalReport {
  double auc = 0.0;
  double bacc = 0.0;
  double bacc_threshold = 0.0;
  double spec_at_sens90 = 0.0;
  double operating_threshold = 0.0;
  int n_pos = 0;
  int n_neg = 0;
};

// bACC threshold is tuned on the validation scores, everything else is
// measured on the test scores.
EvalReport evaluate(std::span<const double> val_scores, std::span<const int> val_labels,
                    std::span<const double> test_scores, std::span<const int> test_labels);

nlohmann::json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

// Pixel box, half-open.
struct Box {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double area() const { return (x1 - x0) * (y1 - y0); }
  bool operator==(const Box&) const = default;
};

struct ScoredBox {
  Box box;
  double score = 0.0;
  std::string view_id;
  bool operator==(const ScoredBox&) const = default;
};

double iou(const Box& a, const Box& b);

struct SizeBuckets {
  double small_max_area = 32.0 * 32.0;   // area < this: small
  double medium_max_area = 96.0 * 96.0;  // area < this: medium, else large
};

// Absent entries mean the bucket has no ground truth.
struct DetectionReport {
  std::optional<double> map, map_s, map_m, map_l;
};

using GroundTruth = std::map<std::string, std::vector<Box>>;

DetectionReport map_at_iou(std::span<const ScoredBox> preds, const GroundTruth& gts,
                           double iou_thresh = 0.25, SizeBuckets buckets = {});

nlohmann::json to_json(const DetectionReport& r);

// CSV with header view_id,x0,y0,x1,y1,score.
void write_boxes_csv(std::span<const ScoredBox> boxes, const std::filesystem::path& path);
std::vector<ScoredBox> read_boxes_csv(const std::filesystem::path& path);

}  // namespace milpf
