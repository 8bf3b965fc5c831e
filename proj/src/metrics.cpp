#include "milpf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <sstream>
#include <tuple>

#include "milpf/error.hpp"

namespace milpf {

namespace {

struct Counts {
  std::int64_t pos = 0, neg = 0;
};

Counts count_classes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ConfigError("scores and labels differ in length");
  Counts c;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ConfigError("labels must be 0 or 1");
    (y ? c.pos : c.neg)++;
  }
  if (c.pos == 0 || c.neg == 0) throw ConfigError("metric needs both classes present");
  return c;
}

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  return idx;
}

}  // namespace

double auc(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = count_classes(scores, labels);
  const auto idx = order_by_score(scores);
  std::int64_t neg_below = 0, concordant = 0, tied = 0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    std::int64_t p = 0, q = 0;
    while (j < idx.size() && scores[idx[j]] == scores[idx[i]]) (labels[idx[j++]] ? p : q)++;
    concordant += p * neg_below;
    tied += p * q;
    neg_below += q;
    i = j;
  }
  return (static_cast<double>(concordant) + 0.5 * static_cast<double>(tied)) /
         (static_cast<double>(c.pos) * static_cast<double>(c.neg));
}

double balanced_accuracy(std::span<const double> scores, std::span<const int> labels,
                         double threshold) {
  const Counts c = count_classes(scores, labels);
  std::int64_t tp = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    tp += labels[i] && pred;
    tn += !labels[i] && !pred;
  }
  return 0.5 * (static_cast<double>(tp) / c.pos + static_cast<double>(tn) / c.neg);
}

OperatingPoint spec_at_sens(std::span<const double> scores, std::span<const int> labels,
                            double target_sens) {
  const Counts c = count_classes(scores, labels);
  if (!(target_sens > 0.0 && target_sens <= 1.0)) throw ConfigError("target_sens must lie in (0,1]");
  auto idx = order_by_score(scores);
  std::reverse(idx.begin(), idx.end());
  // Walk thresholds from high to low; the first that reaches the target
  // sensitivity has the highest specificity.
  std::int64_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < idx.size();) {
    const double t = scores[idx[i]];
    while (i < idx.size() && scores[idx[i]] == t) (labels[idx[i++]] ? tp : fp)++;
    if (static_cast<double>(tp) / static_cast<double>(c.pos) >= target_sens)
      return {static_cast<double>(c.neg - fp) / static_cast<double>(c.neg), t};
  }
  return {0.0, scores[idx.back()]};  // unreachable: the lowest threshold has sens 1
}

OperatingPoint best_bacc_threshold(std::span<const double> scores, std::span<const int> labels) {
  const Counts c = count_classes(scores, labels);
  const auto idx = order_by_score(scores);
  // Threshold at the i-th distinct ascending score: everything below is negative.
  std::int64_t fn = 0, tn = 0;
  OperatingPoint best{-1.0, 0.0};
  for (std::size_t i = 0; i < idx.size();) {
    const double t = scores[idx[i]];
    const double b = 0.5 * (static_cast<double>(c.pos - fn) / c.pos + static_cast<double>(tn) / c.neg);
    if (b > best.value) best = {b, t};
    while (i < idx.size() && scores[idx[i]] == t) (labels[idx[i++]] ? fn : tn)++;
  }
  return best;
}

EvalReport evaluate(std::span<const double> val_scores, std::span<const int> val_labels,
                    std::span<const double> test_scores, std::span<const int> test_labels) {
  EvalReport r;
  const Counts c = count_classes(test_scores, test_labels);
  r.n_pos = static_cast<int>(c.pos);
  r.n_neg = static_cast<int>(c.neg);
  r.auc = auc(test_scores, test_labels);
  r.bacc_threshold = best_bacc_threshold(val_scores, val_labels).threshold;
  r.bacc = balanced_accuracy(test_scores, test_labels, r.bacc_threshold);
  const auto op = spec_at_sens(test_scores, test_labels, 0.9);
  r.spec_at_sens90 = op.value;
  r.operating_threshold = op.threshold;
  return r;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"auc", r.auc},
          {"bacc", r.bacc},
          {"bacc_threshold", r.bacc_threshold},
          {"spec_at_sens90", r.spec_at_sens90},
          {"operating_threshold", r.operating_threshold},
          {"n_pos", r.n_pos},
          {"n_neg", r.n_neg}};
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.auc = j.at("auc").get<double>();
  r.bacc = j.at("bacc").get<double>();
  r.bacc_threshold = j.at("bacc_threshold").get<double>();
  r.spec_at_sens90 = j.at("spec_at_sens90").get<double>();
  r.operating_threshold = j.at("operating_threshold").get<double>();
  r.n_pos = j.at("n_pos").get<int>();
  r.n_neg = j.at("n_neg").get<int>();
  return r;
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

namespace {

// All-point interpolated AP over a ranked list of outcomes.
double average_precision(const std::vector<int>& outcome, std::size_t n_gt) {
  // outcome: 1 = TP, 0 = FP, in ranked order (ignored entries already removed)
  std::vector<double> prec, rec;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < outcome.size(); ++i) {
    tp += outcome[i];
    prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    rec.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  for (std::size_t i = prec.size(); i-- > 1;) prec[i - 1] = std::max(prec[i - 1], prec[i]);
  double ap = 0.0, prev_r = 0.0;
  for (std::size_t i = 0; i < prec.size(); ++i) {
    ap += (rec[i] - prev_r) * prec[i];
    prev_r = rec[i];
  }
  return ap;
}

}  // namespace

DetectionReport map_at_iou(std::span<const ScoredBox> preds, const GroundTruth& gts,
                           double iou_thresh, SizeBuckets buckets) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& pa = preds[a];
    const auto& pb = preds[b];
    return std::tie(pb.score, pa.view_id, pa.box.x0, pa.box.y0, pa.box.x1, pa.box.y1) <
           std::tie(pa.score, pb.view_id, pb.box.x0, pb.box.y0, pb.box.x1, pb.box.y1);
  });

  // Greedy matching; match[i] is the matched GT (view, index) or none.
  std::map<std::string, std::vector<char>> used;
  for (const auto& [view, boxes] : gts) used[view].assign(boxes.size(), 0);
  std::vector<std::pair<const Box*, bool>> ranked;  // matched gt (or null)
  for (std::size_t i : order) {
    const auto& p = preds[i];
    const Box* hit = nullptr;
    auto it = gts.find(p.view_id);
    if (it != gts.end()) {
      double best = -1.0;
      std::size_t best_k = 0;
      for (std::size_t k = 0; k < it->second.size(); ++k) {
        if (used[p.view_id][k]) continue;
        const double o = iou(p.box, it->second[k]);
        if (o >= iou_thresh && o > best) {
          best = o;
          best_k = k;
        }
      }
      if (best >= 0.0) {
        used[p.view_id][best_k] = 1;
        hit = &it->second[best_k];
      }
    }
    ranked.emplace_back(hit, hit != nullptr);
  }

  auto bucket_ap = [&](auto in_bucket) -> std::optional<double> {
    std::size_t n_gt = 0;
    for (const auto& [view, boxes] : gts)
      for (const auto& b : boxes) n_gt += in_bucket(b);
    if (n_gt == 0) return std::nullopt;
    std::vector<int> outcome;
    for (const auto& [gt, matched] : ranked) {
      if (!matched) outcome.push_back(0);
      else if (in_bucket(*gt)) outcome.push_back(1);
    }
    return average_precision(outcome, n_gt);
  };
  DetectionReport r;
  r.map = bucket_ap([](const Box&) { return true; });
  r.map_s = bucket_ap([&](const Box& b) { return b.area() < buckets.small_max_area; });
  r.map_m = bucket_ap([&](const Box& b) {
    return b.area() >= buckets.small_max_area && b.area() < buckets.medium_max_area;
  });
  r.map_l = bucket_ap([&](const Box& b) { return b.area() >= buckets.medium_max_area; });
  return r;
}

nlohmann::json to_json(const DetectionReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); };
  return {{"mAP", opt(r.map)}, {"mAP_s", opt(r.map_s)}, {"mAP_m", opt(r.map_m)}, {"mAP_l", opt(r.map_l)}};
}

void write_boxes_csv(std::span<const ScoredBox> boxes, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << "view_id,x0,y0,x1,y1,score\n";
  out.precision(17);
  for (const auto& b : boxes)
    out << b.view_id << ',' << b.box.x0 << ',' << b.box.y0 << ',' << b.box.x1 << ',' << b.box.y1
        << ',' << b.score << '\n';
}

std::vector<ScoredBox> read_boxes_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing box file " + path.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("view_id,", 0) != 0) throw DataError(path.string() + ": missing CSV header");
  std::vector<ScoredBox> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    ScoredBox b;
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 6) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 6 fields");
    try {
      b.view_id = fields[0];
      b.box = {std::stod(fields[1]), std::stod(fields[2]), std::stod(fields[3]), std::stod(fields[4])};
      b.score = std::stod(fields[5]);
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace milpf
