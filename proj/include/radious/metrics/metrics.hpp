#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "radious/error.hpp"
#include "radious/io/png.hpp"

namespace radious::metrics {

// Rows = ground truth class, cols = predicted class; (C+1)x(C+1) including
// background. Mergeable: per-sample matrices sum associatively.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes)
      : num_classes_(num_classes),
        counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
    if (num_classes < 1) fail("parameter", "confusion matrix needs at least one class");
  }

  int num_classes() const { return num_classes_; }
  long long at(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * num_classes_ + pred];
  }
  long long& at(int gt, int pred) {
    return counts_[static_cast<std::size_t>(gt) * num_classes_ + pred];
  }
  long long total() const {
    long long t = 0;
    for (long long c : counts_) t += c;
    return t;
  }
  long long row_sum(int gt) const {
    long long t = 0;
    for (int p = 0; p < num_classes_; ++p) t += at(gt, p);
    return t;
  }
  long long col_sum(int pred) const {
    long long t = 0;
    for (int g = 0; g < num_classes_; ++g) t += at(g, pred);
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.num_classes_ != num_classes_) fail("dimension", "cannot merge differently sized matrices");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

 private:
  int num_classes_ = 0;
  std::vector<long long> counts_;
};

// Per-pixel accumulation; associative over samples.
inline void accumulate(ConfusionMatrix& cm, const io::GrayImage& pred, const io::GrayImage& gt) {
  if (pred.width != gt.width || pred.height != gt.height)
    fail("geometry", "prediction is " + std::to_string(pred.width) + "x" +
                         std::to_string(pred.height) + " but ground truth is " +
                         std::to_string(gt.width) + "x" + std::to_string(gt.height));
  for (std::size_t i = 0; i < gt.pixels.size(); ++i) {
    const int g = gt.pixels[i], p = pred.pixels[i];
    if (g >= cm.num_classes() || p >= cm.num_classes())
      fail("label", "pixel label outside the confusion matrix");
    ++cm.at(g, p);
  }
}

// IoU_c = TP / (TP + FP + FN); classes never seen (TP+FP+FN = 0) are omitted.
// Background (class 0) participates by default but can be excluded.
inline std::map<int, double> iou_per_class(const ConfusionMatrix& cm,
                                           bool include_background = true) {
  std::map<int, double> out;
  for (int c = include_background ? 0 : 1; c < cm.num_classes(); ++c) {
    const long long tp = cm.at(c, c);
    const long long fp = cm.col_sum(c) - tp;
    const long long fn = cm.row_sum(c) - tp;
    if (tp + fp + fn == 0) continue;
    out[c] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
  }
  return out;
}

// Unweighted mean over the present classes.
inline double mean_iou(const std::map<int, double>& per_class) {
  if (per_class.empty()) fail("degenerate_evaluation", "no class was ever observed");
  double sum = 0;
  for (const auto& [c, iou] : per_class) sum += iou;
  return sum / static_cast<double>(per_class.size());
}

inline double miou(const ConfusionMatrix& cm, bool include_background = true) {
  return mean_iou(iou_per_class(cm, include_background));
}

// Mean over classes that actually occur in the ground truth of TP / row-sum.
inline double macc(const ConfusionMatrix& cm, bool include_background = true) {
  double sum = 0;
  int seen = 0;
  for (int c = include_background ? 0 : 1; c < cm.num_classes(); ++c) {
    const long long row = cm.row_sum(c);
    if (row == 0) continue;
    sum += static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
    ++seen;
  }
  if (seen == 0) fail("degenerate_evaluation", "ground truth contains no pixels");
  return sum / seen;
}

// ---------------------------------------------------------------------------
// Reports

struct ClassScore {
  int id = 0;
  std::string name;
  double iou = 0;
  double acc = 0;
};

struct MetricReport {
  std::string model_name;
  long long pixel_total = 0;
  std::vector<ClassScore> per_class;  // absent classes omitted
  double miou = 0;
  double macc = 0;
};

inline MetricReport report_from_confusion(const ConfusionMatrix& cm, const std::string& model_name,
                                          const std::vector<std::string>& class_names,
                                          bool include_background = true) {
  MetricReport r;
  r.model_name = model_name;
  r.pixel_total = cm.total();
  for (const auto& [c, iou] : iou_per_class(cm, include_background)) {
    ClassScore s;
    s.id = c;
    s.name = c < static_cast<int>(class_names.size()) ? class_names[static_cast<std::size_t>(c)]
                                                      : ("class_" + std::to_string(c));
    s.iou = iou;
    const long long row = cm.row_sum(c);
    s.acc = row > 0 ? static_cast<double>(cm.at(c, c)) / static_cast<double>(row) : 0.0;
    r.per_class.push_back(std::move(s));
  }
  r.miou = miou(cm, include_background);
  r.macc = macc(cm, include_background);
  return r;
}

inline nlohmann::json report_to_json(const MetricReport& r) {
  nlohmann::json j;
  j["model_name"] = r.model_name;
  j["pixel_total"] = r.pixel_total;
  j["miou"] = r.miou;
  j["macc"] = r.macc;
  j["per_class"] = nlohmann::json::array();
  for (const auto& s : r.per_class)
    j["per_class"].push_back({{"id", s.id}, {"name", s.name}, {"iou", s.iou}, {"acc", s.acc}});
  return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  MetricReport r;
  r.model_name = j.at("model_name").get<std::string>();
  r.pixel_total = j.at("pixel_total").get<long long>();
  r.miou = j.at("miou").get<double>();
  r.macc = j.at("macc").get<double>();
  for (const auto& item : j.at("per_class"))
    r.per_class.push_back({item.at("id").get<int>(), item.at("name").get<std::string>(),
                           item.at("iou").get<double>(), item.at("acc").get<double>()});
  return r;
}

inline void save_report(const std::string& path, const MetricReport& r) {
  std::ofstream out(path);
  if (!out) fail("io", "cannot write report '" + path + "'");
  out << report_to_json(r).dump(2) << "\n";
}

inline MetricReport load_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("io", "cannot open report '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    fail("parse", "invalid report json in '" + path + "': " + e.what());
  }
  return report_from_json(j);
}

// ---------------------------------------------------------------------------
// Comparison

struct ComparisonRow {
  std::string model_name;
  double miou = 0;
  double macc = 0;
  double miou_delta = 0;  // this model's miou minus the best miou (<= 0)
};

// Ranked descending by miou, deltas measured against the winner.
inline std::vector<ComparisonRow> compare_reports(const std::vector<MetricReport>& reports) {
  if (reports.size() < 2) fail("parameter", "comparison needs at least two reports");
  std::set<std::string> names;
  for (const auto& r : reports)
    if (!names.insert(r.model_name).second)
      fail("naming", "duplicate model name '" + r.model_name + "'");
  std::vector<ComparisonRow> rows;
  rows.reserve(reports.size());
  for (const auto& r : reports) rows.push_back({r.model_name, r.miou, r.macc, 0.0});
  std::stable_sort(rows.begin(), rows.end(),
                   [](const ComparisonRow& a, const ComparisonRow& b) { return a.miou > b.miou; });
  for (auto& row : rows) row.miou_delta = row.miou - rows.front().miou;
  return rows;
}

}  // namespace radious::metrics
