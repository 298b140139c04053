#pragma once
// Binary classification metrics over voxel predictions, plus the
// precision-recall curve with trapezoidal area.

#include <cstdint>
#include <string>
#include <vector>

namespace tenext {

struct ConfusionCounts {
  uint64_t tp = 0;
  uint64_t fp = 0;
  uint64_t fn = 0;
  uint64_t tn = 0;

  void add(bool predicted, bool truth) {
    if (predicted && truth)
      ++tp;
    else if (predicted && !truth)
      ++fp;
    else if (!predicted && truth)
      ++fn;
    else
      ++tn;
  }
  uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
};

ConfusionCounts count_confusion(const std::vector<uint8_t>& predicted,
                                const std::vector<uint8_t>& truth);

// Which ratios hit a zero denominator and were reported as 0.
struct ZeroDivisionFlags {
  bool precision = false;
  bool recall = false;
  bool f1 = false;
  bool iou_pos = false;
  bool iou_neg = false;
  bool tnr = false;
  bool any() const { return precision || recall || f1 || iou_pos || iou_neg || tnr; }
};

struct MetricValues {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double miou = 0.0;  // mean of positive-class and negative-class IoU
  double tpr = 0.0;
  double tnr = 0.0;
  ZeroDivisionFlags zero_division;
};

// Throws std::invalid_argument when the counts are all zero.
MetricValues compute_metrics(const ConfusionCounts& c);

struct PrPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;  // descending threshold, ascending recall
  double auc = 0.0;
  // Set when the highest-threshold precision is below 1 (score ties across
  // classes at the top of the ranking).
  bool top_precision_below_one = false;
};

// Sweeps every distinct probability as a threshold (predict positive at
// p >= threshold). max_points > 0 subsamples the threshold list evenly while
// keeping both ends. Requires both classes present.
PrCurve pr_curve(const std::vector<float>& probs, const std::vector<uint8_t>& labels,
                 int max_points = 0);

void write_pr_csv(const std::string& path, const PrCurve& curve);
void write_pr_svg(const std::string& path, const PrCurve& curve);

}  // namespace tenext
