#include "tenext/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "tenext/svg.hpp"

namespace tenext {

ConfusionCounts count_confusion(const std::vector<uint8_t>& predicted,
                                const std::vector<uint8_t>& truth) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("confusion counts: prediction/label size mismatch");
  ConfusionCounts c;
  for (size_t i = 0; i < predicted.size(); ++i) c.add(predicted[i] != 0, truth[i] != 0);
  return c;
}

namespace {

// Ratio with zero-denominator reporting: a 0/0 case yields 0 and sets *flag.
double ratio(uint64_t num, uint64_t den, bool* flag) {
  if (den == 0) {
    *flag = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricValues compute_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw std::invalid_argument("metrics: no samples counted");
  MetricValues m;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  m.precision = ratio(c.tp, c.tp + c.fp, &m.zero_division.precision);
  m.recall = ratio(c.tp, c.tp + c.fn, &m.zero_division.recall);
  m.tpr = m.recall;
  if (m.precision + m.recall > 0.0)
    m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
  else
    m.zero_division.f1 = true;
  const double iou_pos = ratio(c.tp, c.tp + c.fp + c.fn, &m.zero_division.iou_pos);
  const double iou_neg = ratio(c.tn, c.tn + c.fp + c.fn, &m.zero_division.iou_neg);
  m.miou = 0.5 * (iou_pos + iou_neg);
  m.tnr = ratio(c.tn, c.tn + c.fp, &m.zero_division.tnr);
  return m;
}

PrCurve pr_curve(const std::vector<float>& probs, const std::vector<uint8_t>& labels,
                 int max_points) {
  if (probs.empty()) throw std::invalid_argument("PR curve: no samples");
  if (probs.size() != labels.size())
    throw std::invalid_argument("PR curve: probability/label size mismatch");
  uint64_t positives = 0;
  for (uint8_t l : labels) positives += (l != 0) ? 1 : 0;
  if (positives == 0 || positives == labels.size())
    throw std::invalid_argument("PR curve: needs both classes present");

  // Rank by descending probability; ties contribute jointly at their shared
  // threshold so the sweep advances over distinct values.
  std::vector<size_t> order(probs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return probs[a] > probs[b]; });

  std::vector<PrPoint> all;
  uint64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const float t = probs[order[i]];
    while (i < order.size() && probs[order[i]] == t) {
      if (labels[order[i]] != 0)
        ++tp;
      else
        ++fp;
      ++i;
    }
    PrPoint p;
    p.threshold = t;
    p.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    p.recall = static_cast<double>(tp) / static_cast<double>(positives);
    all.push_back(p);
  }

  PrCurve curve;
  if (max_points > 0 && static_cast<size_t>(max_points) < all.size()) {
    // Even subsample over the distinct-threshold list, keeping both ends.
    curve.points.reserve(static_cast<size_t>(max_points));
    const size_t n = all.size();
    size_t prev = n;  // sentinel
    for (int k = 0; k < max_points; ++k) {
      size_t idx = (max_points == 1)
                       ? 0
                       : static_cast<size_t>(static_cast<double>(k) * (n - 1) / (max_points - 1));
      if (idx != prev) curve.points.push_back(all[idx]);
      prev = idx;
    }
  } else {
    curve.points = std::move(all);
  }

  curve.top_precision_below_one = curve.points.front().precision < 1.0;

  // Trapezoid area over recall, anchored at recall 0 with the first point's
  // precision so a curve starting mid-recall still integrates from zero.
  double auc = 0.0;
  double prev_r = 0.0, prev_p = curve.points.front().precision;
  for (const PrPoint& p : curve.points) {
    auc += (p.recall - prev_r) * 0.5 * (p.precision + prev_p);
    prev_r = p.recall;
    prev_p = p.precision;
  }
  curve.auc = auc;
  return curve;
}

void write_pr_csv(const std::string& path, const PrCurve& curve) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << "threshold,precision,recall\n";
  char buf[160];
  for (const PrPoint& p : curve.points) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g\n", p.threshold, p.precision, p.recall);
    out << buf;
  }
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

void write_pr_svg(const std::string& path, const PrCurve& curve) {
  const double W = 480, H = 480, L = 56, B = 48, T = 24, R = 24;
  const double pw = W - L - R, ph = H - T - B;
  SvgDoc doc(W, H);
  doc.rect(0, 0, W, H, "#ffffff");
  // Axes with quarter gridlines.
  for (int k = 0; k <= 4; ++k) {
    const double fx = L + pw * k / 4.0;
    const double fy = T + ph - ph * k / 4.0;
    doc.line(fx, T, fx, T + ph, "#dddddd");
    doc.line(L, fy, L + pw, fy, "#dddddd");
    char lbl[16];
    std::snprintf(lbl, sizeof(lbl), "%.2f", k / 4.0);
    doc.text(fx - 10, T + ph + 16, lbl, 10);
    doc.text(L - 34, fy + 4, lbl, 10);
  }
  doc.line(L, T + ph, L + pw, T + ph, "#333333");
  doc.line(L, T, L, T + ph, "#333333");
  doc.text(L + pw / 2 - 20, H - 12, "recall", 12);
  doc.text(8, T + ph / 2, "precision", 12);

  std::vector<std::pair<double, double>> pts;
  pts.reserve(curve.points.size() + 1);
  pts.emplace_back(L, T + ph - ph * curve.points.front().precision);
  for (const PrPoint& p : curve.points)
    pts.emplace_back(L + pw * p.recall, T + ph - ph * p.precision);
  doc.polyline(pts, "#1f6fb2", 1.5);

  char title[64];
  std::snprintf(title, sizeof(title), "PR curve  AUC=%.4f", curve.auc);
  doc.text(L, 16, title, 12);
  doc.save(path);
}

}  // namespace tenext
