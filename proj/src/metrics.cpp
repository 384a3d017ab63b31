#include "attmix/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attmix/error.hpp"

namespace attmix {
namespace {

void check_inputs(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("scores and labels differ in length");
  }
  if (scores.empty()) throw ValidationError("metrics need at least one sample");
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("labels must be 0 or 1");
  }
}

void check_two_classes(const std::vector<int>& labels) {
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<std::ptrdiff_t>(labels.size())) {
    throw ValidationError("AUC is undefined for single-class input");
  }
}

}  // namespace

ClassificationMetrics classification_metrics(const std::vector<double>& scores,
                                             const std::vector<int>& labels, double threshold) {
  check_inputs(scores, labels);
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i]) ++tp;
    if (pred && !labels[i]) ++fp;
    if (!pred && !labels[i]) ++tn;
    if (!pred && labels[i]) ++fn;
  }
  ClassificationMetrics m;
  m.threshold = threshold;
  m.accuracy = static_cast<double>(tp + tn) / static_cast<double>(scores.size());
  if (tp + fp == 0) {
    m.precision_degenerate = true;
  } else {
    m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  }
  if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (m.precision + m.recall == 0.0) {
    m.f1_degenerate = true;
  } else {
    m.f1 = 2 * m.precision * m.recall / (m.precision + m.recall);
  }
  return m;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  check_two_classes(labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Average ranks (1-based) over tie groups, accumulated for positives.
  double rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]]) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n - n_pos);
  return (rank_sum - np * (np + 1) / 2.0) / (np * nn);
}

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_inputs(scores, labels);
  check_two_classes(labels);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double n_pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  const double n_neg = static_cast<double>(n) - n_pos;
  RocCurve curve{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < n;) {
    const double s = scores[order[i]];
    while (i < n && scores[order[i]] == s) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
    curve.push_back({static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos, s});
  }
  return curve;
}

double trapezoid_area(const RocCurve& curve) {
  double area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  }
  return area;
}

double tpr_at(const RocCurve& curve, double fpr) {
  double best = 0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    if (curve[i].fpr <= fpr) {
      best = std::max(best, curve[i].tpr);
      last = i;
    }
  }
  if (curve[last].fpr == fpr || last + 1 >= curve.size()) return best;
  const RocPoint& a = curve[last];
  const RocPoint& b = curve[last + 1];
  const double t = (fpr - a.fpr) / (b.fpr - a.fpr);
  return best + t * (b.tpr - best);
}

MeanRoc mean_roc(const std::vector<RocCurve>& curves, std::size_t grid_points) {
  if (curves.empty()) throw ValidationError("mean ROC needs at least one curve");
  if (grid_points < 2) throw ValidationError("mean ROC grid needs at least two points");
  MeanRoc m;
  for (std::size_t g = 0; g < grid_points; ++g) {
    const double f = static_cast<double>(g) / static_cast<double>(grid_points - 1);
    double total = 0;
    for (const RocCurve& c : curves) total += tpr_at(c, f);
    m.fpr.push_back(f);
    m.tpr.push_back(total / static_cast<double>(curves.size()));
  }
  return m;
}

ProbabilityHistogram probability_histogram(const std::vector<double>& scores,
                                           const std::vector<int>& labels, std::size_t bins) {
  if (bins < 2) throw ValidationError("histogram needs at least two bins");
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  ProbabilityHistogram h;
  for (std::size_t b = 0; b <= bins; ++b) {
    h.edges.push_back(static_cast<double>(b) / static_cast<double>(bins));
  }
  h.negatives.assign(bins, 0);
  h.positives.assign(bins, 0);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double s = std::clamp(scores[i], 0.0, 1.0);
    const auto b = std::min(static_cast<std::size_t>(s * static_cast<double>(bins)), bins - 1);
    (labels[i] ? h.positives : h.negatives)[b] += 1;
  }
  return h;
}

}  // namespace attmix
