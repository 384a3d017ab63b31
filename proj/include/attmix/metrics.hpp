#pragma once

#include <cstddef>
#include <limits>
#include <vector>

namespace attmix {

struct ClassificationMetrics {
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double threshold = 0.5;
  // Set when a denominator was zero and the value was reported as 0.
  bool precision_degenerate = false;
  bool f1_degenerate = false;
};

// Score >= threshold predicts the positive class.
ClassificationMetrics classification_metrics(const std::vector<double>& scores,
                                             const std::vector<int>& labels,
                                             double threshold = 0.5);

// Mann-Whitney U / (n_pos * n_neg), tied pairs counted as one half.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
  double threshold = 0;  // +inf for the (0, 0) sentinel
};

using RocCurve = std::vector<RocPoint>;

// One point per distinct score (descending) after the (0, 0) sentinel.
RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels);

double trapezoid_area(const RocCurve& curve);

// TPR of the curve at a given FPR: highest TPR reached at that FPR, linear
// between vertices otherwise.
double tpr_at(const RocCurve& curve, double fpr);

// Vertical average of several curves on an evenly spaced FPR grid.
struct MeanRoc {
  std::vector<double> fpr;
  std::vector<double> tpr;
};
MeanRoc mean_roc(const std::vector<RocCurve>& curves, std::size_t grid_points = 101);

struct ProbabilityHistogram {
  std::vector<double> edges;            // bins + 1 values over [0, 1]
  std::vector<std::size_t> negatives;   // label 0 counts per bin
  std::vector<std::size_t> positives;   // label 1 counts per bin
};

// Uniform bins over [0, 1]; a score of exactly 1 falls in the last bin.
ProbabilityHistogram probability_histogram(const std::vector<double>& scores,
                                           const std::vector<int>& labels, std::size_t bins);

}  // namespace attmix
