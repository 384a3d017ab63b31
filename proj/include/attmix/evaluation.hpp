#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "attmix/dataset.hpp"
#include "attmix/metrics.hpp"
#include "attmix/model.hpp"
#include "attmix/train.hpp"
#include "json.hpp"

namespace attmix {

// patient id -> fold index in [0, k)
using FoldAssignment = std::map<std::string, std::size_t>;

// Seeded shuffle of the distinct ids, then round-robin.
FoldAssignment make_folds(std::vector<std::string> patient_ids, std::size_t k, std::uint64_t seed);

// Sample indices of the cohort that fall in / out of `fold`.
void split_indices(const PreparedCohort& cohort, const FoldAssignment& folds, std::size_t fold,
                   std::vector<std::size_t>& train, std::vector<std::size_t>& val);

// Preprocessing fitted on the given (training) samples only.
MetadataPreprocessor fit_preprocessor(const PreparedCohort& cohort,
                                      const std::vector<std::size_t>& train, std::size_t knn_k);

struct CvOptions {
  std::size_t k = 5;
  std::vector<std::uint64_t> seeds{7};
  std::size_t jobs = 1;
  std::size_t knn_k = 5;
  // Empty, one checkpoint shared by every seed, or one per seed.
  std::vector<std::filesystem::path> encoder_checkpoints;
  bool keep_models = false;
};

struct FoldResult {
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  ClassificationMetrics metrics;
  double auc = 0;
  RocCurve roc;
  std::vector<std::string> patient_ids;
  std::vector<int> labels;
  std::vector<double> scores;
  TrainLog log;
};

struct MetricsReport {
  std::string variant;
  std::vector<FoldResult> folds;  // seed-major, then fold
  double accuracy = 0;
  double precision = 0;
  double f1 = 0;
  double auc = 0;
  double threshold = 0.5;

  nlohmann::json to_json() const;
};

struct FoldModel {
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  AttentionMixer<float> model;
  std::vector<Example> val;
};

struct CvResult {
  MetricsReport report;
  std::vector<FoldModel> models;      // filled when keep_models is set
  std::vector<std::string> warnings;  // imputation fallbacks
};

CvResult cross_validate(const PreparedCohort& cohort, const ModelConfig& model_cfg,
                        const TrainConfig& train_cfg, const CvOptions& opts);

// Mean of the per-seed mean AUC (equal to the plain fold mean when every
// seed has k folds).
double mean_auc(const MetricsReport& report);

struct ImportanceReport {
  std::vector<std::string> features;
  std::vector<double> mean_delta;                 // per feature
  std::vector<std::vector<double>> per_fold;      // [feature][fold]
  std::vector<std::size_t> ranking;               // feature indices, largest mean first

  std::string to_csv() const;
};

// AUC drop when `column` is reordered across the non-fully-missing validation
// examples by `perm` (perm[i] gives the donor position within that pool).
double permuted_delta_auc(AttentionMixer<float>& model, const std::vector<Example>& val,
                          std::size_t column, const std::vector<std::size_t>& perm);

// Rows of `val` taking part in permutation (fully-missing rows excluded).
std::vector<std::size_t> permutation_pool(const std::vector<Example>& val);

ImportanceReport permutation_importance(std::vector<FoldModel>& models,
                                        const std::vector<std::string>& features,
                                        std::size_t repeats, std::uint64_t seed);

struct AblationRow {
  std::string variant;
  double accuracy = 0;
  double precision = 0;
  double f1 = 0;
  double auc = 0;
};

std::vector<AblationRow> ablation_grid(const PreparedCohort& cohort, const ModelConfig& model_cfg,
                                       const TrainConfig& train_cfg, const CvOptions& opts,
                                       const std::vector<Variant>& variants);

std::string ablation_csv(const std::vector<AblationRow>& rows);

// metrics.json, roc_fold{i}.csv, roc_mean.csv, probs_fold{i}.csv,
// histogram.csv, train_log_fold{i}.csv.
void write_cv_reports(const std::filesystem::path& dir, const MetricsReport& report,
                      std::size_t histogram_bins = 10);

std::string format_number(double v);

}  // namespace attmix
