#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "attmix/cohort.hpp"
#include "attmix/encoder.hpp"
#include "attmix/metadata.hpp"
#include "attmix/model.hpp"

namespace attmix {

// A scan after the label-free preprocessing that does not depend on folds:
// resampled, clip-normalised, patchified; metadata one-hot expanded but not
// yet imputed or scaled.
struct PreparedSample {
  std::string patient_id;
  int label = 0;
  std::shared_ptr<const Tensor<float>> tokens;  // null when volumes were not loaded
  MetadataRecord record;
};

struct PreparedCohort {
  FeatureSchema schema;
  std::vector<std::string> feature_names;  // expanded columns
  std::vector<bool> numeric;               // per expanded column
  std::vector<PreparedSample> samples;
  std::vector<std::string> informative;    // synthetic cohorts only
};

// Reads volumes relative to `root` unless load_volumes is false (metadata-only runs).
PreparedCohort prepare_cohort(const CohortManifest& manifest, const std::filesystem::path& root,
                              const EncoderConfig& enc, bool load_volumes = true);

// Resample, clip-normalise and patchify one scan.
Tensor<float> preprocess_volume(const Volume& raw, const EncoderConfig& enc);

// Imputation and z-scoring fitted on training records only.
class MetadataPreprocessor {
 public:
  explicit MetadataPreprocessor(std::size_t knn_k = 5) : imputer_(knn_k) {}

  void fit(const std::vector<MetadataRecord>& train, const std::vector<bool>& numeric);
  MetadataRecord apply(const MetadataRecord& rec, std::vector<std::string>* warnings = nullptr) const;

  const KnnImputer& imputer() const { return imputer_; }
  const Standardizer& scaler() const { return scaler_; }

 private:
  KnnImputer imputer_;
  Standardizer scaler_;
};

// Model-ready sample: tokens (shared), optional cached encoder output, and
// an imputed + scaled metadata vector or the fully-missing flag.
struct Example {
  std::string patient_id;
  int label = 0;
  std::shared_ptr<const Tensor<float>> tokens;
  std::shared_ptr<const Tensor<float>> encoded;
  std::vector<float> metadata;
  bool metadata_missing = false;
};

std::vector<Example> make_examples(const PreparedCohort& cohort,
                                   const std::vector<std::size_t>& indices,
                                   const MetadataPreprocessor& prep,
                                   std::vector<std::string>* warnings = nullptr);

// Stacks examples[idx] into one batch. Uses cached encoder output when every
// example has it.
Batch<float> make_batch(const std::vector<Example>& examples, const std::vector<std::size_t>& idx,
                        std::size_t d_m);

}  // namespace attmix
