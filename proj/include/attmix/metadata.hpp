#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace attmix {

enum class FeatureKind { kNumeric, kCategorical };

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::kNumeric;
  std::vector<std::string> levels;  // categorical only
};

using FeatureSchema = std::vector<FeatureSpec>;

// One raw field as stored in the manifest. Neither member set means null.
struct RawField {
  std::optional<double> number;
  std::optional<std::string> level;

  bool is_null() const { return !number && !level; }
};

using RawRecord = std::map<std::string, RawField>;

// Width of the metadata vector after one-hot expansion.
std::size_t expanded_width(const FeatureSchema& schema);

// Column names after expansion; categorical slots are named "field=level".
std::vector<std::string> expanded_names(const FeatureSchema& schema);

// True for columns that came from numeric fields (z-scored), false for indicators.
std::vector<bool> numeric_columns(const FeatureSchema& schema);

// Expanded metadata vector with per-slot observation flags.
struct MetadataRecord {
  std::string patient_id;
  std::vector<double> values;
  std::vector<bool> observed;
  bool fully_missing = false;

  bool complete() const;  // every slot observed
};

// Numeric fields are copied; a categorical field with L levels becomes L
// indicator slots. Null or absent fields leave their slots unobserved. A
// missing raw record produces a fully_missing record.
MetadataRecord one_hot_expand(const FeatureSchema& schema, const std::string& patient_id,
                              const std::optional<RawRecord>& raw);

// k-nearest-neighbour imputer. Distances use the coordinates both records
// observe, scaled by (width / shared count), as in nan-Euclidean distance.
// Donors for a field are the fitted records that observe it; ties on
// distance keep fitted order. Fully missing records are neither donors nor
// imputed.
class KnnImputer {
 public:
  explicit KnnImputer(std::size_t k = 5);

  void fit(const std::vector<MetadataRecord>& train);
  // Slots with no usable donor are filled with the fitted column mean and
  // described in `warnings` when given.
  MetadataRecord transform(const MetadataRecord& rec,
                           std::vector<std::string>* warnings = nullptr) const;
  std::vector<MetadataRecord> transform(const std::vector<MetadataRecord>& recs,
                                        std::vector<std::string>* warnings = nullptr) const;

  std::size_t k() const { return k_; }
  const std::vector<double>& column_means() const { return column_means_; }

 private:
  std::size_t k_;
  std::size_t width_ = 0;
  std::vector<MetadataRecord> pool_;
  std::vector<double> column_means_;
};

// Nan-Euclidean distance between two records over mutually observed slots;
// nullopt when they share none.
std::optional<double> masked_distance(const MetadataRecord& a, const MetadataRecord& b);

// Z-scoring of the numeric columns with statistics from fitted records.
class Standardizer {
 public:
  void fit(const std::vector<MetadataRecord>& train, const std::vector<bool>& numeric);
  MetadataRecord transform(const MetadataRecord& rec) const;

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& stddev() const { return std_; }

 private:
  std::vector<bool> numeric_;
  std::vector<double> mean_;
  std::vector<double> std_;
};

}  // namespace attmix
