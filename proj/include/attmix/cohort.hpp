#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "attmix/metadata.hpp"

namespace attmix {

// One scan of one patient. `metadata` is empty when the whole record is missing.
struct PatientSample {
  std::string patient_id;
  std::string volume_path;  // relative to the manifest directory
  std::optional<RawRecord> metadata;
  int label = 0;
};

struct CohortManifest {
  FeatureSchema schema;
  std::vector<PatientSample> samples;
  nlohmann::json generator;  // provenance of synthetic cohorts; null otherwise

  std::vector<std::string> patient_ids() const;  // distinct, sorted
};

nlohmann::json manifest_to_json(const CohortManifest& m);
CohortManifest manifest_from_json(const nlohmann::json& j);

void save_manifest(const std::filesystem::path& path, const CohortManifest& m);
CohortManifest load_manifest(const std::filesystem::path& path);

struct SynthOptions {
  std::uint64_t seed = 7;
  std::size_t n_patients = 200;
  std::size_t side = 16;
  std::size_t d_m = 12;  // raw fields: d_m - 1 numeric plus one 3-level categorical
  double missing_rate = 0.1;
  double signal_strength = 1.0;
  double multi_scan_fraction = 0.2;
  double partial_missing_rate = 0.05;
  double artifact_rate = 0.5;
};

// Writes <dir>/manifest.json and <dir>/volumes/*.vol.
//
// Labels are balanced. Each positive patient carries imaging evidence (a
// smooth bright blob inside the brain), clinical evidence (a shift of the
// two informative numeric fields), or both, with probabilities 0.35 / 0.35 /
// 0.30. Evidence magnitudes scale with signal_strength; at zero the labels
// are independent of every input. Negatives at site C show a blob-shaped
// artifact with probability artifact_rate. Whole records go missing per patient with
// probability missing_rate, single fields with partial_missing_rate.
CohortManifest generate_synthetic_cohort(const SynthOptions& opts,
                                         const std::filesystem::path& dir);

// Names of the fields that carry label signal in a synthetic cohort.
std::vector<std::string> informative_features(const CohortManifest& m);

}  // namespace attmix
