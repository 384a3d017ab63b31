#include "attmix/dataset.hpp"

#include <algorithm>

#include "attmix/error.hpp"
#include "attmix/volume.hpp"

namespace attmix {

Tensor<float> preprocess_volume(const Volume& raw, const EncoderConfig& enc) {
  const bool ready = raw.dims[0] == enc.side && raw.dims[1] == enc.side &&
                     raw.dims[2] == enc.side && raw.spacing[0] == raw.spacing[1] &&
                     raw.spacing[1] == raw.spacing[2];
  const Volume iso = ready ? raw : resample_volume(raw, enc.side);
  return patchify(clip_normalize(iso), enc.patch).tokens;
}

PreparedCohort prepare_cohort(const CohortManifest& manifest, const std::filesystem::path& root,
                              const EncoderConfig& enc, bool load_volumes) {
  PreparedCohort out;
  out.schema = manifest.schema;
  out.feature_names = expanded_names(manifest.schema);
  out.numeric = numeric_columns(manifest.schema);
  out.informative = informative_features(manifest);
  if (manifest.samples.empty()) throw ValidationError("cohort has no samples");
  for (const PatientSample& s : manifest.samples) {
    PreparedSample p;
    p.patient_id = s.patient_id;
    p.label = s.label;
    p.record = one_hot_expand(manifest.schema, s.patient_id, s.metadata);
    if (load_volumes) {
      const std::filesystem::path path = root / s.volume_path;
      if (!std::filesystem::exists(path)) {
        throw PrerequisiteError("volume file missing: " + path.string());
      }
      p.tokens = std::make_shared<const Tensor<float>>(preprocess_volume(load_volume(path), enc));
    }
    out.samples.push_back(std::move(p));
  }
  return out;
}

void MetadataPreprocessor::fit(const std::vector<MetadataRecord>& train,
                               const std::vector<bool>& numeric) {
  imputer_.fit(train);
  scaler_.fit(imputer_.transform(train), numeric);
}

MetadataRecord MetadataPreprocessor::apply(const MetadataRecord& rec,
                                           std::vector<std::string>* warnings) const {
  return scaler_.transform(imputer_.transform(rec, warnings));
}

std::vector<Example> make_examples(const PreparedCohort& cohort,
                                   const std::vector<std::size_t>& indices,
                                   const MetadataPreprocessor& prep,
                                   std::vector<std::string>* warnings) {
  std::vector<Example> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    const PreparedSample& s = cohort.samples.at(i);
    Example e;
    e.patient_id = s.patient_id;
    e.label = s.label;
    e.tokens = s.tokens;
    const MetadataRecord rec = prep.apply(s.record, warnings);
    e.metadata_missing = rec.fully_missing;
    e.metadata.assign(rec.values.size(), 0.0f);
    if (!rec.fully_missing) {
      for (std::size_t j = 0; j < rec.values.size(); ++j) e.metadata[j] = static_cast<float>(rec.values[j]);
    }
    out.push_back(std::move(e));
  }
  return out;
}

Batch<float> make_batch(const std::vector<Example>& examples, const std::vector<std::size_t>& idx,
                        std::size_t d_m) {
  if (idx.empty()) throw ValidationError("empty batch");
  Batch<float> b;
  b.size = idx.size();
  b.metadata = Tensor<float>({idx.size(), d_m});
  const bool cached = std::all_of(idx.begin(), idx.end(),
                                  [&](std::size_t i) { return examples[i].encoded != nullptr; });
  const bool have_tokens = std::all_of(idx.begin(), idx.end(),
                                       [&](std::size_t i) { return examples[i].tokens != nullptr; });
  const Tensor<float>* first = cached ? examples[idx[0]].encoded.get()
                                      : (have_tokens ? examples[idx[0]].tokens.get() : nullptr);
  Tensor<float> stacked;
  if (first) stacked = Tensor<float>({idx.size() * first->rows(), first->cols()});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Example& e = examples[idx[r]];
    if (e.metadata.size() != d_m) throw DimensionError("example metadata width differs from d_m");
    std::copy(e.metadata.begin(), e.metadata.end(), b.metadata.data().begin() + r * d_m);
    if (e.metadata_missing) b.missing_rows.push_back(r);
    b.labels.push_back(static_cast<float>(e.label));
    if (first) {
      const Tensor<float>& src = cached ? *e.encoded : *e.tokens;
      if (src.size() != first->size()) throw DimensionError("examples differ in token shape");
      std::copy(src.data().begin(), src.data().end(), stacked.data().begin() + r * src.size());
    }
  }
  if (cached) {
    b.encoded = std::move(stacked);
  } else if (first) {
    b.tokens = std::move(stacked);
  }
  return b;
}

}  // namespace attmix
