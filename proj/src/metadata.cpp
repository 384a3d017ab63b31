#include "attmix/metadata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "attmix/error.hpp"

namespace attmix {

std::size_t expanded_width(const FeatureSchema& schema) {
  std::size_t w = 0;
  for (const FeatureSpec& f : schema) {
    w += f.kind == FeatureKind::kNumeric ? 1 : f.levels.size();
  }
  return w;
}

std::vector<std::string> expanded_names(const FeatureSchema& schema) {
  std::vector<std::string> names;
  for (const FeatureSpec& f : schema) {
    if (f.kind == FeatureKind::kNumeric) {
      names.push_back(f.name);
    } else {
      for (const std::string& level : f.levels) names.push_back(f.name + "=" + level);
    }
  }
  return names;
}

std::vector<bool> numeric_columns(const FeatureSchema& schema) {
  std::vector<bool> mask;
  for (const FeatureSpec& f : schema) {
    if (f.kind == FeatureKind::kNumeric) {
      mask.push_back(true);
    } else {
      mask.insert(mask.end(), f.levels.size(), false);
    }
  }
  return mask;
}

bool MetadataRecord::complete() const {
  return std::all_of(observed.begin(), observed.end(), [](bool b) { return b; });
}

MetadataRecord one_hot_expand(const FeatureSchema& schema, const std::string& patient_id,
                              const std::optional<RawRecord>& raw) {
  MetadataRecord rec;
  rec.patient_id = patient_id;
  const std::size_t width = expanded_width(schema);
  rec.values.assign(width, 0.0);
  rec.observed.assign(width, false);
  if (!raw) {
    rec.fully_missing = true;
    return rec;
  }
  for (const auto& [name, _] : *raw) {
    const bool known = std::any_of(schema.begin(), schema.end(),
                                   [&](const FeatureSpec& f) { return f.name == name; });
    if (!known) throw SchemaError("metadata field '" + name + "' is not in the schema");
  }
  std::size_t col = 0;
  for (const FeatureSpec& f : schema) {
    const auto it = raw->find(f.name);
    const bool present = it != raw->end() && !it->second.is_null();
    if (f.kind == FeatureKind::kNumeric) {
      if (present) {
        if (!it->second.number) {
          throw SchemaError("numeric field '" + f.name + "' holds a non-numeric value");
        }
        rec.values[col] = *it->second.number;
        rec.observed[col] = true;
      }
      ++col;
      continue;
    }
    if (present) {
      if (!it->second.level) {
        throw SchemaError("categorical field '" + f.name + "' holds a non-string value");
      }
      const auto lv = std::find(f.levels.begin(), f.levels.end(), *it->second.level);
      if (lv == f.levels.end()) {
        throw SchemaError("unknown level '" + *it->second.level + "' for field '" + f.name + "'");
      }
      const auto hit = static_cast<std::size_t>(lv - f.levels.begin());
      for (std::size_t j = 0; j < f.levels.size(); ++j) {
        rec.values[col + j] = j == hit ? 1.0 : 0.0;
        rec.observed[col + j] = true;
      }
    }
    col += f.levels.size();
  }
  return rec;
}

std::optional<double> masked_distance(const MetadataRecord& a, const MetadataRecord& b) {
  const std::size_t width = a.values.size();
  double total = 0;
  std::size_t shared = 0;
  for (std::size_t j = 0; j < width; ++j) {
    if (!a.observed[j] || !b.observed[j]) continue;
    const double d = a.values[j] - b.values[j];
    total += d * d;
    ++shared;
  }
  if (shared == 0) return std::nullopt;
  return std::sqrt(static_cast<double>(width) / static_cast<double>(shared) * total);
}

KnnImputer::KnnImputer(std::size_t k) : k_(k) {
  if (k == 0) throw ValidationError("k for the nearest-neighbour imputer must be at least 1");
}

void KnnImputer::fit(const std::vector<MetadataRecord>& train) {
  pool_.clear();
  width_ = 0;
  for (const MetadataRecord& r : train) {
    if (r.fully_missing) continue;
    if (pool_.empty()) width_ = r.values.size();
    if (r.values.size() != width_) throw DimensionError("imputer records differ in width");
    pool_.push_back(r);
  }
  if (pool_.empty() && !train.empty()) width_ = train.front().values.size();
  column_means_.assign(width_, 0.0);
  for (std::size_t j = 0; j < width_; ++j) {
    double total = 0;
    std::size_t n = 0;
    for (const MetadataRecord& r : pool_) {
      if (!r.observed[j]) continue;
      total += r.values[j];
      ++n;
    }
    column_means_[j] = n ? total / static_cast<double>(n) : 0.0;
  }
}

MetadataRecord KnnImputer::transform(const MetadataRecord& rec,
                                     std::vector<std::string>* warnings) const {
  if (rec.fully_missing) return rec;
  if (rec.values.size() != width_) throw DimensionError("record width differs from fitted width");
  MetadataRecord out = rec;
  if (rec.complete()) return out;

  std::vector<std::optional<double>> dist(pool_.size());
  for (std::size_t i = 0; i < pool_.size(); ++i) dist[i] = masked_distance(rec, pool_[i]);

  std::vector<std::size_t> donors;
  for (std::size_t j = 0; j < width_; ++j) {
    if (rec.observed[j]) continue;
    donors.clear();
    for (std::size_t i = 0; i < pool_.size(); ++i) {
      if (pool_[i].observed[j] && dist[i]) donors.push_back(i);
    }
    if (donors.empty()) {
      out.values[j] = column_means_[j];
      if (warnings) {
        warnings->push_back("no donor for column " + std::to_string(j) + " of patient '" +
                            rec.patient_id + "'; filled with training column mean");
      }
    } else {
      const std::size_t take = std::min(k_, donors.size());
      std::partial_sort(donors.begin(), donors.begin() + static_cast<std::ptrdiff_t>(take),
                        donors.end(), [&](std::size_t a, std::size_t b) {
                          if (*dist[a] != *dist[b]) return *dist[a] < *dist[b];
                          return a < b;
                        });
      double total = 0;
      for (std::size_t t = 0; t < take; ++t) total += pool_[donors[t]].values[j];
      out.values[j] = total / static_cast<double>(take);
    }
    out.observed[j] = true;
  }
  return out;
}

std::vector<MetadataRecord> KnnImputer::transform(const std::vector<MetadataRecord>& recs,
                                                  std::vector<std::string>* warnings) const {
  std::vector<MetadataRecord> out;
  out.reserve(recs.size());
  for (const MetadataRecord& r : recs) out.push_back(transform(r, warnings));
  return out;
}

void Standardizer::fit(const std::vector<MetadataRecord>& train, const std::vector<bool>& numeric) {
  numeric_ = numeric;
  const std::size_t width = numeric.size();
  mean_.assign(width, 0.0);
  std_.assign(width, 1.0);
  for (std::size_t j = 0; j < width; ++j) {
    if (!numeric[j]) continue;
    double total = 0, sq = 0;
    std::size_t n = 0;
    for (const MetadataRecord& r : train) {
      if (r.fully_missing || !r.observed[j]) continue;
      total += r.values[j];
      sq += r.values[j] * r.values[j];
      ++n;
    }
    if (n == 0) continue;
    const double m = total / static_cast<double>(n);
    const double var = std::max(0.0, sq / static_cast<double>(n) - m * m);
    mean_[j] = m;
    std_[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
}

MetadataRecord Standardizer::transform(const MetadataRecord& rec) const {
  if (rec.fully_missing) return rec;
  if (rec.values.size() != numeric_.size()) {
    throw DimensionError("record width differs from standardizer width");
  }
  MetadataRecord out = rec;
  for (std::size_t j = 0; j < numeric_.size(); ++j) {
    if (numeric_[j] && out.observed[j]) out.values[j] = (out.values[j] - mean_[j]) / std_[j];
  }
  return out;
}

}  // namespace attmix
