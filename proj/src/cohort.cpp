#include "attmix/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "attmix/error.hpp"
#include "attmix/io.hpp"
#include "attmix/rng.hpp"
#include "attmix/volume.hpp"

namespace attmix {

using nlohmann::json;

std::vector<std::string> CohortManifest::patient_ids() const {
  std::set<std::string> ids;
  for (const PatientSample& s : samples) ids.insert(s.patient_id);
  return {ids.begin(), ids.end()};
}

json manifest_to_json(const CohortManifest& m) {
  json schema = json::array();
  for (const FeatureSpec& f : m.schema) {
    json e = {{"name", f.name}, {"kind", f.kind == FeatureKind::kNumeric ? "numeric" : "categorical"}};
    if (f.kind == FeatureKind::kCategorical) e["levels"] = f.levels;
    schema.push_back(std::move(e));
  }
  json samples = json::array();
  for (const PatientSample& s : m.samples) {
    json e = {{"patient_id", s.patient_id}, {"volume", s.volume_path}, {"label", s.label}};
    if (s.metadata) {
      json md = json::object();
      for (const auto& [name, field] : *s.metadata) {
        if (field.number) {
          md[name] = *field.number;
        } else if (field.level) {
          md[name] = *field.level;
        } else {
          md[name] = nullptr;
        }
      }
      e["metadata"] = std::move(md);
    }
    samples.push_back(std::move(e));
  }
  json out = {{"schema", std::move(schema)}, {"samples", std::move(samples)}};
  if (!m.generator.is_null()) out["generator"] = m.generator;
  return out;
}

CohortManifest manifest_from_json(const json& j) {
  CohortManifest m;
  try {
    for (const json& e : j.at("schema")) {
      FeatureSpec f;
      f.name = e.at("name").get<std::string>();
      const std::string kind = e.at("kind").get<std::string>();
      if (kind == "numeric") {
        f.kind = FeatureKind::kNumeric;
      } else if (kind == "categorical") {
        f.kind = FeatureKind::kCategorical;
        f.levels = e.at("levels").get<std::vector<std::string>>();
        if (f.levels.empty()) throw SchemaError("categorical field '" + f.name + "' has no levels");
      } else {
        throw SchemaError("unknown feature kind '" + kind + "'");
      }
      m.schema.push_back(std::move(f));
    }
    for (const json& e : j.at("samples")) {
      PatientSample s;
      s.patient_id = e.at("patient_id").get<std::string>();
      s.volume_path = e.at("volume").get<std::string>();
      s.label = e.at("label").get<int>();
      if (s.label != 0 && s.label != 1) {
        throw ValidationError("label of patient '" + s.patient_id + "' must be 0 or 1");
      }
      if (e.contains("metadata") && !e.at("metadata").is_null()) {
        RawRecord rec;
        for (const auto& [name, v] : e.at("metadata").items()) {
          RawField f;
          if (v.is_number()) {
            f.number = v.get<double>();
          } else if (v.is_string()) {
            f.level = v.get<std::string>();
          } else if (!v.is_null()) {
            throw SchemaError("metadata field '" + name + "' must be a number, string or null");
          }
          rec[name] = std::move(f);
        }
        s.metadata = std::move(rec);
      }
      m.samples.push_back(std::move(s));
    }
    if (j.contains("generator")) m.generator = j.at("generator");
  } catch (const json::exception& ex) {
    throw SchemaError(std::string("malformed manifest: ") + ex.what());
  }
  return m;
}

void save_manifest(const std::filesystem::path& path, const CohortManifest& m) {
  write_file_atomic(path, manifest_to_json(m).dump(2) + "\n");
}

CohortManifest load_manifest(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& ex) {
    throw FormatError(std::string("manifest is not valid JSON: ") + ex.what(), ex.byte);
  }
  return manifest_from_json(j);
}

std::vector<std::string> informative_features(const CohortManifest& m) {
  if (m.generator.is_null() || !m.generator.contains("informative")) return {};
  return m.generator.at("informative").get<std::vector<std::string>>();
}

namespace {

struct BlobSpec {
  bool present = false;
  double amplitude = 0;
  std::array<double, 3> center{};
};

constexpr double kBlobSigma = 0.25;
constexpr double kNoiseSigma = 0.25;
constexpr double kClinicalShift = 2.5;
constexpr double kBlobAmplitude = 0.9;

Volume render_scan(std::size_t side, const BlobSpec& blob, Rng& rng) {
  const std::size_t depth = std::max<std::size_t>(4, side * 3 / 4);
  // Thicker slices along D so every axis spans the same physical extent.
  const auto d_spacing = static_cast<float>(static_cast<double>(side - 1) /
                                            static_cast<double>(depth - 1));
  const double gain = rng.uniform(0.8, 1.25);
  const double offset = rng.uniform(-0.2, 0.2);
  std::vector<float> vox(depth * side * side);
  for (std::size_t d = 0; d < depth; ++d) {
    const double z = -1.0 + 2.0 * static_cast<double>(d) / static_cast<double>(depth - 1);
    for (std::size_t h = 0; h < side; ++h) {
      const double y = -1.0 + 2.0 * static_cast<double>(h) / static_cast<double>(side - 1);
      for (std::size_t w = 0; w < side; ++w) {
        const double x = -1.0 + 2.0 * static_cast<double>(w) / static_cast<double>(side - 1);
        const double r = std::sqrt(x * x / 0.64 + y * y / 0.81 + z * z / 0.72);
        double value = 1.0 / (1.0 + std::exp((r - 1.0) / 0.05));
        if (blob.present) {
          const double dz = z - blob.center[0], dy = y - blob.center[1], dx = x - blob.center[2];
          value += blob.amplitude *
                   std::exp(-(dx * dx + dy * dy + dz * dz) / (2 * kBlobSigma * kBlobSigma));
        }
        value = gain * value + offset + kNoiseSigma * rng.normal();
        vox[(d * side + h) * side + w] = static_cast<float>(value);
      }
    }
  }
  return Volume({depth, side, side}, std::move(vox), {d_spacing, 1.0f, 1.0f});
}

std::string fmt_id(const char* prefix, std::size_t n) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%04zu", prefix, n);
  return buf;
}

}  // namespace

CohortManifest generate_synthetic_cohort(const SynthOptions& o, const std::filesystem::path& dir) {
  if (o.n_patients < 10) throw ValidationError("synthetic cohort needs at least 10 patients");
  if (o.side < 8) throw ValidationError("synthetic volume side must be at least 8");
  if (o.d_m < 4) throw ValidationError("synthetic metadata needs at least 4 fields");
  for (double rate : {o.missing_rate, o.multi_scan_fraction, o.partial_missing_rate, o.artifact_rate}) {
    if (!(rate >= 0.0 && rate <= 1.0)) throw ValidationError("rates must lie in [0, 1]");
  }
  if (!(o.signal_strength >= 0.0) || !std::isfinite(o.signal_strength)) {
    throw ValidationError("signal_strength must be a finite non-negative number");
  }

  Rng rng(derive_seed(o.seed, "synth"));
  const std::size_t n_num = o.d_m - 1;
  const std::size_t info_a = n_num / 3, info_b = 2 * n_num / 3;

  CohortManifest m;
  for (std::size_t j = 0; j < n_num; ++j) {
    m.schema.push_back({fmt_id("f", j), FeatureKind::kNumeric, {}});
  }
  m.schema.push_back({"site", FeatureKind::kCategorical, {"A", "B", "C"}});

  std::vector<int> labels(o.n_patients, 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(o.n_patients / 2), 1);
  rng.shuffle(labels.begin(), labels.end());

  std::size_t n_missing = 0, n_imaging = 0, n_clinical = 0, n_artifacts = 0, n_scans = 0;
  const std::filesystem::path vol_dir = dir / "volumes";
  std::filesystem::create_directories(vol_dir);
  for (std::size_t p = 0; p < o.n_patients; ++p) {
    const std::string id = fmt_id("P", p + 1);
    const int label = labels[p];
    const double u = rng.uniform();
    const bool imaging = label == 1 && (u < 0.35 || u >= 0.70);
    const bool clinical = label == 1 && u >= 0.35;
    n_imaging += imaging;
    n_clinical += clinical;

    RawRecord rec;
    for (std::size_t j = 0; j < n_num; ++j) {
      const double scale = 1.0 + 0.5 * static_cast<double>(j % 3);
      const double offset = 10.0 * static_cast<double>(j % 4);
      double z = rng.normal();
      if (clinical && (j == info_a || j == info_b)) z += kClinicalShift * o.signal_strength;
      RawField f;
      f.number = offset + scale * z;
      rec[m.schema[j].name] = f;
    }
    RawField site;
    site.level = m.schema.back().levels[rng.below(3)];
    rec["site"] = site;
    for (auto& [_, f] : rec) {
      if (rng.bernoulli(o.partial_missing_rate)) f = RawField{};
    }
    const bool fully_missing = rng.bernoulli(o.missing_rate);
    n_missing += fully_missing;

    // Scanners at site C also produce blob-like artifacts in negatives, so a
    // blob is only evidence when read together with the site field.
    const bool artifact = label == 0 && site.level == "C" && rng.bernoulli(o.artifact_rate);
    n_artifacts += artifact;
    BlobSpec blob;
    blob.present = (imaging || artifact) && o.signal_strength > 0;
    blob.amplitude = kBlobAmplitude * o.signal_strength;
    do {
      for (double& c : blob.center) c = rng.uniform(-0.45, 0.45);
    } while (std::hypot(blob.center[0], blob.center[1], blob.center[2]) > 0.45);

    const std::size_t scans = rng.bernoulli(o.multi_scan_fraction) ? 2 : 1;
    for (std::size_t s = 0; s < scans; ++s) {
      BlobSpec scan_blob = blob;
      if (s > 0) {
        for (double& c : scan_blob.center) c += 0.05 * rng.normal();
      }
      const Volume vol = render_scan(o.side, scan_blob, rng);
      const std::string rel = "volumes/" + id + "_" + std::to_string(s) + ".vol";
      save_volume(dir / rel, vol);
      PatientSample sample;
      sample.patient_id = id;
      sample.volume_path = rel;
      sample.label = label;
      if (!fully_missing) sample.metadata = rec;
      m.samples.push_back(std::move(sample));
      ++n_scans;
    }
  }

  m.generator = {
      {"seed", o.seed},
      {"n_patients", o.n_patients},
      {"side", o.side},
      {"d_m", o.d_m},
      {"missing_rate", o.missing_rate},
      {"signal_strength", o.signal_strength},
      {"multi_scan_fraction", o.multi_scan_fraction},
      {"partial_missing_rate", o.partial_missing_rate},
      {"artifact_rate", o.artifact_rate},
      {"informative", {m.schema[info_a].name, m.schema[info_b].name}},
      {"n_fully_missing", n_missing},
      {"n_scans", n_scans},
      {"n_positive_imaging", n_imaging},
      {"n_positive_clinical", n_clinical},
      {"n_negative_artifacts", n_artifacts},
  };
  save_manifest(dir / "manifest.json", m);
  return m;
}

}  // namespace attmix
