#include "attmix/commands.hpp"

#include <set>
#include <sstream>

#include "attmix/checkpoint.hpp"
#include "attmix/dataset.hpp"
#include "attmix/error.hpp"
#include "attmix/evaluation.hpp"
#include "attmix/io.hpp"
#include "attmix/log.hpp"
#include "attmix/rng.hpp"

namespace attmix {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items()) {
    if (!ok.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json synth_to_json(const SynthOptions& s) {
  return {{"n_patients", s.n_patients},
          {"side", s.side},
          {"d_m", s.d_m},
          {"missing_rate", s.missing_rate},
          {"signal_strength", s.signal_strength},
          {"multi_scan_fraction", s.multi_scan_fraction},
          {"partial_missing_rate", s.partial_missing_rate},
          {"artifact_rate", s.artifact_rate}};
}

void synth_from_json(const json& j, SynthOptions& s) {
  reject_unknown(j,
                 {"n_patients", "side", "d_m", "missing_rate", "signal_strength",
                  "multi_scan_fraction", "partial_missing_rate", "artifact_rate"},
                 "synth");
  read(j, "n_patients", s.n_patients);
  read(j, "side", s.side);
  read(j, "d_m", s.d_m);
  read(j, "missing_rate", s.missing_rate);
  read(j, "signal_strength", s.signal_strength);
  read(j, "multi_scan_fraction", s.multi_scan_fraction);
  read(j, "partial_missing_rate", s.partial_missing_rate);
  read(j, "artifact_rate", s.artifact_rate);
}

struct LoadedCohort {
  CohortManifest manifest;
  PreparedCohort prepared;
};

LoadedCohort load_cohort(const RunConfig& c, bool volumes) {
  const fs::path manifest = c.cohort_dir / "manifest.json";
  if (!fs::exists(manifest)) {
    throw PrerequisiteError("cohort manifest not found: " + manifest.string() + " (run synth first)");
  }
  LoadedCohort out;
  out.manifest = load_manifest(manifest);
  out.prepared = prepare_cohort(out.manifest, c.cohort_dir, c.model.encoder, volumes);
  log_info("cohort: " + std::to_string(out.prepared.samples.size()) + " scans, " +
           std::to_string(out.prepared.feature_names.size()) + " metadata columns");
  return out;
}

bool any_image_variant(const std::vector<Variant>& vs) {
  return std::any_of(vs.begin(), vs.end(), [](Variant v) { return uses_hct(v); });
}

void check_encoder_prerequisites(const RunConfig& c, const std::vector<Variant>& variants) {
  if (!any_image_variant(variants)) return;
  if (c.encoder_checkpoint && !fs::exists(*c.encoder_checkpoint)) {
    throw PrerequisiteError("encoder checkpoint not found: " + c.encoder_checkpoint->string() +
                            " (run pretrain first)");
  }
  if (c.train.freeze_encoder && !c.encoder_checkpoint) {
    throw PrerequisiteError("freeze_encoder is set but no encoder checkpoint is configured");
  }
}

ModelConfig model_for(const RunConfig& c, const PreparedCohort& cohort, Variant v) {
  ModelConfig m = c.model;
  m.d_m = cohort.feature_names.size();
  m.variant = v;
  m.validate();
  return m;
}

TrainConfig train_for(const RunConfig& c, Variant v, std::uint64_t seed) {
  TrainConfig t = c.train;
  t.variant = v;
  t.seed = seed;
  return t;
}

CvOptions cv_options(const RunConfig& c) {
  CvOptions o;
  o.k = c.eval.k;
  o.seeds = c.eval_seeds();
  o.jobs = c.eval.jobs;
  o.knn_k = c.eval.knn_k;
  if (c.encoder_checkpoint) o.encoder_checkpoints = {*c.encoder_checkpoint};
  return o;
}

void write_config(const RunConfig& c) {
  write_file_atomic(c.out_dir / "config.json", run_config_to_json(c).dump(2) + "\n");
}

void log_warnings(const std::vector<std::string>& warnings) {
  for (const std::string& w : warnings) log_warn(w);
}

}  // namespace

std::vector<std::uint64_t> RunConfig::eval_seeds() const {
  return eval.seeds.empty() ? std::vector<std::uint64_t>{seed} : eval.seeds;
}

void RunConfig::validate() const {
  if (eval.k < 2) throw ConfigError("eval.k must be at least 2");
  if (eval.jobs == 0) throw ConfigError("eval.jobs must be at least 1");
  if (eval.histogram_bins < 2) throw ConfigError("eval.histogram_bins must be at least 2");
  if (eval.importance_repeats == 0) throw ConfigError("eval.importance_repeats must be at least 1");
  if (variants.empty()) throw ConfigError("variants must not be empty");
  train.validate();
  pretrain.validate();
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  try {
    reject_unknown(j, {"paths", "seed", "synth", "encoder", "model", "train", "pretrain", "eval", "variants"},
                   "config");
    if (j.contains("paths")) {
      const json& p = j.at("paths");
      reject_unknown(p, {"cohort", "out", "encoder_checkpoint"}, "paths");
      if (p.contains("cohort")) c.cohort_dir = p.at("cohort").get<std::string>();
      if (p.contains("out")) c.out_dir = p.at("out").get<std::string>();
      if (p.contains("encoder_checkpoint") && !p.at("encoder_checkpoint").is_null()) {
        c.encoder_checkpoint = p.at("encoder_checkpoint").get<std::string>();
      }
    }
    read(j, "seed", c.seed);
    if (j.contains("synth")) synth_from_json(j.at("synth"), c.synth);
    if (j.contains("encoder")) {
      reject_unknown(j.at("encoder"), {"side", "patch", "d_enc", "depth", "heads", "mlp_ratio", "d_f", "mask_ratio"},
                     "encoder");
      c.model.encoder = j.at("encoder").get<EncoderConfig>();
    }
    if (j.contains("model")) {
      const json& m = j.at("model");
      reject_unknown(m, {"fusion_heads", "mixer_blocks", "mixer_hidden", "fusion_residual", "variant"}, "model");
      read(m, "fusion_heads", c.model.fusion_heads);
      read(m, "mixer_blocks", c.model.mixer_blocks);
      read(m, "mixer_hidden", c.model.mixer_hidden);
      read(m, "fusion_residual", c.model.fusion_residual);
      if (m.contains("variant")) c.model.variant = parse_variant(m.at("variant").get<std::string>());
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      reject_unknown(t, {"lr", "batch_size", "max_epochs", "patience", "freeze_encoder"}, "train");
      c.train = t.get<TrainConfig>();
    }
    if (j.contains("pretrain")) {
      reject_unknown(j.at("pretrain"), {"steps", "lr"}, "pretrain");
      c.pretrain = j.at("pretrain").get<PretrainConfig>();
    }
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      reject_unknown(e, {"k", "seeds", "knn_k", "jobs", "histogram_bins", "importance_repeats"}, "eval");
      read(e, "k", c.eval.k);
      read(e, "seeds", c.eval.seeds);
      read(e, "knn_k", c.eval.knn_k);
      read(e, "jobs", c.eval.jobs);
      read(e, "histogram_bins", c.eval.histogram_bins);
      read(e, "importance_repeats", c.eval.importance_repeats);
    }
    if (j.contains("variants")) {
      c.variants.clear();
      for (const json& v : j.at("variants")) c.variants.push_back(parse_variant(v.get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.train.variant = c.model.variant;
  c.validate();
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json paths = {{"cohort", c.cohort_dir.string()}, {"out", c.out_dir.string()}};
  paths["encoder_checkpoint"] = c.encoder_checkpoint ? json(c.encoder_checkpoint->string()) : json(nullptr);
  json variants = json::array();
  for (Variant v : c.variants) variants.push_back(std::string(variant_name(v)));
  json model = c.model;
  model.erase("encoder");
  model.erase("d_m");
  json train = c.train;
  train.erase("seed");
  train.erase("variant");
  json pretrain = c.pretrain;
  pretrain.erase("seed");
  return {{"paths", paths},
          {"seed", c.seed},
          {"synth", synth_to_json(c.synth)},
          {"encoder", c.model.encoder},
          {"model", model},
          {"train", train},
          {"pretrain", pretrain},
          {"eval",
           {{"k", c.eval.k},
            {"seeds", c.eval.seeds},
            {"knn_k", c.eval.knn_k},
            {"jobs", c.eval.jobs},
            {"histogram_bins", c.eval.histogram_bins},
            {"importance_repeats", c.eval.importance_repeats}}},
          {"variants", variants}};
}

RunConfig load_run_config(const fs::path& path) {
  if (!fs::exists(path)) throw PrerequisiteError("config file not found: " + path.string());
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what(), e.byte);
  }
  return run_config_from_json(j);
}

void apply_overrides(RunConfig& c, const Overrides& o) {
  if (o.seed) c.seed = *o.seed;
  if (o.out) c.out_dir = *o.out;
  if (o.variant) {
    const Variant v = parse_variant(*o.variant);
    c.model.variant = v;
    c.train.variant = v;
    c.variants = {v};
  }
  if (o.jobs) {
    if (*o.jobs == 0) throw ConfigError("--jobs must be at least 1");
    c.eval.jobs = *o.jobs;
  }
}

void cmd_synth(const RunConfig& c) {
  SynthOptions o = c.synth;
  o.seed = derive_seed(c.seed, "cohort");
  const CohortManifest m = generate_synthetic_cohort(o, c.cohort_dir);
  log_info("synth: wrote " + std::to_string(m.samples.size()) + " scans to " + c.cohort_dir.string());
}

void cmd_pretrain(const RunConfig& c) {
  const LoadedCohort cohort = load_cohort(c, true);
  std::vector<std::shared_ptr<const Tensor<float>>> scans;
  for (const PreparedSample& s : cohort.prepared.samples) scans.push_back(s.tokens);
  Rng rng(derive_seed(c.seed, "pretrain-init"));
  ViTEncoder<float> encoder(c.model.encoder, rng);
  PretrainConfig pc = c.pretrain;
  pc.seed = derive_seed(c.seed, "pretrain");
  const std::vector<double> losses = pretrain_encoder(encoder, scans, pc);
  save_encoder(c.out_dir / "encoder.ckpt", encoder);
  std::ostringstream log;
  log << "step,loss\n";
  for (std::size_t i = 0; i < losses.size(); ++i) log << i + 1 << ',' << format_number(losses[i]) << '\n';
  write_file_atomic(c.out_dir / "pretrain_log.csv", log.str());
  write_config(c);
  log_info("pretrain: loss " + format_number(losses.front()) + " -> " + format_number(losses.back()));
}

void cmd_train(const RunConfig& c) {
  const Variant v = c.model.variant;
  check_encoder_prerequisites(c, {v});
  const LoadedCohort cohort = load_cohort(c, uses_hct(v));
  const PreparedCohort& pc = cohort.prepared;
  std::vector<std::string> ids;
  for (const PreparedSample& s : pc.samples) ids.push_back(s.patient_id);
  // Fold 0 of the master seed's split is held out for validation.
  const FoldAssignment folds = make_folds(ids, c.eval.k, derive_seed(c.seed, "folds"));
  std::vector<std::size_t> tr, va;
  split_indices(pc, folds, 0, tr, va);
  const MetadataPreprocessor prep = fit_preprocessor(pc, tr, c.eval.knn_k);
  std::vector<std::string> warnings;
  const std::vector<Example> train_set = make_examples(pc, tr, prep, &warnings);
  const std::vector<Example> val_set = make_examples(pc, va, prep, &warnings);
  log_warnings(warnings);

  const ModelConfig mc = model_for(c, pc, v);
  AttentionMixer<float> model(mc, derive_seed(c.seed, "init"));
  if (uses_hct(v) && c.encoder_checkpoint) load_encoder(*c.encoder_checkpoint, model.encoder());
  const TrainConfig tc = train_for(c, v, derive_seed(c.seed, "train"));
  const TrainLog log = train(model, train_set, val_set, tc);

  save_checkpoint(c.out_dir / "model.ckpt", json{{"model", mc}, {"train", tc}}, model.parameters());
  write_file_atomic(c.out_dir / "train_log.csv", log.to_csv());
  write_file_atomic(c.out_dir / "train_log.json", log.to_json().dump(2) + "\n");
  write_config(c);
  log_info("train: best epoch " + std::to_string(log.best_epoch) + " of " + std::to_string(log.epochs.size()));
}

void cmd_eval(const RunConfig& c) {
  const Variant v = c.model.variant;
  check_encoder_prerequisites(c, {v});
  const LoadedCohort cohort = load_cohort(c, uses_hct(v));
  const ModelConfig mc = model_for(c, cohort.prepared, v);
  const CvResult r = cross_validate(cohort.prepared, mc, train_for(c, v, 0), cv_options(c));
  log_warnings(r.warnings);
  write_cv_reports(c.out_dir, r.report, c.eval.histogram_bins);
  write_config(c);
  log_info("eval: " + std::string(variant_name(v)) + " mean AUC " + format_number(r.report.auc));
}

void cmd_importance(const RunConfig& c) {
  const Variant v = c.model.variant;
  if (!uses_metadata(v)) throw ConfigError("permutation importance needs a variant that reads metadata");
  check_encoder_prerequisites(c, {v});
  const LoadedCohort cohort = load_cohort(c, uses_hct(v));
  const ModelConfig mc = model_for(c, cohort.prepared, v);
  CvOptions opts = cv_options(c);
  opts.keep_models = true;
  CvResult r = cross_validate(cohort.prepared, mc, train_for(c, v, 0), opts);
  log_warnings(r.warnings);
  const ImportanceReport rep = permutation_importance(r.models, cohort.prepared.feature_names,
                                                      c.eval.importance_repeats,
                                                      derive_seed(c.seed, "importance"));
  write_file_atomic(c.out_dir / "importance.csv", rep.to_csv());
  write_config(c);
  if (!rep.ranking.empty()) log_info("importance: top feature " + rep.features[rep.ranking.front()]);
}

void cmd_ablate(const RunConfig& c) {
  check_encoder_prerequisites(c, c.variants);
  const LoadedCohort cohort = load_cohort(c, any_image_variant(c.variants));
  const ModelConfig mc = model_for(c, cohort.prepared, c.model.variant);
  const std::vector<AblationRow> rows =
      ablation_grid(cohort.prepared, mc, train_for(c, mc.variant, 0), cv_options(c), c.variants);
  json out = json::array();
  for (const AblationRow& row : rows) {
    out.push_back({{"variant", row.variant},
                   {"accuracy", row.accuracy},
                   {"precision", row.precision},
                   {"f1", row.f1},
                   {"auc", row.auc}});
  }
  write_file_atomic(c.out_dir / "ablation.csv", ablation_csv(rows));
  write_file_atomic(c.out_dir / "ablation.json", json{{"rows", out}}.dump(2) + "\n");
  write_config(c);
}

}  // namespace attmix
