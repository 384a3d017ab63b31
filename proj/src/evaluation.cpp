#include "attmix/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "attmix/error.hpp"
#include "attmix/io.hpp"
#include "attmix/log.hpp"
#include "attmix/pretrain.hpp"
#include "attmix/rng.hpp"

namespace attmix {
namespace {

// Runs task(i) for i in [0, n) on up to `jobs` threads. The first failure
// by task index is rethrown after all threads finish.
template <typename F>
void run_parallel(std::size_t n, std::size_t jobs, F&& task) {
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        task(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(n, 1));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<Example> permute_column(const std::vector<Example>& val,
                                    const std::vector<std::size_t>& pool, std::size_t column,
                                    const std::vector<std::size_t>& perm) {
  std::vector<Example> out = val;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    out[pool[i]].metadata.at(column) = val[pool[perm.at(i)]].metadata.at(column);
  }
  return out;
}

std::string fold_label(const char* what, std::size_t fold) {
  return std::string(what) + "-fold-" + std::to_string(fold);
}

}  // namespace

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

FoldAssignment make_folds(std::vector<std::string> patient_ids, std::size_t k, std::uint64_t seed) {
  std::sort(patient_ids.begin(), patient_ids.end());
  patient_ids.erase(std::unique(patient_ids.begin(), patient_ids.end()), patient_ids.end());
  if (k < 2) throw ValidationError("k-fold needs k >= 2");
  if (k > patient_ids.size()) {
    throw ValidationError("k = " + std::to_string(k) + " exceeds the " +
                          std::to_string(patient_ids.size()) + " distinct patients");
  }
  Rng rng(seed);
  rng.shuffle(patient_ids.begin(), patient_ids.end());
  FoldAssignment folds;
  for (std::size_t i = 0; i < patient_ids.size(); ++i) folds[patient_ids[i]] = i % k;
  return folds;
}

void split_indices(const PreparedCohort& cohort, const FoldAssignment& folds, std::size_t fold,
                   std::vector<std::size_t>& train, std::vector<std::size_t>& val) {
  train.clear();
  val.clear();
  for (std::size_t i = 0; i < cohort.samples.size(); ++i) {
    const auto it = folds.find(cohort.samples[i].patient_id);
    if (it == folds.end()) {
      throw ContractError("patient '" + cohort.samples[i].patient_id + "' has no fold");
    }
    (it->second == fold ? val : train).push_back(i);
  }
}

MetadataPreprocessor fit_preprocessor(const PreparedCohort& cohort,
                                      const std::vector<std::size_t>& train, std::size_t knn_k) {
  std::vector<MetadataRecord> records;
  records.reserve(train.size());
  for (std::size_t i : train) records.push_back(cohort.samples.at(i).record);
  MetadataPreprocessor prep(knn_k);
  prep.fit(records, cohort.numeric);
  return prep;
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json folds_json = nlohmann::json::array();
  for (const FoldResult& f : folds) {
    folds_json.push_back({{"seed", f.seed},
                          {"fold", f.fold},
                          {"accuracy", f.metrics.accuracy},
                          {"precision", f.metrics.precision},
                          {"precision_degenerate", f.metrics.precision_degenerate},
                          {"f1", f.metrics.f1},
                          {"f1_degenerate", f.metrics.f1_degenerate},
                          {"auc", f.auc},
                          {"n_val", f.labels.size()},
                          {"best_epoch", f.log.best_epoch},
                          {"epochs", f.log.epochs.size()}});
  }
  return {{"variant", variant},
          {"threshold", threshold},
          {"folds", folds_json},
          {"mean", {{"accuracy", accuracy}, {"precision", precision}, {"f1", f1}, {"auc", auc}}}};
}

CvResult cross_validate(const PreparedCohort& cohort, const ModelConfig& model_cfg,
                        const TrainConfig& train_cfg, const CvOptions& opts) {
  if (opts.seeds.empty()) throw ConfigError("cross-validation needs at least one seed");
  if (opts.encoder_checkpoints.size() > 1 && opts.encoder_checkpoints.size() != opts.seeds.size()) {
    throw ConfigError("give one encoder checkpoint, or one per seed");
  }
  if (uses_hct(model_cfg.variant)) {
    for (const PreparedSample& s : cohort.samples) {
      if (!s.tokens) {
        throw PrerequisiteError("variant " + std::string(variant_name(model_cfg.variant)) +
                                " needs volumes, but the cohort was prepared without them");
      }
    }
  }
  std::vector<std::string> ids;
  for (const PreparedSample& s : cohort.samples) ids.push_back(s.patient_id);

  struct Task {
    std::uint64_t seed;
    std::size_t seed_index;
    std::size_t fold;
    const FoldAssignment* folds;
  };
  std::vector<FoldAssignment> assignments;
  for (std::uint64_t seed : opts.seeds) {
    assignments.push_back(make_folds(ids, opts.k, derive_seed(seed, "folds")));
  }
  std::vector<Task> tasks;
  for (std::size_t s = 0; s < opts.seeds.size(); ++s) {
    for (std::size_t f = 0; f < opts.k; ++f) tasks.push_back({opts.seeds[s], s, f, &assignments[s]});
  }

  std::vector<FoldResult> results(tasks.size());
  std::vector<std::vector<std::string>> warnings(tasks.size());
  std::vector<FoldModel> models(opts.keep_models ? tasks.size() : 0);

  run_parallel(tasks.size(), opts.jobs, [&](std::size_t t) {
    const Task& task = tasks[t];
    std::vector<std::size_t> tr, va;
    split_indices(cohort, *task.folds, task.fold, tr, va);
    const MetadataPreprocessor prep = fit_preprocessor(cohort, tr, opts.knn_k);
    const std::vector<Example> train_set = make_examples(cohort, tr, prep, &warnings[t]);
    const std::vector<Example> val_set = make_examples(cohort, va, prep, &warnings[t]);

    AttentionMixer<float> model(model_cfg, derive_seed(task.seed, fold_label("init", task.fold)));
    if (!opts.encoder_checkpoints.empty() && uses_hct(train_cfg.variant)) {
      const auto& path = opts.encoder_checkpoints.size() == 1 ? opts.encoder_checkpoints[0]
                                                             : opts.encoder_checkpoints[task.seed_index];
      load_encoder(path, model.encoder());
    }
    TrainConfig tc = train_cfg;
    tc.seed = derive_seed(task.seed, fold_label("train", task.fold));
    FoldResult& r = results[t];
    r.seed = task.seed;
    r.fold = task.fold;
    r.log = train(model, train_set, val_set, tc);
    r.scores = predict(model, val_set);
    r.labels = labels_of(val_set);
    for (const Example& e : val_set) r.patient_ids.push_back(e.patient_id);
    r.metrics = classification_metrics(r.scores, r.labels);
    r.auc = auc(r.scores, r.labels);
    r.roc = roc_curve(r.scores, r.labels);
    log_info(std::string(variant_name(tc.variant)) + " seed " + std::to_string(task.seed) + " fold " +
             std::to_string(task.fold) + " auc " + format_number(r.auc));
    if (opts.keep_models) models[t] = FoldModel{task.seed, task.fold, std::move(model), val_set};
  });

  CvResult out;
  out.report.variant = std::string(variant_name(train_cfg.variant));
  out.report.folds = std::move(results);
  const double n = static_cast<double>(out.report.folds.size());
  for (const FoldResult& f : out.report.folds) {
    out.report.accuracy += f.metrics.accuracy / n;
    out.report.precision += f.metrics.precision / n;
    out.report.f1 += f.metrics.f1 / n;
    out.report.auc += f.auc / n;
  }
  out.models = std::move(models);
  for (auto& w : warnings) out.warnings.insert(out.warnings.end(), w.begin(), w.end());
  return out;
}

double mean_auc(const MetricsReport& report) { return report.auc; }

std::vector<std::size_t> permutation_pool(const std::vector<Example>& val) {
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < val.size(); ++i) {
    if (!val[i].metadata_missing) pool.push_back(i);
  }
  return pool;
}

double permuted_delta_auc(AttentionMixer<float>& model, const std::vector<Example>& val,
                          std::size_t column, const std::vector<std::size_t>& perm) {
  const std::vector<std::size_t> pool = permutation_pool(val);
  if (perm.size() != pool.size()) {
    throw DimensionError("permutation length " + std::to_string(perm.size()) +
                         " differs from the pool of " + std::to_string(pool.size()));
  }
  const std::vector<int> labels = labels_of(val);
  const double baseline = auc(predict(model, val), labels);
  return baseline - auc(predict(model, permute_column(val, pool, column, perm)), labels);
}

ImportanceReport permutation_importance(std::vector<FoldModel>& models,
                                        const std::vector<std::string>& features,
                                        std::size_t repeats, std::uint64_t seed) {
  if (models.empty()) throw ValidationError("permutation importance needs trained fold models");
  if (repeats == 0) throw ConfigError("permutation repeats must be positive");
  ImportanceReport rep;
  rep.features = features;
  rep.per_fold.assign(features.size(), std::vector<double>(models.size(), 0.0));
  for (std::size_t m = 0; m < models.size(); ++m) {
    FoldModel& fm = models[m];
    if (!uses_metadata(fm.model.variant())) {
      throw ContractError("permutation importance needs a variant that reads metadata");
    }
    const std::vector<std::size_t> pool = permutation_pool(fm.val);
    const std::vector<int> labels = labels_of(fm.val);
    const double baseline = auc(predict(fm.model, fm.val), labels);
    for (std::size_t c = 0; c < features.size(); ++c) {
      Rng rng(derive_seed(seed, "perm-" + std::to_string(fm.seed) + "-" + std::to_string(fm.fold) +
                                    "-" + features[c]));
      double total = 0;
      for (std::size_t r = 0; r < repeats; ++r) {
        const std::vector<std::size_t> perm = rng.permutation(pool.size());
        total += baseline - auc(predict(fm.model, permute_column(fm.val, pool, c, perm)), labels);
      }
      rep.per_fold[c][m] = total / static_cast<double>(repeats);
    }
  }
  for (const std::vector<double>& v : rep.per_fold) {
    rep.mean_delta.push_back(std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()));
  }
  rep.ranking.resize(features.size());
  std::iota(rep.ranking.begin(), rep.ranking.end(), std::size_t{0});
  std::stable_sort(rep.ranking.begin(), rep.ranking.end(), [&](std::size_t a, std::size_t b) {
    return rep.mean_delta[a] > rep.mean_delta[b];
  });
  return rep;
}

std::string ImportanceReport::to_csv() const {
  std::ostringstream os;
  os << "rank,feature,mean_delta_auc";
  const std::size_t folds = per_fold.empty() ? 0 : per_fold[0].size();
  for (std::size_t f = 0; f < folds; ++f) os << ",fold" << f;
  os << '\n';
  for (std::size_t r = 0; r < ranking.size(); ++r) {
    const std::size_t c = ranking[r];
    os << r + 1 << ',' << features[c] << ',' << format_number(mean_delta[c]);
    for (double v : per_fold[c]) os << ',' << format_number(v);
    os << '\n';
  }
  return os.str();
}

std::vector<AblationRow> ablation_grid(const PreparedCohort& cohort, const ModelConfig& model_cfg,
                                       const TrainConfig& train_cfg, const CvOptions& opts,
                                       const std::vector<Variant>& variants) {
  std::vector<AblationRow> rows;
  for (Variant v : variants) {
    ModelConfig mc = model_cfg;
    mc.variant = v;
    TrainConfig tc = train_cfg;
    tc.variant = v;
    CvOptions o = opts;
    o.keep_models = false;
    const CvResult res = cross_validate(cohort, mc, tc, o);
    rows.push_back({std::string(variant_name(v)), res.report.accuracy, res.report.precision,
                    res.report.f1, res.report.auc});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,accuracy,precision,f1,auc\n";
  for (const AblationRow& r : rows) {
    os << r.variant << ',' << format_number(r.accuracy) << ',' << format_number(r.precision) << ','
       << format_number(r.f1) << ',' << format_number(r.auc) << '\n';
  }
  return os.str();
}

void write_cv_reports(const std::filesystem::path& dir, const MetricsReport& report,
                      std::size_t histogram_bins) {
  write_file_atomic(dir / "metrics.json", report.to_json().dump(2) + "\n");
  std::vector<RocCurve> curves;
  std::vector<double> all_scores;
  std::vector<int> all_labels;
  for (std::size_t i = 0; i < report.folds.size(); ++i) {
    const FoldResult& f = report.folds[i];
    curves.push_back(f.roc);
    std::ostringstream roc;
    roc << "fpr,tpr,threshold\n";
    for (const RocPoint& p : f.roc) {
      roc << format_number(p.fpr) << ',' << format_number(p.tpr) << ','
          << (std::isinf(p.threshold) ? std::string("inf") : format_number(p.threshold)) << '\n';
    }
    write_file_atomic(dir / ("roc_fold" + std::to_string(i) + ".csv"), roc.str());
    std::ostringstream probs;
    probs << "patient_id,label,score\n";
    for (std::size_t j = 0; j < f.scores.size(); ++j) {
      probs << f.patient_ids[j] << ',' << f.labels[j] << ',' << format_number(f.scores[j]) << '\n';
    }
    write_file_atomic(dir / ("probs_fold" + std::to_string(i) + ".csv"), probs.str());
    write_file_atomic(dir / ("train_log_fold" + std::to_string(i) + ".csv"), f.log.to_csv());
    all_scores.insert(all_scores.end(), f.scores.begin(), f.scores.end());
    all_labels.insert(all_labels.end(), f.labels.begin(), f.labels.end());
  }
  const MeanRoc mean = mean_roc(curves);
  std::ostringstream roc_mean;
  roc_mean << "fpr,tpr\n";
  for (std::size_t i = 0; i < mean.fpr.size(); ++i) {
    roc_mean << format_number(mean.fpr[i]) << ',' << format_number(mean.tpr[i]) << '\n';
  }
  write_file_atomic(dir / "roc_mean.csv", roc_mean.str());
  const ProbabilityHistogram h = probability_histogram(all_scores, all_labels, histogram_bins);
  std::ostringstream hist;
  hist << "bin_low,bin_high,negative,positive\n";
  for (std::size_t b = 0; b + 1 < h.edges.size(); ++b) {
    hist << format_number(h.edges[b]) << ',' << format_number(h.edges[b + 1]) << ','
         << h.negatives[b] << ',' << h.positives[b] << '\n';
  }
  write_file_atomic(dir / "histogram.csv", hist.str());
}

}  // namespace attmix
