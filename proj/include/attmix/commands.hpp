#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "attmix/cohort.hpp"
#include "attmix/model.hpp"
#include "attmix/pretrain.hpp"
#include "attmix/train.hpp"
#include "json.hpp"

namespace attmix {

struct EvalSettings {
  std::size_t k = 5;
  std::vector<std::uint64_t> seeds;  // empty: the master seed alone
  std::size_t knn_k = 5;
  std::size_t jobs = 1;
  std::size_t histogram_bins = 10;
  std::size_t importance_repeats = 5;
};

// Everything one run needs. Per-stage seeds are derived from `seed`.
struct RunConfig {
  std::filesystem::path cohort_dir = "cohort";
  std::filesystem::path out_dir = "runs";
  std::optional<std::filesystem::path> encoder_checkpoint;
  std::uint64_t seed = 7;
  SynthOptions synth;
  ModelConfig model;  // d_m is taken from the cohort
  TrainConfig train;
  PretrainConfig pretrain;
  EvalSettings eval;
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};

  std::vector<std::uint64_t> eval_seeds() const;
  void validate() const;
};

// Unknown keys and ill-typed values raise ConfigError.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

// Command-line overrides applied on top of the file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::string> variant;
  std::optional<std::size_t> jobs;
};

void apply_overrides(RunConfig& c, const Overrides& o);

// Each command reruns to byte-identical outputs for the same config.
void cmd_synth(const RunConfig& c);       // cohort_dir/manifest.json, volumes/
void cmd_pretrain(const RunConfig& c);    // out/encoder.ckpt, pretrain_log.csv
void cmd_train(const RunConfig& c);       // out/model.ckpt, train_log.{csv,json}
void cmd_eval(const RunConfig& c);        // out/metrics.json and per-fold CSVs
void cmd_importance(const RunConfig& c);  // out/importance.csv
void cmd_ablate(const RunConfig& c);      // out/ablation.{csv,json}

}  // namespace attmix
