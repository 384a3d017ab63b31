#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "attmix/dataset.hpp"
#include "attmix/model.hpp"
#include "json.hpp"

namespace attmix {

struct TrainConfig {
  double lr = 1e-3;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 50;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  bool freeze_encoder = false;
  Variant variant = Variant::kFull;

  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0;  // mean over batches
  double val_loss = 0;
  double val_auc = 0;
};

struct TrainLog {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;        // epoch whose weights were kept
  bool stopped_early = false;
  std::size_t steps = 0;
  std::size_t missing_grad_steps = 0;  // steps where e_m received a nonzero gradient

  std::string to_csv() const;
  nlohmann::json to_json() const;
};

// Trains in place and leaves the model holding the best-validation-AUC
// weights. Early stopping watches validation loss.
TrainLog train(AttentionMixer<float>& model, const std::vector<Example>& train_set,
               const std::vector<Example>& val_set, const TrainConfig& cfg);

// Probabilities for each example, computed without recording gradients.
std::vector<double> predict(AttentionMixer<float>& model, const std::vector<Example>& examples,
                            std::size_t batch_size = 32);

// Mean BCE of the model on the examples.
double evaluate_loss(AttentionMixer<float>& model, const std::vector<Example>& examples,
                     std::size_t batch_size = 32);

// Copies of the examples carrying the encoder output, for frozen-encoder runs.
std::vector<Example> with_cached_encoding(ViTEncoder<float>& encoder,
                                          const std::vector<Example>& examples);

std::vector<int> labels_of(const std::vector<Example>& examples);

}  // namespace attmix
