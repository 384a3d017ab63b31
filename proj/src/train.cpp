#include "attmix/train.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "attmix/checkpoint.hpp"
#include "attmix/error.hpp"
#include "attmix/log.hpp"
#include "attmix/metrics.hpp"
#include "attmix/rng.hpp"

namespace attmix {
namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

std::string history_tail(const std::vector<double>& losses, std::size_t keep) {
  std::ostringstream os;
  const std::size_t start = losses.size() > keep ? losses.size() - keep : 0;
  os << "[";
  for (std::size_t i = start; i < losses.size(); ++i) os << (i > start ? ", " : "") << losses[i];
  os << "]";
  return os.str();
}

bool any_nonzero(const std::vector<float>& g) {
  return std::any_of(g.begin(), g.end(), [](float v) { return v != 0.0f; });
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (max_epochs == 0) throw ConfigError("max_epochs must be at least 1");
  if (patience > max_epochs) throw ConfigError("patience must not exceed max_epochs");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"lr", c.lr},
       {"batch_size", c.batch_size},
       {"max_epochs", c.max_epochs},
       {"patience", c.patience},
       {"seed", c.seed},
       {"freeze_encoder", c.freeze_encoder},
       {"variant", std::string(variant_name(c.variant))}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.freeze_encoder = j.value("freeze_encoder", c.freeze_encoder);
  if (j.contains("variant")) c.variant = parse_variant(j.at("variant").get<std::string>());
}

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,train_loss,val_loss,val_auc\n";
  for (const EpochStats& e : epochs) {
    os << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.val_auc << '\n';
  }
  return os.str();
}

nlohmann::json TrainLog::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const EpochStats& e : epochs) {
    rows.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"val_loss", e.val_loss},
                    {"val_auc", e.val_auc}});
  }
  return {{"epochs", rows},
          {"best_epoch", best_epoch},
          {"stopped_early", stopped_early},
          {"steps", steps},
          {"missing_grad_steps", missing_grad_steps}};
}

std::vector<int> labels_of(const std::vector<Example>& examples) {
  std::vector<int> y;
  y.reserve(examples.size());
  for (const Example& e : examples) y.push_back(e.label);
  return y;
}

std::vector<Example> with_cached_encoding(ViTEncoder<float>& encoder,
                                          const std::vector<Example>& examples) {
  std::vector<Example> out = examples;
  for (Example& e : out) {
    if (e.encoded || !e.tokens) continue;
    Tape<float> tape(false);
    Var<float> enc = encoder.encode(tape, tape.constant(*e.tokens), 1);
    e.encoded = std::make_shared<const Tensor<float>>(enc.value());
  }
  return out;
}

std::vector<double> predict(AttentionMixer<float>& model, const std::vector<Example>& examples,
                            std::size_t batch_size) {
  std::vector<double> scores;
  scores.reserve(examples.size());
  const std::size_t d_m = model.config().d_m;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(examples.size(), start + batch_size); ++i) idx.push_back(i);
    Tape<float> tape(false);
    const Var<float> prob = model.forward(tape, make_batch(examples, idx, d_m));
    for (float p : prob.value().values()) scores.push_back(p);
  }
  return scores;
}

double evaluate_loss(AttentionMixer<float>& model, const std::vector<Example>& examples,
                     std::size_t batch_size) {
  const std::vector<double> scores = predict(model, examples, batch_size);
  double total = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const double p = std::clamp(scores[i], 1e-7, 1.0 - 1e-7);
    total -= examples[i].label ? std::log(p) : std::log(1.0 - p);
  }
  return total / static_cast<double>(scores.size());
}

TrainLog train(AttentionMixer<float>& model, const std::vector<Example>& train_set,
               const std::vector<Example>& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw ValidationError("training split is empty");
  if (val_set.empty()) throw ValidationError("validation split is empty");
  const std::vector<int> val_labels = labels_of(val_set);
  if (std::count(val_labels.begin(), val_labels.end(), 1) == 0 ||
      std::count(val_labels.begin(), val_labels.end(), 0) == 0) {
    throw ValidationError("validation split holds a single class; AUC is undefined");
  }

  model.set_variant(cfg.variant);
  model.set_encoder_frozen(cfg.freeze_encoder);
  const bool cache = cfg.freeze_encoder && uses_hct(cfg.variant);
  // Fine-tuning must see the live encoder, so stale cached outputs are dropped.
  auto prepare = [&](const std::vector<Example>& in) {
    if (cache) return with_cached_encoding(model.encoder(), in);
    std::vector<Example> out = in;
    for (Example& e : out) e.encoded.reset();
    return out;
  };
  const std::vector<Example> tr = prepare(train_set);
  const std::vector<Example> va = prepare(val_set);

  std::vector<NamedParam<float>> params = model.variant_parameters();
  Adamax<float> opt(params, AdamaxOptions{cfg.lr});
  Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
  const std::size_t d_m = model.config().d_m;
  Tensor<float>& e_m = model.metadata_encoder().missing;

  TrainLog log;
  std::vector<double> history;
  std::vector<std::vector<float>> best_weights = snapshot(params);
  double best_auc = -1.0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t wait = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::size_t> order = iota_indices(tr.size());
    shuffle_rng.shuffle(order.begin(), order.end());
    double epoch_loss = 0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::vector<std::size_t> idx(
          order.begin() + static_cast<std::ptrdiff_t>(start),
          order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + cfg.batch_size)));
      const Batch<float> batch = make_batch(tr, idx, d_m);
      Tape<float> tape;
      Var<float> loss = bce_loss(model.forward(tape, batch), batch.labels);
      const double value = loss.value()[0];
      history.push_back(value);
      if (!std::isfinite(value)) {
        throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch) +
                            ", batch " + std::to_string(batches + 1) + "; recent losses " +
                            history_tail(history, 10));
      }
      opt.zero_grad();
      tape.backward(loss);
      if (e_m.has_grad() && any_nonzero(e_m.grad())) ++log.missing_grad_steps;
      opt.step();
      ++log.steps;
      epoch_loss += value;
      ++batches;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = epoch_loss / static_cast<double>(batches);
    const std::vector<double> scores = predict(model, va);
    double vloss = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const double p = std::clamp(scores[i], 1e-7, 1.0 - 1e-7);
      vloss -= val_labels[i] ? std::log(p) : std::log(1.0 - p);
    }
    stats.val_loss = vloss / static_cast<double>(scores.size());
    stats.val_auc = auc(scores, val_labels);
    log.epochs.push_back(stats);
    log_debug("epoch " + std::to_string(epoch) + " train_loss " + std::to_string(stats.train_loss) +
              " val_loss " + std::to_string(stats.val_loss) + " val_auc " +
              std::to_string(stats.val_auc));

    if (stats.val_auc > best_auc) {
      best_auc = stats.val_auc;
      log.best_epoch = epoch;
      best_weights = snapshot(params);
    }
    if (stats.val_loss < best_loss) {
      best_loss = stats.val_loss;
      wait = 0;
    } else if (++wait >= cfg.patience) {
      log.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }
  restore(params, best_weights);
  opt.zero_grad();
  return log;
}

}  // namespace attmix
