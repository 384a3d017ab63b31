#include <cmath>
#include <filesystem>
#include <limits>

#include "attmix/checkpoint.hpp"
#include "attmix/error.hpp"
#include "attmix/io.hpp"
#include "attmix/metrics.hpp"
#include "attmix/pretrain.hpp"
#include "attmix/rng.hpp"
#include "attmix/train.hpp"
#include "doctest.h"

using namespace attmix;
namespace fs = std::filesystem;

namespace {

ModelConfig toy_config(Variant v, std::size_t d_m = 2) {
  ModelConfig c;
  c.encoder.side = 8;
  c.encoder.patch = 4;
  c.encoder.d_enc = 8;
  c.encoder.depth = 1;
  c.encoder.heads = 2;
  c.encoder.d_f = 8;
  c.d_m = d_m;
  c.fusion_heads = 2;
  c.mixer_blocks = 1;
  c.variant = v;
  return c;
}

// Two well-separated clusters in the metadata plane; random tokens.
std::vector<Example> toy_examples(std::size_t n, std::uint64_t seed, bool with_tokens = false) {
  Rng rng(seed);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    Example e;
    e.patient_id = "T" + std::to_string(seed) + "_" + std::to_string(i);
    e.label = static_cast<int>(i % 2);
    const double centre = e.label ? 1.5 : -1.5;
    e.metadata = {static_cast<float>(centre + 0.5 * rng.normal()),
                  static_cast<float>(-centre + 0.5 * rng.normal())};
    if (with_tokens) {
      Tensor<float> t({8, 64});
      for (float& v : t.values()) v = static_cast<float>(rng.uniform());
      e.tokens = std::make_shared<const Tensor<float>>(std::move(t));
    }
    out.push_back(std::move(e));
  }
  return out;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("attmix_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("training on separable data halves the loss by epoch 20") {
  AttentionMixer<float> model(toy_config(Variant::kMetaOnly), 1);
  TrainConfig cfg;
  cfg.variant = Variant::kMetaOnly;
  cfg.max_epochs = 20;
  cfg.patience = 20;
  cfg.seed = 5;
  const TrainLog log = train(model, toy_examples(64, 2), toy_examples(32, 3), cfg);
  REQUIRE(log.epochs.size() == 20);
  CHECK(log.epochs[19].train_loss < 0.5 * log.epochs[0].train_loss);
  for (const EpochStats& e : log.epochs) CHECK(std::isfinite(e.train_loss));
}

TEST_CASE("patience zero stops at the first non-improving epoch") {
  AttentionMixer<float> model(toy_config(Variant::kMetaOnly), 1);
  TrainConfig cfg;
  cfg.variant = Variant::kMetaOnly;
  cfg.max_epochs = 50;
  cfg.patience = 0;
  cfg.lr = 0.5;  // large steps make validation loss turn upward quickly
  const TrainLog log = train(model, toy_examples(32, 2), toy_examples(16, 3), cfg);
  REQUIRE(log.epochs.size() >= 2);
  const std::size_t n = log.epochs.size();
  for (std::size_t i = 1; i + 1 < n; ++i) CHECK(log.epochs[i].val_loss < log.epochs[i - 1].val_loss);
  if (n < cfg.max_epochs) {
    CHECK(log.epochs[n - 1].val_loss >= log.epochs[n - 2].val_loss);
    CHECK(log.stopped_early);
  }
}

TEST_CASE("same seed gives an identical log") {
  auto run = [] {
    AttentionMixer<float> model(toy_config(Variant::kFull), 9);
    TrainConfig cfg;
    cfg.variant = Variant::kFull;
    cfg.max_epochs = 4;
    cfg.patience = 4;
    cfg.seed = 77;
    return train(model, toy_examples(24, 2, true), toy_examples(12, 3, true), cfg).to_csv();
  };
  CHECK(run() == run());
}

TEST_CASE("kept weights come from the best validation AUC epoch") {
  AttentionMixer<float> model(toy_config(Variant::kFull), 4);
  TrainConfig cfg;
  cfg.variant = Variant::kFull;
  cfg.max_epochs = 6;
  cfg.patience = 6;
  const std::vector<Example> val = toy_examples(12, 3, true);
  const TrainLog log = train(model, toy_examples(24, 2, true), val, cfg);
  REQUIRE(log.best_epoch >= 1);
  double best = -1;
  for (const EpochStats& e : log.epochs) best = std::max(best, e.val_auc);
  CHECK(log.epochs[log.best_epoch - 1].val_auc == best);
  for (std::size_t i = 0; i + 1 < log.best_epoch; ++i) CHECK(log.epochs[i].val_auc < best);
  CHECK(auc(predict(model, val), labels_of(val)) == doctest::Approx(best).epsilon(1e-9));
}

TEST_CASE("frozen encoder parameters never change") {
  AttentionMixer<float> model(toy_config(Variant::kFull), 4);
  std::vector<NamedParam<float>> enc;
  model.encoder().collect_encoder(enc);
  std::vector<std::vector<float>> before;
  for (auto& p : enc) before.push_back(p.tensor->values());
  const std::vector<float> proj_before = model.encoder().projection().values();
  TrainConfig cfg;
  cfg.variant = Variant::kFull;
  cfg.freeze_encoder = true;
  cfg.max_epochs = 3;
  cfg.patience = 3;
  train(model, toy_examples(24, 2, true), toy_examples(12, 3, true), cfg);
  for (std::size_t i = 0; i < enc.size(); ++i) CHECK(enc[i].tensor->values() == before[i]);
  CHECK(model.encoder().projection().values() != proj_before);
}

TEST_CASE("training errors") {
  AttentionMixer<float> model(toy_config(Variant::kMetaOnly), 1);
  TrainConfig cfg;
  cfg.variant = Variant::kMetaOnly;
  CHECK_THROWS_AS(train(model, {}, toy_examples(4, 1), cfg), ValidationError);
  CHECK_THROWS_AS(train(model, toy_examples(4, 1), {}, cfg), ValidationError);
  std::vector<Example> one_class = toy_examples(4, 1);
  for (Example& e : one_class) e.label = 1;
  CHECK_THROWS_AS(train(model, toy_examples(4, 2), one_class, cfg), ValidationError);
  cfg.patience = cfg.max_epochs + 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  TrainConfig ok;
  ok.variant = Variant::kMetaOnly;
  model.head().fc.weight[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train(model, toy_examples(8, 2), toy_examples(4, 3), ok);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find("batch 1") != std::string::npos);
  }
}

TEST_CASE("missing-record embedding is trained when records are missing") {
  std::vector<Example> tr = toy_examples(32, 2);
  for (std::size_t i = 0; i < tr.size(); i += 4) tr[i].metadata_missing = true;
  AttentionMixer<float> model(toy_config(Variant::kMetaOnly), 1);
  const std::vector<float> before = model.metadata_encoder().missing.values();
  TrainConfig cfg;
  cfg.variant = Variant::kMetaOnly;
  cfg.max_epochs = 3;
  cfg.patience = 3;
  const TrainLog log = train(model, tr, toy_examples(8, 3), cfg);
  CHECK(log.missing_grad_steps > 0);
  CHECK(model.metadata_encoder().missing.values() != before);
}

TEST_CASE("checkpoint round-trip") {
  const fs::path dir = fresh_dir("ckpt");
  const ModelConfig cfg = toy_config(Variant::kFull);
  AttentionMixer<float> model(cfg, 3);
  nlohmann::json jc = cfg;
  save_checkpoint(dir / "a.ckpt", jc, model.parameters());
  const Checkpoint ck = load_checkpoint(dir / "a.ckpt");
  AttentionMixer<float> other(cfg, 99);
  restore_parameters(ck, other.parameters());
  save_checkpoint(dir / "b.ckpt", jc, other.parameters());
  CHECK(read_file(dir / "a.ckpt") == read_file(dir / "b.ckpt"));

  const std::vector<Example> ex = toy_examples(6, 4, true);
  CHECK(predict(model, ex) == predict(other, ex));

  ModelConfig wider = cfg;
  wider.encoder.d_f = 16;
  wider.fusion_heads = 4;
  AttentionMixer<float> mismatched(wider, 3);
  try {
    restore_parameters(ck, mismatched.parameters());
    FAIL("expected a contract error");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("hct_proj.weight") != std::string::npos);
  }
}

TEST_CASE("encoder checkpoints load into fresh models") {
  const fs::path dir = fresh_dir("encoder");
  const ModelConfig cfg = toy_config(Variant::kFull);
  Rng rng(1);
  ViTEncoder<float> enc(cfg.encoder, rng);
  save_encoder(dir / "enc.ckpt", enc);
  AttentionMixer<float> model(cfg, 2);
  load_encoder(dir / "enc.ckpt", model.encoder());
  CHECK(model.encoder().positions().values() == enc.positions().values());
  CHECK_THROWS_AS(load_encoder(dir / "missing.ckpt", model.encoder()), PrerequisiteError);
  write_file_atomic(dir / "junk.ckpt", "AMCK garbage");
  CHECK_THROWS_AS(load_encoder(dir / "junk.ckpt", model.encoder()), FormatError);
}
