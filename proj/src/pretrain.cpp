#include "attmix/pretrain.hpp"

#include <cmath>

#include "attmix/checkpoint.hpp"
#include "attmix/error.hpp"
#include "attmix/log.hpp"
#include "attmix/rng.hpp"

namespace attmix {

void PretrainConfig::validate() const {
  if (steps == 0) throw ConfigError("pretraining needs at least one step");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("pretraining learning rate must be positive");
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"steps", c.steps}, {"lr", c.lr}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.seed = j.value("seed", c.seed);
}

double mae_pretrain_step(ViTEncoder<float>& encoder, Adamax<float>& opt, const Tensor<float>& tokens,
                         double mask_ratio, std::uint64_t mask_seed) {
  const PatchMask mask = mask_patches(encoder.config().n_patches(), mask_ratio, mask_seed);
  Tape<float> tape;
  Var<float> loss = encoder.reconstruction_loss(tape, tokens, mask);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw TrainingError("non-finite reconstruction loss");
  opt.zero_grad();
  tape.backward(loss);
  opt.step();
  return value;
}

std::vector<double> pretrain_encoder(ViTEncoder<float>& encoder,
                                     const std::vector<std::shared_ptr<const Tensor<float>>>& scans,
                                     const PretrainConfig& cfg) {
  cfg.validate();
  if (scans.empty()) throw ValidationError("no scans to pretrain on");
  std::vector<NamedParam<float>> params;
  encoder.collect_encoder(params);
  for (NamedParam<float>& p : params) p.tensor->set_requires_grad(true);
  Adamax<float> opt(params, AdamaxOptions{cfg.lr});
  Rng order_rng(derive_seed(cfg.seed, "pretrain-order"));
  std::vector<std::size_t> order;
  std::vector<double> losses;
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    if (step % scans.size() == 0) {
      order = order_rng.permutation(scans.size());
    }
    const Tensor<float>& tokens = *scans[order[step % scans.size()]];
    const std::uint64_t mask_seed = derive_seed(cfg.seed, "mask-" + std::to_string(step));
    losses.push_back(mae_pretrain_step(encoder, opt, tokens, encoder.config().mask_ratio, mask_seed));
    log_debug("pretrain step " + std::to_string(step + 1) + " loss " + std::to_string(losses.back()));
  }
  opt.zero_grad();
  return losses;
}

void save_encoder(const std::filesystem::path& path, ViTEncoder<float>& encoder) {
  std::vector<NamedParam<float>> params;
  encoder.collect_encoder(params);
  save_checkpoint(path, nlohmann::json{{"encoder", encoder.config()}}, params);
}

void load_encoder(const std::filesystem::path& path, ViTEncoder<float>& encoder) {
  if (!std::filesystem::exists(path)) {
    throw PrerequisiteError("encoder checkpoint not found: " + path.string());
  }
  const Checkpoint ckpt = load_checkpoint(path);
  std::vector<NamedParam<float>> params;
  encoder.collect_encoder(params);
  restore_parameters(ckpt, params, true);
}

}  // namespace attmix
