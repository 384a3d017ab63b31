#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <vector>

#include "attmix/encoder.hpp"
#include "attmix/optim.hpp"
#include "json.hpp"

namespace attmix {

struct PretrainConfig {
  std::size_t steps = 100;
  double lr = 1e-3;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);

// One masked-reconstruction step on a single token sequence; returns the loss.
double mae_pretrain_step(ViTEncoder<float>& encoder, Adamax<float>& opt, const Tensor<float>& tokens,
                         double mask_ratio, std::uint64_t mask_seed);

// Cycles through the scans in a seeded order, one scan per step. Returns the
// loss of every step.
std::vector<double> pretrain_encoder(ViTEncoder<float>& encoder,
                                     const std::vector<std::shared_ptr<const Tensor<float>>>& scans,
                                     const PretrainConfig& cfg);

// Encoder checkpoints hold only the transformer parameters ("encoder.*").
void save_encoder(const std::filesystem::path& path, ViTEncoder<float>& encoder);
void load_encoder(const std::filesystem::path& path, ViTEncoder<float>& encoder);

}  // namespace attmix
